"""Structured variational approximation with a Bayesian-network Q.

Q(t) = Π_j θ(x_j | u_j). The bound F[Q] = E_Q[log P(T, o) - log Q(T)] is
raised by asynchronous family updates θ(·|u_j) ∝ exp(E(x_j, u_j)), each of
which exactly maximizes F over one column and so never lowers it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import _batch
from ._engine import contract, expectation, indicator
from .model import (DirectedFamily, Evidence, FactorizedModel,
                    StructuralError, TableFactor, d_separated_dag)
from .structure import FitResult, OptimizerOptions, Structure


@dataclass(frozen=True, eq=False)
class BnApproximation:
    """Directed approximating model; hidden (negative-id) variables allowed."""
    families: tuple[DirectedFamily, ...]
    hidden: Mapping[int, int] = field(default_factory=dict)
    hidden_names: Mapping[int, str] = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        self.structure  # validates acyclicity

    @property
    def factors(self) -> list[TableFactor]:
        return [f.cpt for f in self.families]

    @property
    def parents(self) -> dict[int, tuple[int, ...]]:
        return {f.child: f.parents for f in self.families}

    @property
    def cards(self) -> dict[int, int]:
        out = {}
        for f in self.families:
            out.update(zip(f.cpt.vars, f.cpt.cards))
        return out

    @property
    def structure(self) -> Structure:
        return Structure(self.parents, hidden=self.hidden, hidden_names=self.hidden_names)

    def family(self, child: int) -> DirectedFamily:
        for f in self.families:
            if f.child == child:
                return f
        raise KeyError(child)

    def t_cards(self) -> dict[int, int]:
        return {v: c for v, c in self.cards.items() if v not in self.hidden}

    def to_state(self) -> _batch.State:
        st = _batch.State(self.structure, self.t_cards(), 1)
        for j, c in enumerate(st.children):
            st.set_theta(j, self.family(c).theta[None].copy())
        return st

    @classmethod
    def from_state(cls, state: _batch.State, b: int = 0, flags=()) -> "BnApproximation":
        fams = []
        for j, c in enumerate(state.children):
            vars = state.fam_vars[j]
            cpt = TableFactor(vars, state.shape(j), state.theta[j][b])
            fams.append(DirectedFamily(c, vars[:-1], cpt))
        s = state.structure
        return cls(tuple(fams), s.hidden, s.hidden_names, tuple(flags))

    @classmethod
    def random(cls, structure: Structure, t_cards: Mapping[int, int], seed: int = 0,
               restart: int = 0) -> "BnApproximation":
        """Flat-Dirichlet parameters, identical to restart ``restart`` of a fit seeded with ``seed``."""
        st = _batch.State(structure, dict(t_cards), restart + 1)
        _batch.random_init(st, [seed], restart + 1)
        return cls.from_state(st, restart)


@dataclass(frozen=True)
class RelevanceSets:
    """Keyed by child id: relevant target factor indices (fp) and positions in ``q.families`` (fq)."""
    fp: dict[int, list[int]]
    fq: dict[int, list[int]]


def relevance_sets(q: BnApproximation, p: FactorizedModel) -> RelevanceSets:
    qvars = set(q.cards)
    parents = q.parents
    fp, fq = {}, {}
    for f in q.families:
        c, u = f.child, f.parents
        fp[c] = [i for i, phi in enumerate(p.factors)
                 if (d := [v for v in phi.vars if v in qvars]) and not d_separated_dag(parents, c, d, u)]
        fq[c] = [k for k, g in enumerate(q.families)
                 if g.child != c and not d_separated_dag(parents, c, (g.child,) + g.parents, u)]
    return RelevanceSets(fp, fq)


def _check(q: BnApproximation, p: FactorizedModel, ev: Evidence) -> None:
    p.check_evidence(ev)
    q.structure.check_targets(p.unobserved(ev))


def evaluate_bound(q: BnApproximation, p: FactorizedModel, ev: Evidence,
                   c: Evidence | None = None) -> float:
    """F[Q | c]; with ``c`` empty this is the lower bound F[Q] on log P(o)."""
    _check(q, p, ev)
    st = q.to_state()
    return float(_batch.bound(st, _batch.Target([(p, ev)]), "bn", clamp=c)[0])


def energy_table(q: BnApproximation, p: FactorizedModel, ev: Evidence, j: int,
                 reduced: bool = True) -> np.ndarray:
    """Energies for every (u_j, x_j) of family ``j`` (child id), shaped like its cpt."""
    _check(q, p, ev)
    st = q.to_state()
    E, _ = _batch.family_energy(st, _batch.Target([(p, ev)]), st.index[j], "bn", reduced)
    return np.array(E[0])


def energy_bn(q: BnApproximation, p: FactorizedModel, ev: Evidence, j: int, x_j: int,
              u_j: Sequence[int] = (), reduced: bool = True) -> float:
    return float(energy_table(q, p, ev, j, reduced)[tuple(u_j) + (x_j,)])


def _replace(q: BnApproximation, st: _batch.State, j: int, flags=()) -> BnApproximation:
    c = st.children[j]
    fam = DirectedFamily(c, st.fam_vars[j][:-1], TableFactor(st.fam_vars[j], st.shape(j), st.theta[j][0]))
    fams = tuple(fam if f.child == c else f for f in q.families)
    return type(q)(fams, q.hidden, q.hidden_names, q.flags + tuple(flags))


def update_family(q: BnApproximation, p: FactorizedModel, ev: Evidence, j: int,
                  reduced: bool = True) -> BnApproximation:
    """One exp-normalized column update of family ``j`` (child id)."""
    _check(q, p, ev)
    st = q.to_state()
    k = st.index[j]
    new, fb = _batch.update_family(st, _batch.Target([(p, ev)]), k, "bn", reduced)
    st.set_theta(k, new)
    return _replace(q, st, k, [f"uniform fallback for family {j}"] if fb[0] else [])


def run_batch(kind: str, problems, structure: Structure, opts: OptimizerOptions,
              seeds: Sequence[int], convert: Callable, reduced: bool = True) -> list[FitResult]:
    """Fit ``structure`` to every (p, ev) in ``problems`` with all restarts batched."""
    if len(seeds) != len(problems):
        raise ValueError("one seed per problem")
    for p, ev in problems:
        p.check_evidence(ev)
        structure.check_targets(p.unobserved(ev))
    R = opts.restarts
    target = _batch.Target(problems, repeat=R)
    st = _batch.State(structure, target.cards, len(problems) * R)
    _batch.random_init(st, seeds, R)
    asc = _batch.Ascent(st, target, kind, opts, reduced).run()
    final = asc.cur if opts.trace == "update" else _batch.bound(st, target, kind)
    results = []
    for n in range(len(problems)):
        block = final[n * R:(n + 1) * R]
        best = int(np.argmax(np.where(np.isnan(block), -np.inf, block)))
        b = n * R + best
        results.append(FitResult(
            q=convert(st, b, asc.flags[b]),
            bound=float(final[b]),
            trace=list(asc.traces[b]),
            restart_index=best,
            restart_bounds=[float(x) for x in block],
            traces=[list(t) for t in asc.traces[n * R:(n + 1) * R]],
            flags=[f"restart {r}: {m}" for r in range(R) for m in asc.flags[n * R + r]],
        ))
    return results


def fit(p: FactorizedModel, ev: Evidence, structure: Structure | None = None,
        opts: OptimizerOptions = OptimizerOptions()) -> FitResult:
    """Best-of-restarts coordinate ascent on F[Q] (mean field when ``structure`` is None)."""
    if structure is None:
        structure = Structure.mean_field(p.unobserved(ev))
    if structure.potentials or structure.hidden:
        raise StructuralError("a Bayesian-network structure has no potentials or hidden variables")
    return run_batch("bn", [(p, ev)], structure, opts, [opts.seed], BnApproximation.from_state)[0]


@dataclass(frozen=True)
class DerivativeReport:
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric), 1e-12)
        return abs(self.analytic - self.numeric) / scale


def _raw_bound(st: _batch.State, target: _batch.Target) -> float:
    """F as a polynomial in unconstrained θ: Σ_t Πθ (log P(t, o) - log Πθ)."""
    terms = [st.theta_term(k, True) for k in range(len(st.order))] + target.terms
    P, G = contract(terms, (), st.cards)
    mass = float(P[0, 0])
    return mass * (float(expectation(G)[0]) - float(target.log_zp[0]))


def _raw_expectation(st: _batch.State, f: TableFactor, clamp=None) -> tuple[float, float]:
    """(Σ_t Πθ f(t) 1[c], Σ_t Πθ 1[c]) without normalization."""
    terms = [st.theta_term(k, False) for k in range(len(st.order))]
    terms += [indicator(v, st.cards[v], s) for v, s in (clamp or {}).items()]
    P0, _ = contract(terms, (), st.cards)
    P1, _ = contract(terms + [(f.vars, f.table[None, None], None)], (), st.cards)
    return float(P1[0, 0]), float(P0[0, 0])


def derivative_check(q: BnApproximation, p: FactorizedModel, ev: Evidence, j: int, x_j: int,
                     u_j: Sequence[int] = (), f: TableFactor | None = None,
                     h: float = 1e-5) -> DerivativeReport:
    """Analytic ∂/∂θ(x_j|u_j) versus central finite differences.

    With ``f`` None the derivative is of F[Q]:
    Q(u_j) (F[Q | x_j, u_j] - log Q(x_j, u_j) - 1).
    With a table ``f`` it is of E_Q[f]: Q(u_j) E_{Q(·|x_j, u_j)}[f].
    θ entries are treated as free coordinates (no renormalization).
    """
    _check(q, p, ev)
    target = _batch.Target([(p, ev)])
    st = q.to_state()
    k = st.index[j]
    fam = q.family(j)
    u_clamp = dict(zip(fam.parents, u_j))
    c_clamp = dict(u_clamp)
    c_clamp[j] = x_j
    one = TableFactor((), (), 1.0)
    _, q_u = _raw_expectation(st, one, u_clamp)
    if f is None:
        theta = float(fam.theta[tuple(u_j) + (x_j,)])
        cond = float(_batch.bound(st, target, "bn", clamp=c_clamp)[0])
        analytic = q_u * (cond - math.log(q_u * theta) - 1.0)
        value = lambda s: _raw_bound(s, target)
    else:
        num, den = _raw_expectation(st, f, c_clamp)
        analytic = q_u * num / den
        value = lambda s: _raw_expectation(s, f)[0]
    idx = (0,) + tuple(u_j) + (x_j,)
    vals = []
    for sign in (1, -1):
        arr = st.theta[k].copy()
        arr[idx] += sign * h
        s = q.to_state()
        s.set_theta(k, arr)
        vals.append(value(s))
    return DerivativeReport(analytic, (vals[0] - vals[1]) / (2 * h))
