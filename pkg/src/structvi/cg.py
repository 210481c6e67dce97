"""Chain-graph variational approximation.

Q(t) = (1/Z_Q) Π_j θ(x_j | u_j) Π_k ψ_k(c_k), with every ψ_k summing to one.
CPD and potential blocks are updated by exp-normalizing their energies
F[Q | block] - log Q(block) + log(parameter); since these are fixed-point
rather than exact maximizing steps, each update is damped geometrically
until the bound does not drop.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import _batch
from ._engine import contract, indicator
from .bn import DerivativeReport, run_batch
from .model import (NORMALIZATION_TOL, DirectedFamily, Evidence,
                    FactorizedModel, StructuralError, TableFactor)
from .structure import FitResult, OptimizerOptions, Structure


@dataclass(frozen=True, eq=False)
class CgApproximation:
    families: tuple[DirectedFamily, ...]
    potentials: tuple[TableFactor, ...] = ()
    log_zq: float = 0.0
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        object.__setattr__(self, "potentials", tuple(self.potentials))
        for k, psi in enumerate(self.potentials):
            if abs(float(psi.values.sum()) - 1.0) > NORMALIZATION_TOL:
                raise StructuralError(f"potential {k} does not sum to one")
        self.structure

    @property
    def factors(self) -> list[TableFactor]:
        return [f.cpt for f in self.families] + list(self.potentials)

    @property
    def parents(self) -> dict[int, tuple[int, ...]]:
        return {f.child: f.parents for f in self.families}

    @property
    def cards(self) -> dict[int, int]:
        out = {}
        for f in self.factors:
            out.update(zip(f.vars, f.cards))
        return out

    @property
    def structure(self) -> Structure:
        return Structure(self.parents, potentials=tuple(p.vars for p in self.potentials))

    def family(self, child: int) -> DirectedFamily:
        for f in self.families:
            if f.child == child:
                return f
        raise KeyError(child)

    def to_state(self) -> _batch.State:
        st = _batch.State(self.structure, self.cards, 1)
        for j, c in enumerate(st.children):
            st.set_theta(j, self.family(c).theta[None].copy())
        for k, psi in enumerate(self.potentials):
            st.set_psi(k, psi.table[None].copy())
        return st

    @classmethod
    def from_state(cls, state: _batch.State, b: int = 0, flags=()) -> "CgApproximation":
        fams = []
        for j, c in enumerate(state.children):
            vars = state.fam_vars[j]
            fams.append(DirectedFamily(c, vars[:-1], TableFactor(vars, state.shape(j), state.theta[j][b])))
        pots = [TableFactor(s, state.pot_shape(k), state.psi[k][b]) for k, s in enumerate(state.pots)]
        log_zq = float(_batch.log_partition_q(state)[b])
        return cls(tuple(fams), tuple(pots), log_zq, tuple(flags))

    @classmethod
    def random(cls, structure: Structure, t_cards, seed: int = 0, restart: int = 0) -> "CgApproximation":
        st = _batch.State(structure, dict(t_cards), restart + 1)
        _batch.random_init(st, [seed], restart + 1)
        return cls.from_state(st, restart)

    def rescaled(self, k: int, factor: float) -> "CgApproximation":
        """Multiply potential ``k`` by ``factor`` and renormalize it (a no-op on Q)."""
        psi = self.potentials[k]
        scaled = psi.table * factor
        new = TableFactor(psi.vars, psi.cards, scaled / scaled.sum())
        pots = self.potentials[:k] + (new,) + self.potentials[k + 1:]
        return type(self)(self.families, pots, self.log_zq, self.flags)


def posterior_chain_graph(p: FactorizedModel, ev: Evidence) -> CgApproximation:
    """P(T | o) of a directed ``p`` written as a chain graph.

    Unobserved variables keep their CPTs (observed parents sliced to their
    values); each observed variable becomes a potential over its unobserved
    parents, proportional to P(o_j | parents).
    """
    if not p.directed:
        raise StructuralError("posterior_chain_graph needs a directed model")
    p.check_evidence(ev)
    fams, pots = [], []
    for fam in p.families():
        idx = tuple(ev[v] if v in ev else slice(None) for v in fam.cpt.vars)
        keep = [(v, c) for v, c in zip(fam.cpt.vars, fam.cpt.cards) if v not in ev]
        table = fam.cpt.table[idx]
        vars = tuple(v for v, _ in keep)
        cards = [c for _, c in keep]
        if fam.child not in ev:
            fams.append(DirectedFamily(fam.child, vars[:-1], TableFactor(vars, cards, table)))
        elif vars:
            total = float(table.sum())
            if total <= 0:
                raise StructuralError(f"evidence on variable {fam.child} has probability zero")
            pots.append(TableFactor(vars, cards, table / total))
    q = CgApproximation(tuple(fams), tuple(pots))
    return CgApproximation(q.families, q.potentials, float(_batch.log_partition_q(q.to_state())[0]))


def _check(q: CgApproximation, p: FactorizedModel, ev: Evidence) -> None:
    p.check_evidence(ev)
    q.structure.check_targets(p.unobserved(ev))


def evaluate_bound_cg(q: CgApproximation, p: FactorizedModel, ev: Evidence,
                      c: Evidence | None = None) -> float:
    """F[Q | c] for a chain-graph Q (Z_Q recomputed from the tables)."""
    _check(q, p, ev)
    return float(_batch.bound(q.to_state(), _batch.Target([(p, ev)]), "cg", clamp=c)[0])


def _step(q: CgApproximation, p: FactorizedModel, ev: Evidence, damping: float, fn) -> CgApproximation:
    _check(q, p, ev)
    st = q.to_state()
    asc = _batch.Ascent(st, _batch.Target([(p, ev)]), "cg", OptimizerOptions(damping=damping))
    asc.cur = asc._bound()
    fn(asc, st)
    return CgApproximation.from_state(st, 0, q.flags + tuple(asc.flags[0]))


def update_cpd_cg(q: CgApproximation, p: FactorizedModel, ev: Evidence, j: int,
                  damping: float = 1.0) -> CgApproximation:
    """Damped update of the CPD of child ``j`` to its exact block maximizer."""
    return _step(q, p, ev, damping, lambda asc, st: asc._theta_step(st.index[j]))


def update_potential(q: CgApproximation, p: FactorizedModel, ev: Evidence, k: int,
                     damping: float = 1.0) -> CgApproximation:
    """Damped exp-normalized update of potential ``k``; the result sums to one."""
    return _step(q, p, ev, damping, lambda asc, st: asc._psi_step(k))


def fit_cg(p: FactorizedModel, ev: Evidence, structure: Structure,
           opts: OptimizerOptions = OptimizerOptions()) -> FitResult:
    """Round-robin CPD then potential updates, best of ``opts.restarts``."""
    if structure.hidden:
        raise StructuralError("chain-graph structures take no hidden variables")
    return run_batch("cg", [(p, ev)], structure, opts, [opts.seed], CgApproximation.from_state)[0]


def _masses(st: _batch.State, f: TableFactor | None, clamp) -> float:
    terms = [st.theta_term(j, False) for j in range(len(st.order))]
    terms += [st.psi_term(k, False) for k in range(len(st.pots))]
    terms += [indicator(v, st.cards[v], s) for v, s in clamp.items()]
    if f is not None:
        terms.append((f.vars, f.table[None, None], None))
    P, _ = contract(terms, (), st.cards)
    return float(P[0, 0])


def _expect(st, f, clamp=None) -> float:
    clamp = clamp or {}
    return _masses(st, f, clamp) / _masses(st, None, clamp)


def derivative_check_cg(q: CgApproximation, f: TableFactor, block: str, k: int,
                        index: Sequence[int], h: float = 1e-5) -> DerivativeReport:
    """∂E_Q[f] / ∂(parameter) versus central finite differences.

    ``block`` is ``"theta"`` (``k`` a child id, ``index`` = (u..., x)) or
    ``"psi"`` (``k`` a potential position, ``index`` over its scope). The
    analytic value is Q(a)/param(a) (E_Q[f | a] - E_Q[f]) with a the
    parameter's assignment; Z_Q is recomputed under the perturbation.
    """
    st = q.to_state()
    index = tuple(index)
    if block == "theta":
        pos = st.index[k]
        vars, arr = st.fam_vars[pos], st.theta[pos]
        setter = st.set_theta
    elif block == "psi":
        pos = k
        vars, arr = st.pots[k], st.psi[k]
        setter = st.set_psi
    else:
        raise ValueError("block must be 'theta' or 'psi'")
    clamp = dict(zip(vars, index))
    param = float(arr[(0,) + index])
    q_a = _masses(st, None, clamp) / _masses(st, None, {})
    analytic = q_a / param * (_expect(st, f, clamp) - _expect(st, f))
    vals = []
    for sign in (1, -1):
        new = arr.copy()
        new[(0,) + index] += sign * h
        setter(pos, new)
        vals.append(_expect(st, f))
    setter(pos, arr)
    return DerivativeReport(analytic, (vals[0] - vals[1]) / (2 * h))
