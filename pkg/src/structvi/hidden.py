"""Hidden-variable variational approximation.

Q is a Bayesian network over T ∪ V, where V are auxiliary variables that
never appear in P. Its marginal Q(T) can be far richer than any tractable
structure over T alone (a mixture of mean fields is the simplest case).
The entropy of Q(T) is not tractable, so -H(V|T) is relaxed with
-log x ≥ -λx + log λ + 1 using a factored table R(t, v) = Π_j ρ_j, which
gives the functional

    G[Q, R] = E_Q[log P(T, o) - log Q(T, V) + log R(T, V)] - Σ_{t,v} Q(t) R(t, v) + 1

with G ≤ F[Q(T)] ≤ log P(o).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _batch
from .bn import BnApproximation, run_batch
from .exact import ENUMERATION_CAP, bound_from_tables, joint_table, log_joint_table
from .model import Evidence, FactorizedModel, StructuralError, TableFactor
from .structure import FitResult, OptimizerOptions, Structure


@dataclass(frozen=True, eq=False)
class HiddenApproximation:
    """``q`` over T ∪ V plus positive, unnormalized ρ tables keyed by child id."""
    q: BnApproximation
    rho: Mapping[int, TableFactor] = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        rho = dict(self.rho)
        for f in self.q.families:
            if f.child not in rho:
                rho[f.child] = TableFactor(f.cpt.vars, f.cpt.cards, np.ones(f.cpt.table.shape))
            r = rho[f.child]
            if r.vars != f.cpt.vars or np.any(r.table <= 0):
                raise StructuralError(f"rho block of {f.child} must be positive over its family scope")
        object.__setattr__(self, "rho", rho)

    @property
    def factors(self) -> list[TableFactor]:
        return self.q.factors

    @property
    def hidden(self) -> Mapping[int, int]:
        return self.q.hidden

    @property
    def structure(self) -> Structure:
        return self.q.structure

    def to_state(self) -> _batch.State:
        st = self.q.to_state()
        st.init_rho()
        for j, c in enumerate(st.children):
            st.set_rho(j, self.rho[c].table[None].copy())
        return st

    @classmethod
    def from_state(cls, state: _batch.State, b: int = 0, flags=()) -> "HiddenApproximation":
        q = BnApproximation.from_state(state, b)
        rho = {}
        if state.rho is not None:
            for j, c in enumerate(state.children):
                rho[c] = TableFactor(state.fam_vars[j], state.shape(j), state.rho[j][b])
        return cls(q, rho, tuple(flags))

    @classmethod
    def random(cls, structure: Structure, t_cards, seed: int = 0, restart: int = 0) -> "HiddenApproximation":
        """Random θ as in a fit with the same seed, and ρ ≡ 1."""
        return cls(BnApproximation.random(structure, t_cards, seed, restart))


def mixture_mean_field(t_vars: Sequence[int], k: int) -> Structure:
    """One hidden V with ``k`` states, parent of every variable in ``t_vars``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    v = -1
    parents = {v: ()}
    parents.update({int(t): (v,) for t in t_vars})
    return Structure(parents, hidden={v: k}, hidden_names={v: "V"})


def _check(h: HiddenApproximation, p: FactorizedModel, ev: Evidence) -> None:
    p.check_evidence(ev)
    h.structure.check_targets(p.unobserved(ev))


def evaluate_G(h: HiddenApproximation, p: FactorizedModel, ev: Evidence,
               c: Evidence | None = None) -> float:
    """G[Q, R | c]; ``c`` may bind variables of T and V."""
    _check(h, p, ev)
    return float(_batch.bound(h.to_state(), _batch.Target([(p, ev)]), "hidden", clamp=c)[0])


def expected_R_sum(h: HiddenApproximation, c: Evidence | None = None) -> float:
    """Σ_{t,v} Q(t | c) R(t, v), by elimination over T ∪ V and a renamed copy of V."""
    return float(_batch.expected_r_sum(h.to_state(), c)[0])


def energy_table_h(h: HiddenApproximation, p: FactorizedModel, ev: Evidence, j: int,
                   reduced: bool = True) -> np.ndarray:
    _check(h, p, ev)
    st = h.to_state()
    E, _ = _batch.family_energy(st, _batch.Target([(p, ev)]), st.index[j], "hidden", reduced)
    return np.array(E[0])


def update_theta_h(h: HiddenApproximation, p: FactorizedModel, ev: Evidence, j: int,
                   reduced: bool = True) -> HiddenApproximation:
    """Exp-normalized update of family ``j`` (child id, in T or V) for fixed R."""
    _check(h, p, ev)
    st = h.to_state()
    k = st.index[j]
    new, fb = _batch.update_family(st, _batch.Target([(p, ev)]), k, "hidden", reduced)
    st.set_theta(k, new)
    flags = h.flags + ((f"uniform fallback for family {j}",) if fb[0] else ())
    return HiddenApproximation.from_state(st, 0, flags)


def update_rho(h: HiddenApproximation, j: int) -> HiddenApproximation:
    """Closed-form maximization of G over ρ block ``j`` (child id)."""
    st = h.to_state()
    k = st.index[j]
    new, bad = _batch.update_rho(st, k)
    st.set_rho(k, new)
    flags = h.flags + ((f"rho entries of family {j} left unchanged",) if bad[0] else ())
    return HiddenApproximation.from_state(st, 0, flags)


def fit_hidden(p: FactorizedModel, ev: Evidence, structure: Structure,
               opts: OptimizerOptions = OptimizerOptions()) -> FitResult:
    """Alternating θ and ρ sweeps on G, best of ``opts.restarts``.

    ``result.bound`` is G. When T ∪ V is small enough to enumerate,
    ``result.marginal_bound`` holds F[Q(T)] of the winning restart.
    """
    if structure.potentials:
        raise StructuralError("hidden-variable structures take no potentials")
    res = run_batch("hidden", [(p, ev)], structure, opts, [opts.seed], HiddenApproximation.from_state)[0]
    if _enumerable(res.q, p, ev):
        res.marginal_bound = marginal_bound(res.q, p, ev)
    return res


# -- enumeration diagnostics ------------------------------------------------

def _enumerable(h: HiddenApproximation, p: FactorizedModel, ev: Evidence) -> bool:
    size = 1
    for c in h.q.cards.values():
        size *= c
    return size <= ENUMERATION_CAP


def _joint_tv(h: HiddenApproximation, p: FactorizedModel, ev: Evidence):
    t_vars, logp = log_joint_table(p, ev)
    v_vars = sorted(h.hidden)
    cards = [p.cards[v] for v in t_vars] + [h.hidden[v] for v in v_vars]
    q = joint_table(h.q.factors, list(t_vars) + v_vars, cards)
    return q / q.sum(), logp, len(t_vars)


def marginal_bound(h: HiddenApproximation, p: FactorizedModel, ev: Evidence) -> float:
    """F[Q(T)] for the V-marginal of Q, by enumeration."""
    _check(h, p, ev)
    q, logp, nt = _joint_tv(h, p, ev)
    return bound_from_tables(q.sum(axis=tuple(range(nt, q.ndim))), logp)


def info_decomposition(h: HiddenApproximation, p: FactorizedModel, ev: Evidence) -> tuple[float, float]:
    """(E_{Q(v)} F[Q | v], I(T; V)) by enumeration; they sum to F[Q(T)]."""
    _check(h, p, ev)
    q, logp, nt = _joint_tv(h, p, ev)
    qtv = q.reshape(int(np.prod(q.shape[:nt], dtype=np.int64)), -1)
    qt = qtv.sum(axis=1)
    qv = qtv.sum(axis=0)
    avg = 0.0
    for v in np.flatnonzero(qv > 0):
        cond = bound_from_tables(qtv[:, v] / qv[v], logp)
        if cond == -math.inf:
            avg = -math.inf
            break
        avg += qv[v] * cond
    mask = qtv > 0
    outer = np.outer(qt, qv)
    mi = float(np.sum(qtv[mask] * (np.log(qtv[mask]) - np.log(outer[mask]))))
    return avg, mi
