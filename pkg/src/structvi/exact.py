"""Exact inference by variable elimination, plus enumeration-based KL.

These routines are deliberately independent of the batched engine used by
the variational fitters, so they can serve as ground truth for them.
"""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .model import (Evidence, FactorizedModel, StructuralError, TableFactor,
                    _aligned, factor_marginalize, factor_product,
                    factor_restrict)

#: Largest joint state space the enumeration routines will touch.
ENUMERATION_CAP = 2 ** 20


def min_fill_order(scopes: Iterable[Sequence[int]], eliminate: Iterable[int]) -> list[int]:
    """Greedy min-fill elimination order, ties broken by lowest variable id."""
    todo = set(eliminate)
    adj: dict[int, set[int]] = {v: set() for v in todo}
    for s in scopes:
        for a in s:
            adj.setdefault(a, set())
            for b in s:
                if a != b:
                    adj[a].add(b)
    order = []
    while todo:
        best, best_fill = None, None
        for v in sorted(todo):
            nb = list(adj[v])
            fill = 0
            for i, a in enumerate(nb):
                for b in nb[i + 1:]:
                    if b not in adj[a]:
                        fill += 1
            if best_fill is None or fill < best_fill:
                best, best_fill = v, fill
                if fill == 0:
                    break
        nb = adj.pop(best)
        for a in nb:
            adj[a].discard(best)
            adj[a].update(nb - {a})
        todo.remove(best)
        order.append(best)
    return order


def eliminate(factors: Sequence[TableFactor], order: Sequence[int]) -> TableFactor:
    """Sum the product of ``factors`` over the variables in ``order``.

    The result is over the remaining variables, in increasing id order.
    """
    pool = list(factors)
    for x in order:
        bucket = [f for f in pool if x in f.vars]
        if not bucket:
            continue
        pool = [f for f in pool if x not in f.vars]
        prod = bucket[0]
        for f in bucket[1:]:
            prod = factor_product(prod, f)
        pool.append(factor_marginalize(prod, [v for v in prod.vars if v != x]))
    result = TableFactor.unit()
    for f in pool:
        result = factor_product(result, f)
    scope = tuple(sorted(result.vars))
    return TableFactor(scope, [result.card_of(v) for v in scope], _aligned(result, scope))


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def marginal(model: FactorizedModel, keep: Sequence[int], ev: Evidence | None = None,
             normalize: bool = True) -> TableFactor:
    """P(keep | ev) (or the unnormalized sum when ``normalize`` is false)."""
    ev = dict(ev or {})
    factors = [factor_restrict(f, ev) for f in model.factors]
    drop = [v.id for v in model.variables if v.id not in keep]
    res = eliminate(factors, min_fill_order([f.vars for f in factors], drop))
    keep = tuple(keep)
    table = _aligned(res, keep)
    table = np.broadcast_to(table, [model.cards[v] for v in keep])
    if normalize:
        total = table.sum()
        table = table / total if total > 0 else table
    return TableFactor(keep, [model.cards[v] for v in keep], table)


def log_partition(model: FactorizedModel) -> float:
    order = min_fill_order([f.vars for f in model.factors], range(model.n))
    return _log(float(eliminate(model.factors, order).values[0]))


def log_evidence(model: FactorizedModel, ev: Evidence) -> float:
    """log P(o): the evidence-restricted total mass minus log Z_P."""
    model.check_evidence(ev)
    factors = [factor_restrict(f, ev) for f in model.factors]
    order = min_fill_order([f.vars for f in factors], range(model.n))
    total = float(eliminate(factors, order).values[0])
    if total <= 0:
        return -math.inf
    return math.log(total) - model.log_z


def joint_table(factors: Iterable[TableFactor], vars: Sequence[int], cards: Sequence[int]) -> np.ndarray:
    """Full product of ``factors`` as a dense array over ``vars`` (enumeration)."""
    size = int(np.prod(cards, dtype=np.int64)) if cards else 1
    if size > ENUMERATION_CAP:
        raise StructuralError(f"joint space of {size} states exceeds the enumeration cap")
    out = np.ones(cards)
    for f in factors:
        out = out * _aligned(f, vars)
    return out


def _sliced_joint(p: FactorizedModel, ev: Evidence) -> tuple[list[int], np.ndarray]:
    t_vars = p.unobserved(ev)
    cards = [p.cards[v] for v in t_vars]
    sliced = []
    for f in p.factors:
        idx = tuple(ev[v] if v in ev else slice(None) for v in f.vars)
        rest = [(v, c) for v, c in zip(f.vars, f.cards) if v not in ev]
        sliced.append(TableFactor([v for v, _ in rest], [c for _, c in rest], f.table[idx]))
    return t_vars, joint_table(sliced, t_vars, cards)


def log_joint_table(p: FactorizedModel, ev: Evidence) -> tuple[list[int], np.ndarray]:
    """(T, log P(T, o)) by full enumeration; -inf where the product is zero."""
    t_vars, joint = _sliced_joint(p, ev)
    with np.errstate(divide="ignore"):
        return t_vars, np.log(joint) - p.log_z


def posterior_table(p: FactorizedModel, ev: Evidence) -> tuple[list[int], np.ndarray]:
    """(T, P(T | o)) by full enumeration."""
    t_vars, joint = _sliced_joint(p, ev)
    total = joint.sum()
    if total <= 0:
        raise StructuralError("evidence has probability zero")
    return t_vars, joint / total


def approximation_table(q, t_vars: Sequence[int], t_cards: Sequence[int]) -> np.ndarray:
    """Q(T) by enumeration from ``q.factors``; ids outside ``t_vars`` are summed out."""
    factors = list(q.factors)
    extra: dict[int, int] = {}
    for f in factors:
        for v, c in zip(f.vars, f.cards):
            if v not in t_vars:
                extra[v] = c
    vars = list(t_vars) + sorted(extra)
    cards = list(t_cards) + [extra[v] for v in sorted(extra)]
    joint = joint_table(factors, vars, cards)
    if extra:
        joint = joint.sum(axis=tuple(range(len(t_vars), len(vars))))
    return joint / joint.sum()


def kl_tables(q: np.ndarray, p: np.ndarray) -> float:
    """Σ q log(q/p) with 0 log 0 = 0 and +inf where q > 0 = p."""
    q = q.reshape(-1)
    p = p.reshape(-1)
    support = q > 0
    if np.any(p[support] <= 0):
        return math.inf
    return float(np.sum(q[support] * (np.log(q[support]) - np.log(p[support]))))


def bound_from_tables(q: np.ndarray, log_joint: np.ndarray) -> float:
    """Σ_t q(t) (log P(t, o) - log q(t)) with 0 log 0 = 0; -inf if q > 0 where P = 0."""
    q = q.reshape(-1)
    lj = log_joint.reshape(-1)
    support = q > 0
    if np.any(np.isneginf(lj[support])):
        return -math.inf
    return float(np.sum(q[support] * (lj[support] - np.log(q[support]))))


def exact_kl(q, p: FactorizedModel, ev: Evidence) -> float:
    """D(Q(T) || P(T | o)) by full enumeration.

    ``q`` is anything exposing ``factors`` (TableFactors over p's unobserved
    variable ids, optionally over extra hidden ids, which are marginalized).
    """
    t_vars, post = posterior_table(p, ev)
    qt = approximation_table(q, t_vars, [p.cards[v] for v in t_vars])
    return kl_tables(qt, post)
