"""Batched sum-product contraction with an additive expectation channel.

A *term* is ``(vars, p, g)``:

* ``p`` is a multiplicative table of shape ``(B, 1, *dims)`` or ``None`` (= 1);
* ``g`` is an additive table of shape ``(B, 2, *dims)`` or ``None`` (= 0).

Channel 0 of ``g`` holds finite log-values; an optional channel 1 flags cells
where the underlying factor is exactly zero (its log is -inf). Tables with no
zeros carry only channel 0, so ``g`` may be ``(B, 1, *dims)``.  ``dims`` may contain 1s
that broadcast, and the batch size may be 1 to broadcast across a batch.

:func:`contract` returns, over the ``keep`` variables,

* ``P(keep) = Σ_rest Π p`` and
* ``G(keep) = Σ_rest Π p · Σ g / P(keep)``, i.e. the conditional expectation of
  the summed additive terms under the normalized product (0 where P = 0).

Internally every intermediate term stores ``g`` in this conditional
("unweighted") form, which is what keeps one elimination step to a single
product, one sum of ``g`` tables, and one division.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .exact import min_fill_order


@lru_cache(maxsize=16384)
def _plan(scopes: tuple[tuple[int, ...], ...], keep: tuple[int, ...]):
    universe = set()
    for s in scopes:
        universe.update(s)
    order = min_fill_order(scopes, universe - set(keep))
    work = list(scopes)
    alive = [True] * len(work)
    steps = []
    for x in order:
        idx = tuple(k for k, s in enumerate(work) if alive[k] and x in s)
        union = set()
        for k in idx:
            union.update(work[k])
            alive[k] = False
        union = tuple(sorted(union))
        out = tuple(v for v in union if v != x)
        work.append(out)
        alive.append(True)
        steps.append((x, idx, union, union.index(x)))
    final = tuple(k for k in range(len(work)) if alive[k])
    return steps, final


def _align(arr: np.ndarray, vars: Sequence[int], target: Sequence[int]) -> np.ndarray:
    if tuple(vars) == tuple(target):
        return arr
    pos = {v: k for k, v in enumerate(target)}
    perm = sorted(range(len(vars)), key=lambda k: pos[vars[k]])
    a = arr.transpose((0, 1) + tuple(2 + k for k in perm))
    shape = [arr.shape[0], arr.shape[1]] + [1] * len(target)
    for k in perm:
        shape[2 + pos[vars[k]]] = arr.shape[2 + k]
    return a.reshape(shape)


def _combine(group, union):
    P = None
    Gs = None
    for vars, p, g in group:
        if p is not None:
            a = _align(p, vars, union)
            P = a if P is None else P * a
        if g is not None:
            a = _align(g, vars, union)
            if Gs is None:
                Gs = a
            else:
                Gs = add_g(Gs, a)
    if P is None:
        P = np.ones((1, 1) + (1,) * len(union))
    return P, Gs


def _widen(g: np.ndarray) -> np.ndarray:
    if g.shape[1] == 2:
        return g
    return np.concatenate([g, np.zeros_like(g)], axis=1)


def add_g(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sum of two additive tables with possibly different channel counts."""
    if a.shape[1] == b.shape[1]:
        return a + b
    return _widen(a) + _widen(b)


def _sum_axis(a: np.ndarray, axis: int, card: int) -> np.ndarray:
    if a.shape[axis] == card:
        return a.sum(axis=axis)
    return a.squeeze(axis) * card


def _ratio(E: np.ndarray, P: np.ndarray) -> np.ndarray:
    shape = np.broadcast_shapes(E.shape, P.shape)
    out = np.zeros(shape)
    np.divide(E, P, out=out, where=np.broadcast_to(P > 0, shape))
    return out


def contract(terms: Sequence[tuple], keep: Sequence[int], cards: Mapping[int, int]):
    """Eliminate every variable not in ``keep``; returns ``(P, G)`` over ``keep``.

    ``P`` has shape ``(B, 1, *keep_cards)``; ``G`` has shape
    ``(B, C, *keep_cards)`` with C in {1, 2}, or is ``None`` when no term
    carries ``g``.
    """
    keep = tuple(keep)
    steps, final = _plan(tuple(tuple(t[0]) for t in terms), keep)
    work = list(terms)
    for x, idx, union, xpos in steps:
        P, Gs = _combine([work[k] for k in idx], union)
        ax = 2 + xpos
        card = cards[x]
        out = union[:xpos] + union[xpos + 1:]
        Pout = _sum_axis(P, ax, card)
        if Gs is None:
            work.append((out, Pout, None))
        else:
            E = P * Gs
            Eout = _sum_axis(E, ax, card)
            work.append((out, Pout, _ratio(Eout, Pout)))
    P, Gs = _combine([work[k] for k in final], keep)
    kcards = tuple(cards[v] for v in keep)
    P = np.broadcast_to(P, P.shape[:2] + kcards)
    if Gs is not None:
        shape = (max(P.shape[0], Gs.shape[0]), Gs.shape[1]) + kcards
        Gs = np.where(np.broadcast_to(P > 0, shape), np.broadcast_to(Gs, shape), 0.0)
    return P, Gs


def expectation(G: np.ndarray) -> np.ndarray:
    """Collapse the channels of ``G`` into values with -inf where a zero was hit."""
    if G.shape[1] == 1:
        return G[:, 0]
    return np.where(G[:, 1] > 0, -np.inf, G[:, 0])


def log_terms(table: np.ndarray) -> np.ndarray:
    """Additive table for ``log table`` (batched ``(B, *dims)`` input)."""
    zero = table <= 0
    if not zero.any():
        return np.log(table)[:, None]
    fin = np.log(np.where(zero, 1.0, table))
    return np.stack([fin, zero.astype(float)], axis=1)


def neg_self_log(table: np.ndarray) -> np.ndarray:
    """Additive table for ``-log table`` of a factor that is also a multiplicative term.

    Cells where ``table == 0`` carry zero weight, so 0 log 0 = 0 applies and
    no zero flag is needed.
    """
    return -np.log(np.where(table > 0, table, 1.0))[:, None]


def indicator(var: int, card: int, state: int):
    a = np.zeros((1, 1, card))
    a[0, 0, state] = 1.0
    return ((var,), a, None)
