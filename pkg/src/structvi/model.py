"""Discrete variables, dense factor tables, directed structure and d-separation.

Tables are stored row-major over their scope with the last scope variable
varying fastest, so ``factor.values[k]`` for a flat index ``k`` corresponds to
the assignment whose digits (in mixed radix ``cards``) spell out ``k``.
"""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

#: Evidence maps a variable id to its observed state index.
Evidence = Mapping[int, int]

NORMALIZATION_TOL = 1e-9


class StructuralError(ValueError):
    """Raised when scopes, cardinalities or graph structure are inconsistent."""


@dataclass(frozen=True)
class Variable:
    id: int
    name: str
    cardinality: int

    def __post_init__(self):
        if self.cardinality < 2:
            raise StructuralError(
                f"variable {self.name!r} needs cardinality >= 2, got {self.cardinality}")


class TableFactor:
    """Dense nonnegative table over an ordered scope of variable ids."""

    __slots__ = ("vars", "cards", "table")

    def __init__(self, vars: Sequence[int], cards: Sequence[int], values):
        vars = tuple(int(v) for v in vars)
        cards = tuple(int(c) for c in cards)
        if len(set(vars)) != len(vars):
            raise StructuralError(f"repeated variable in scope {vars}")
        if len(vars) != len(cards):
            raise StructuralError("scope and cardinality lengths differ")
        table = np.asarray(values, dtype=float)
        size = int(np.prod(cards, dtype=np.int64)) if cards else 1
        if table.size != size:
            raise StructuralError(
                f"factor over {vars} needs {size} values, got {table.size}")
        table = table.reshape(cards)
        if np.any(table < 0) or np.any(np.isnan(table)):
            raise StructuralError("factor entries must be nonnegative reals")
        table.flags.writeable = False
        self.vars = vars
        self.cards = cards
        self.table = table

    @classmethod
    def unit(cls) -> "TableFactor":
        return cls((), (), 1.0)

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the table."""
        return self.table.reshape(-1)

    @property
    def strides(self) -> tuple[int, ...]:
        out = []
        s = 1
        for c in reversed(self.cards):
            out.append(s)
            s *= c
        return tuple(reversed(out))

    def card_of(self, var: int) -> int:
        return self.cards[self.vars.index(var)]

    def __mul__(self, other: "TableFactor") -> "TableFactor":
        return factor_product(self, other)

    def __repr__(self):
        return f"TableFactor(vars={self.vars}, values={self.values.tolist()})"


def _aligned(f: TableFactor, target: Sequence[int]) -> np.ndarray:
    """View of ``f.table`` transposed and padded with unit axes to ``target`` order."""
    pos = {v: k for k, v in enumerate(target)}
    order = sorted(range(len(f.vars)), key=lambda k: pos[f.vars[k]])
    t = f.table.transpose(order)
    shape = [1] * len(target)
    for k in order:
        shape[pos[f.vars[k]]] = f.cards[k]
    return t.reshape(shape)


def factor_product(f: TableFactor, g: TableFactor) -> TableFactor:
    cards = dict(zip(f.vars, f.cards))
    for v, c in zip(g.vars, g.cards):
        if cards.setdefault(v, c) != c:
            raise StructuralError(f"cardinality mismatch for variable {v}")
    scope = f.vars + tuple(v for v in g.vars if v not in f.vars)
    table = _aligned(f, scope) * _aligned(g, scope)
    return TableFactor(scope, [cards[v] for v in scope], np.broadcast_to(table, [cards[v] for v in scope]))


def factor_marginalize(f: TableFactor, keep: Iterable[int]) -> TableFactor:
    keep = set(keep)
    missing = keep - set(f.vars)
    if missing:
        raise StructuralError(f"cannot keep {sorted(missing)}: not in scope {f.vars}")
    axes = tuple(k for k, v in enumerate(f.vars) if v not in keep)
    kept = [(v, c) for v, c in zip(f.vars, f.cards) if v in keep]
    return TableFactor([v for v, _ in kept], [c for _, c in kept], f.table.sum(axis=axes))


def factor_restrict(f: TableFactor, ev: Evidence) -> TableFactor:
    """Zero every entry inconsistent with ``ev``; the scope is unchanged."""
    mask = np.ones(f.cards, dtype=bool)
    for k, v in enumerate(f.vars):
        if v in ev:
            sel = np.zeros(f.cards[k], dtype=bool)
            sel[ev[v]] = True
            shape = [1] * len(f.vars)
            shape[k] = f.cards[k]
            mask = mask & sel.reshape(shape)
    if mask.all():
        return f
    return TableFactor(f.vars, f.cards, np.where(mask, f.table, 0.0))


def factor_slice(f: TableFactor, ev: Evidence) -> TableFactor:
    """``f`` restricted to ``ev`` with the bound variables summed out.

    Equivalent to ``factor_marginalize(factor_restrict(f, ev), unbound)``.
    """
    idx = tuple(ev[v] if v in ev else slice(None) for v in f.vars)
    kept = [(v, c) for v, c in zip(f.vars, f.cards) if v not in ev]
    return TableFactor([v for v, _ in kept], [c for _, c in kept], f.table[idx])


@dataclass(frozen=True)
class DirectedFamily:
    """A conditional distribution of ``child`` given ``parents``.

    The table scope is ``parents + (child,)``; columns over the child axis are
    renormalized on construction (inputs must already sum to one within
    ``NORMALIZATION_TOL``).
    """
    child: int
    parents: tuple[int, ...]
    cpt: TableFactor = field(repr=False)

    def __post_init__(self):
        parents = tuple(int(u) for u in self.parents)
        object.__setattr__(self, "parents", parents)
        if self.child in parents:
            raise StructuralError(f"variable {self.child} is its own parent")
        if self.cpt.vars != parents + (self.child,):
            raise StructuralError(
                f"cpt scope {self.cpt.vars} must be parents followed by child")
        sums = self.cpt.table.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > NORMALIZATION_TOL):
            raise StructuralError(f"cpt columns of {self.child} do not sum to one")
        table = self.cpt.table / sums[..., None]
        object.__setattr__(self, "cpt", TableFactor(self.cpt.vars, self.cpt.cards, table))

    @property
    def theta(self) -> np.ndarray:
        """Table shaped ``(*parent_cards, child_card)``."""
        return self.cpt.table

    @classmethod
    def from_factor(cls, f: TableFactor, child: int) -> "DirectedFamily":
        parents = tuple(v for v in f.vars if v != child)
        order = [f.vars.index(v) for v in parents + (child,)]
        cpt = TableFactor(parents + (child,), [f.cards[k] for k in order], f.table.transpose(order))
        return cls(child, parents, cpt)


def topological_order(parents: Mapping[int, Sequence[int]]) -> list[int]:
    """Kahn ordering with lowest-id tie breaking; raises on cycles."""
    nodes = set(parents)
    for ps in parents.values():
        nodes.update(ps)
    indeg = {v: 0 for v in nodes}
    children: dict[int, list[int]] = {v: [] for v in nodes}
    for c, ps in parents.items():
        for u in ps:
            indeg[c] += 1
            children[u].append(c)
    ready = [v for v in nodes if indeg[v] == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        v = heapq.heappop(ready)
        out.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, c)
    if len(out) != len(nodes):
        raise StructuralError("directed structure contains a cycle")
    return out


def d_separated_dag(parents: Mapping[int, Sequence[int]], x: int,
                    ys: Iterable[int], zs: Iterable[int]) -> bool:
    """True iff ``x`` is d-separated from every node of ``ys`` given ``zs``.

    Reachability ("Bayes ball") over (node, direction) pairs. Nodes of ``ys``
    that lie in ``zs`` are trivially separated.
    """
    zs = set(zs)
    ys = set(ys) - zs
    if x in zs:
        raise StructuralError("query variable is in the conditioning set")
    if not ys:
        return True
    if x in ys:
        return False
    children: dict[int, list[int]] = {}
    for c, ps in parents.items():
        for u in ps:
            children.setdefault(u, []).append(c)
    # ancestors of the conditioning set, for collider activation
    anc = set()
    stack = list(zs)
    while stack:
        v = stack.pop()
        if v in anc:
            continue
        anc.add(v)
        stack.extend(parents.get(v, ()))
    # direction "up": arrived from a child; "down": arrived from a parent
    visited = set()
    queue = deque([(x, "up")])
    while queue:
        v, d = queue.popleft()
        if (v, d) in visited:
            continue
        visited.add((v, d))
        if v not in zs and v in ys:
            return False
        if d == "up" and v not in zs:
            for u in parents.get(v, ()):
                queue.append((u, "up"))
            for c in children.get(v, ()):
                queue.append((c, "down"))
        elif d == "down":
            if v not in zs:
                for c in children.get(v, ()):
                    queue.append((c, "down"))
            if v in anc:
                for u in parents.get(v, ()):
                    queue.append((u, "up"))
    return True


class FactorizedModel:
    """A distribution proportional to a product of factors over discrete variables.

    ``children[i]`` names the child variable when factor ``i`` is a CPT and is
    ``None`` for a plain potential. The model is *directed* when every factor
    is a CPT, every variable has exactly one, and the structure is acyclic.
    """

    def __init__(self, variables: Sequence[Variable], factors: Sequence[TableFactor],
                 children: Sequence[int | None] | None = None):
        self.variables = tuple(variables)
        for k, v in enumerate(self.variables):
            if v.id != k:
                raise StructuralError("variable ids must be contiguous from 0")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise StructuralError("variable names must be unique")
        self.factors = tuple(factors)
        self.children = tuple(children) if children is not None else (None,) * len(self.factors)
        if len(self.children) != len(self.factors):
            raise StructuralError("children list must match factors")
        for f, child in zip(self.factors, self.children):
            for v, c in zip(f.vars, f.cards):
                if not 0 <= v < len(self.variables):
                    raise StructuralError(f"factor references undeclared variable {v}")
                if self.variables[v].cardinality != c:
                    raise StructuralError(f"cardinality mismatch for {self.variables[v].name!r}")
            if child is not None:
                if child not in f.vars:
                    raise StructuralError("cpt child must be in the factor scope")
                axis = f.vars.index(child)
                if np.any(np.abs(f.table.sum(axis=axis) - 1.0) > NORMALIZATION_TOL):
                    raise StructuralError(
                        f"cpt of {self.variables[child].name!r} is not normalized")
        cpt_children = [c for c in self.children if c is not None]
        self.directed = (len(cpt_children) == len(self.factors)
                         and sorted(cpt_children) == list(range(len(self.variables))))
        if self.directed:
            topological_order(self.parents)

    @property
    def n(self) -> int:
        return len(self.variables)

    @cached_property
    def cards(self) -> dict[int, int]:
        return {v.id: v.cardinality for v in self.variables}

    @cached_property
    def parents(self) -> dict[int, tuple[int, ...]]:
        if not all(c is not None for c in self.children):
            raise StructuralError("parents are defined for directed models only")
        return {c: tuple(v for v in f.vars if v != c) for f, c in zip(self.factors, self.children)}

    def families(self) -> list[DirectedFamily]:
        if not self.directed:
            raise StructuralError("model is not directed")
        return [DirectedFamily.from_factor(f, c) for f, c in zip(self.factors, self.children)]

    def id_of(self, name: str) -> int:
        for v in self.variables:
            if v.name == name:
                return v.id
        raise KeyError(name)

    def name_of(self, var: int) -> str:
        return self.variables[var].name

    def unobserved(self, ev: Evidence) -> list[int]:
        return [v.id for v in self.variables if v.id not in ev]

    @cached_property
    def log_z(self) -> float:
        if self.directed:
            return 0.0
        from .exact import log_partition
        return log_partition(self)

    def check_evidence(self, ev: Evidence) -> None:
        for v, s in ev.items():
            if not 0 <= v < self.n:
                raise StructuralError(f"evidence on undeclared variable {v}")
            if not 0 <= s < self.variables[v].cardinality:
                raise StructuralError(
                    f"state {s} out of range for {self.variables[v].name!r}")

    def __repr__(self):
        return f"FactorizedModel(n={self.n}, factors={len(self.factors)}, directed={self.directed})"


def d_separated(model: FactorizedModel, x: int, y: Iterable[int], z: Iterable[int]) -> bool:
    if not model.directed:
        raise StructuralError("d-separation requires a directed model")
    return d_separated_dag(model.parents, x, y, z)


def bayesian_network(variables: Sequence[Variable], families: Iterable[DirectedFamily]) -> FactorizedModel:
    fams = list(families)
    return FactorizedModel(variables, [f.cpt for f in fams], [f.child for f in fams])
