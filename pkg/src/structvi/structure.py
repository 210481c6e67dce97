"""Approximation structures, optimizer options and fit results."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .model import StructuralError, topological_order


@dataclass(frozen=True, eq=False)
class Structure:
    """Graph of an approximating distribution.

    ``parents`` lists the directed parents of every approximating variable
    (the unobserved variables T, plus hidden variables V when present).
    Hidden variables use negative ids and declare their cardinality in
    ``hidden``; ``potentials`` are undirected scopes for chain-graph
    approximations.
    """
    parents: Mapping[int, tuple[int, ...]]
    potentials: tuple[tuple[int, ...], ...] = ()
    hidden: Mapping[int, int] = field(default_factory=dict)
    hidden_names: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "parents", {int(c): tuple(int(u) for u in ps) for c, ps in self.parents.items()})
        object.__setattr__(self, "potentials", tuple(tuple(int(v) for v in s) for s in self.potentials))
        object.__setattr__(self, "hidden", {int(v): int(c) for v, c in self.hidden.items()})
        for v, c in self.hidden.items():
            if v >= 0:
                raise StructuralError("hidden variable ids must be negative")
            if c < 1:
                raise StructuralError("hidden cardinality must be >= 1")
        for c, ps in self.parents.items():
            for u in ps:
                if u not in self.parents:
                    raise StructuralError(f"parent {u} of {c} has no family")
        for s in self.potentials:
            if len(set(s)) != len(s) or any(v not in self.parents for v in s):
                raise StructuralError(f"bad potential scope {s}")
        topological_order(self.parents)

    @classmethod
    def mean_field(cls, t_vars: Iterable[int]) -> "Structure":
        return cls({int(v): () for v in t_vars})

    @property
    def order(self) -> list[int]:
        return topological_order(self.parents)

    def name_of(self, v: int) -> str:
        return self.hidden_names.get(v, f"V{-v}")

    def check_targets(self, t_vars: Sequence[int]) -> None:
        observed_part = set(self.parents) - set(self.hidden)
        if observed_part != set(t_vars):
            raise StructuralError("structure must cover exactly the unobserved variables")
        if set(self.hidden) - set(self.parents):
            raise StructuralError("every hidden variable needs a family")

    def signature(self) -> tuple:
        return (tuple(sorted(self.parents.items())), self.potentials, tuple(sorted(self.hidden.items())))


@dataclass(frozen=True)
class OptimizerOptions:
    """Coordinate-ascent settings.

    ``damping`` is the first geometric step tried for chain-graph updates
    (1.0 = take the full fixed-point update). ``trace`` selects whether the
    bound is recorded after every block update (``"update"``) or once per
    sweep (``"sweep"``).
    """
    max_sweeps: int = 10
    restarts: int = 10
    tol: float = 1e-8
    seed: int = 0
    damping: float = 1.0
    trace: str = "update"
    extrapolate: int = 5

    def __post_init__(self):
        if self.max_sweeps < 1 or self.restarts < 1:
            raise ValueError("max_sweeps and restarts must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.extrapolate < 0:
            raise ValueError("extrapolate must be >= 0")
        if self.trace not in ("update", "sweep"):
            raise ValueError("trace must be 'update' or 'sweep'")


@dataclass
class FitResult:
    q: Any
    bound: float
    trace: list[float]
    restart_index: int
    restart_bounds: list[float] = field(default_factory=list)
    traces: list[list[float]] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    marginal_bound: float | None = None
