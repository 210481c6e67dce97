"""Synthetic dynamic-Bayesian-network benchmark.

Each network has ``slices`` time slices. Slice n holds ``vars_per_slice``
binary chain variables X^1_n..X^m_n and one observed binary child O_n.
X^i_n has parents X^i_{n-1} (previous slice) and X^{i-1}_n (previous chain
variable in the same slice); O_n has every chain variable of its slice as a
parent. CPT columns are Dirichlet(1/2) and every O_n is observed in state 0.

Approximations compared (all fitted as hidden-variable models, so the
reported bound is G):

* ``mixture K``: one hidden V with K states above every X (K = 1 is mean field);
* ``vertical c``: intra-slice edges kept, one hidden V_n per slice, V_n chained
  across slices and a parent of every X in slice n;
* ``horizontal c``: inter-slice edges kept, one hidden V^i per chain, V^i
  chained across chains and a parent of every X in chain i.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import _batch
from .bn import run_batch
from .exact import log_evidence
from .generators import random_cpt
from .hidden import mixture_mean_field
from .model import Evidence, FactorizedModel, Variable, bayesian_network
from .seeding import derive_seed, stream
from .structure import OptimizerOptions, Structure

log = logging.getLogger(__name__)

METHODS = ("mixture", "vertical", "horizontal")
DEFAULT_METHODS = (("mixture", 1), ("mixture", 4), ("mixture", 6),
                 ("vertical", 1), ("vertical", 2), ("vertical", 3),
                 ("horizontal", 1), ("horizontal", 2), ("horizontal", 3))
CSV_COLUMNS = ("slices", "vars_per_slice", "method", "variant", "net_index",
               "log_evidence", "bound", "gap_per_slice", "wall_ms")


@dataclass(frozen=True)
class DbnConfig:
    slices: int
    vars_per_slice: int
    seed: int = 0

    def __post_init__(self):
        if self.slices < 1 or self.vars_per_slice < 1:
            raise ValueError("slices and vars_per_slice must be >= 1")

    def chain_id(self, i: int, n: int) -> int:
        """Id of chain variable ``i`` (1-based) in slice ``n`` (1-based)."""
        return (n - 1) * (self.vars_per_slice + 1) + (i - 1)

    def observed_id(self, n: int) -> int:
        return (n - 1) * (self.vars_per_slice + 1) + self.vars_per_slice


def generate_dbn(cfg: DbnConfig) -> tuple[FactorizedModel, Evidence]:
    m = cfg.vars_per_slice
    variables, parents = [], {}
    for n in range(1, cfg.slices + 1):
        for i in range(1, m + 1):
            variables.append(Variable(cfg.chain_id(i, n), f"X{i}_{n}", 2))
            ps = []
            if n > 1:
                ps.append(cfg.chain_id(i, n - 1))
            if i > 1:
                ps.append(cfg.chain_id(i - 1, n))
            parents[cfg.chain_id(i, n)] = ps
        variables.append(Variable(cfg.observed_id(n), f"O_{n}", 2))
        parents[cfg.observed_id(n)] = [cfg.chain_id(i, n) for i in range(1, m + 1)]
    cards = {v.id: 2 for v in variables}
    fams = [random_cpt(stream(cfg.seed, "dbn-cpt", v.id), v.id, parents[v.id], cards) for v in variables]
    ev = {cfg.observed_id(n): 0 for n in range(1, cfg.slices + 1)}
    return bayesian_network(variables, fams), ev


def _chain_vars(cfg: DbnConfig):
    return [cfg.chain_id(i, n) for n in range(1, cfg.slices + 1) for i in range(1, cfg.vars_per_slice + 1)]


def build_vertical_approx(cfg: DbnConfig, v_card: int | None) -> Structure:
    """Intra-slice edges plus a hidden chain V_1 → ... → V_N (``v_card`` None: no V)."""
    parents, hidden, names = {}, {}, {}
    for n in range(1, cfg.slices + 1):
        if v_card is not None:
            hidden[-n] = v_card
            names[-n] = f"V_{n}"
            parents[-n] = (-(n - 1),) if n > 1 else ()
        for i in range(1, cfg.vars_per_slice + 1):
            ps = [-n] if v_card is not None else []
            if i > 1:
                ps.append(cfg.chain_id(i - 1, n))
            parents[cfg.chain_id(i, n)] = tuple(ps)
    return Structure(parents, hidden=hidden, hidden_names=names)


def build_horizontal_approx(cfg: DbnConfig, v_card: int | None) -> Structure:
    """Inter-slice edges plus a hidden chain V^1 → ... → V^m over chains (``v_card`` None: no V)."""
    parents, hidden, names = {}, {}, {}
    for i in range(1, cfg.vars_per_slice + 1):
        if v_card is not None:
            hidden[-i] = v_card
            names[-i] = f"V^{i}"
            parents[-i] = (-(i - 1),) if i > 1 else ()
        for n in range(1, cfg.slices + 1):
            ps = [-i] if v_card is not None else []
            if n > 1:
                ps.append(cfg.chain_id(i, n - 1))
            parents[cfg.chain_id(i, n)] = tuple(ps)
    return Structure(parents, hidden=hidden, hidden_names=names)


def method_structure(cfg: DbnConfig, method: str, variant: int) -> Structure:
    if method == "mixture":
        return mixture_mean_field(_chain_vars(cfg), variant)
    if method == "vertical":
        return build_vertical_approx(cfg, variant)
    if method == "horizontal":
        return build_horizontal_approx(cfg, variant)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class BenchmarkConfig:
    slices: Sequence[int] = (2, 3, 4, 5, 6, 7)
    vars_per_slice: Sequence[int] = (3, 4)
    methods: Sequence[tuple[str, int]] = DEFAULT_METHODS
    nets_per_cell: int = 20
    opts: OptimizerOptions = field(default_factory=lambda: OptimizerOptions(trace="sweep"))
    seed: int = 0
    timing: bool = False

    def __post_init__(self):
        if self.nets_per_cell < 1:
            raise ValueError("nets_per_cell must be >= 1")
        for m, v in self.methods:
            if m not in METHODS or v < 1:
                raise ValueError(f"bad method {(m, v)}")


@dataclass(frozen=True)
class RunRecord:
    slices: int
    vars_per_slice: int
    method: str
    variant: int
    net_index: int
    log_evidence: float
    bound: float
    gap_per_slice: float
    wall_ms: float = 0.0
    flags: tuple[str, ...] = ()

    @property
    def key(self):
        return (self.vars_per_slice, self.slices, METHODS.index(self.method), self.variant, self.net_index)


def net_config(bc: BenchmarkConfig, slices: int, vars_per_slice: int, k: int) -> DbnConfig:
    return DbnConfig(slices, vars_per_slice, derive_seed(bc.seed, "dbn", vars_per_slice, slices, k))


def fit_seed(bc: BenchmarkConfig, slices: int, vars_per_slice: int, k: int) -> int:
    return derive_seed(bc.seed, "fit", vars_per_slice, slices, k)


def run_cell(bc: BenchmarkConfig, slices: int, vars_per_slice: int) -> list[RunRecord]:
    """All nets and methods of one (slices, vars_per_slice) cell; nets × restarts are batched."""
    cfgs = [net_config(bc, slices, vars_per_slice, k) for k in range(bc.nets_per_cell)]
    problems = [generate_dbn(c) for c in cfgs]
    evid = [log_evidence(p, ev) for p, ev in problems]
    seeds = [fit_seed(bc, slices, vars_per_slice, k) for k in range(bc.nets_per_cell)]
    out = []
    for method, variant in bc.methods:
        structure = method_structure(cfgs[0], method, variant)
        t0 = time.perf_counter()
        results = run_batch("hidden", problems, structure, bc.opts, seeds, lambda st, b, f: None)
        ms = (time.perf_counter() - t0) * 1000 / len(problems) if bc.timing else 0.0
        for k, (res, le) in enumerate(zip(results, evid)):
            flags = tuple(res.flags)
            if not math.isfinite(res.bound):
                flags += ("non-finite bound",)
                log.warning("cell (%d, %d) net %d %s %d: bound %r", slices, vars_per_slice, k,
                            method, variant, res.bound)
            out.append(RunRecord(slices, vars_per_slice, method, variant, k, le, res.bound,
                                 (le - res.bound) / slices, ms, flags))
    return out


def _cell_job(args):
    return run_cell(*args)


def run_benchmark(bc: BenchmarkConfig, jobs: int = 1) -> list[RunRecord]:
    cells = [(bc, s, m) for m in bc.vars_per_slice for s in bc.slices]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            parts = list(pool.map(_cell_job, cells))
    else:
        parts = [_cell_job(c) for c in cells]
    return sorted((r for part in parts for r in part), key=lambda r: r.key)


# -- summaries --------------------------------------------------------------

def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 · N)-th smallest value."""
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100 * n))
    return sorted_values[rank - 1]


@dataclass(frozen=True)
class SummaryRow:
    slices: int
    vars_per_slice: int
    method: str
    variant: int
    count: int
    median: float
    p25: float
    p75: float


def summarize(records: Iterable[RunRecord]) -> list[SummaryRow]:
    groups: dict[tuple, list[float]] = {}
    for r in records:
        groups.setdefault((r.vars_per_slice, r.slices, r.method, r.variant), []).append(r.gap_per_slice)
    rows = []
    for (m, s, method, variant), gaps in sorted(groups.items(), key=lambda kv: (
            kv[0][0], kv[0][1], METHODS.index(kv[0][2]) if kv[0][2] in METHODS else 99, kv[0][3])):
        if not gaps:
            log.warning("empty cell %r omitted", (s, m, method, variant))
            continue
        g = sorted(gaps)
        rows.append(SummaryRow(s, m, method, variant, len(g), nearest_rank(g, 50),
                               nearest_rank(g, 25), nearest_rank(g, 75)))
    return rows


# -- files ------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_csv(records: Iterable[RunRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def read_csv(path) -> list[RunRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(RunRecord(int(row["slices"]), int(row["vars_per_slice"]), row["method"],
                                 int(row["variant"]), int(row["net_index"]), float(row["log_evidence"]),
                                 float(row["bound"]), float(row["gap_per_slice"]), float(row["wall_ms"])))
    return out


def plot_summary(rows: Sequence[SummaryRow], out_dir) -> list[Path]:
    """One SVG per vars_per_slice: median gap per slice vs slices, p25-p75 bars, one series per method."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    markers = {"mixture": "o", "vertical": "s", "horizontal": "^"}
    with matplotlib.rc_context({"svg.hashsalt": "structvi", "svg.fonttype": "path"}):
        for m in sorted({r.vars_per_slice for r in rows}):
            fig, ax = plt.subplots(figsize=(6, 4.5))
            series = sorted({(r.method, r.variant) for r in rows if r.vars_per_slice == m},
                            key=lambda s: (METHODS.index(s[0]), s[1]))
            for method, variant in series:
                pts = sorted((r for r in rows if r.vars_per_slice == m and r.method == method
                              and r.variant == variant), key=lambda r: r.slices)
                xs = [r.slices for r in pts]
                ys = [r.median for r in pts]
                err = [[r.median - r.p25 for r in pts], [r.p75 - r.median for r in pts]]
                label = f"{method} {'K' if method == 'mixture' else '|V|'}={variant}"
                ax.errorbar(xs, ys, yerr=err, marker=markers.get(method, "x"), capsize=3, label=label)
            ax.set_xlabel("time slices")
            ax.set_ylabel("(log P(o) - bound) / slices")
            ax.set_title(f"{m} variables per slice")
            ax.legend(fontsize="small")
            fig.tight_layout()
            path = out_dir / f"gap_vars{m}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(path)
    return paths
