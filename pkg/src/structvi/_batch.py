"""Batched approximation state and the coordinate-ascent machinery.

One :class:`State` holds ``B`` independent parameter sets sharing one
structure (restarts, or restarts of several target models with identical
scopes).  The public modules ``bn``, ``cg`` and ``hidden`` wrap single
approximations as batches of one, so every quantity has one code path.
"""
from __future__ import annotations

import numpy as np

from ._engine import (add_g, contract, expectation, indicator, log_terms,
                      neg_self_log)
from .model import (StructuralError, d_separated_dag, factor_marginalize,
                    factor_restrict)
from .seeding import stream
from .structure import OptimizerOptions, Structure

#: Offset applied to hidden ids for the second copy of V used by R.
RSHIFT = 1 << 20

DECREASE_TOL = 1e-9
MIN_STEP = 1e-3
EXTRAPOLATE_MAX = 2.0 ** 20


class Target:
    """Evidence-sliced log-factors of one or more target models.

    All problems must share factor scopes and the observed variable set.
    Each problem's tables are repeated ``repeat`` times along the batch axis.
    """

    def __init__(self, problems, repeat: int = 1):
        p0, ev0 = problems[0]
        self.t_vars = p0.unobserved(ev0)
        self.cards = {v: p0.cards[v] for v in self.t_vars}
        self.terms = []
        for i, f0 in enumerate(p0.factors):
            keep = [v for v in f0.vars if v not in ev0]
            tables = []
            for p, ev in problems:
                f = p.factors[i]
                if f.vars != f0.vars or set(ev) != set(ev0):
                    raise StructuralError("batched targets must share scopes and observed variables")
                tables.append(factor_marginalize(factor_restrict(f, ev), keep).table)
            g = log_terms(np.stack(tables))
            if repeat > 1:
                g = np.repeat(g, repeat, axis=0)
            self.terms.append((tuple(keep), None, g))
        self.log_zp = np.repeat(np.array([p.log_z for p, _ in problems], dtype=float), repeat)


class State:
    def __init__(self, structure: Structure, t_cards: dict[int, int], batch: int):
        self.structure = structure
        self.B = batch
        self.cards = dict(t_cards)
        self.cards.update(structure.hidden)
        self.hidden = set(structure.hidden)
        self.order = structure.order
        self.children = list(self.order)
        self.fam_vars = [structure.parents[c] + (c,) for c in self.order]
        self.index = {c: j for j, c in enumerate(self.children)}
        self.theta = [None] * len(self.order)
        self.neglog = [None] * len(self.order)
        self.pots = list(structure.potentials)
        self.psi = [None] * len(self.pots)
        self.psi_neglog = [None] * len(self.pots)
        self.rho = None
        self.logrho = None
        self.all_cards = dict(self.cards)
        self.all_cards.update({self.rname(v): c for v, c in structure.hidden.items()})
        self._relevance = None

    # -- parameters -----------------------------------------------------
    def shape(self, j: int) -> tuple[int, ...]:
        return tuple(self.cards[v] for v in self.fam_vars[j])

    def pot_shape(self, k: int) -> tuple[int, ...]:
        return tuple(self.cards[v] for v in self.pots[k])

    def set_theta(self, j: int, arr: np.ndarray) -> None:
        self.theta[j] = arr
        self.neglog[j] = neg_self_log(arr)

    def set_psi(self, k: int, arr: np.ndarray) -> None:
        self.psi[k] = arr
        self.psi_neglog[k] = neg_self_log(arr)

    def init_rho(self) -> None:
        self.rho = [None] * len(self.order)
        self.logrho = [None] * len(self.order)
        for j in range(len(self.order)):
            self.set_rho(j, np.ones((self.B,) + self.shape(j)))

    def set_rho(self, j: int, arr: np.ndarray) -> None:
        self.rho[j] = arr
        self.logrho[j] = log_terms(arr)

    def rname(self, v: int) -> int:
        return v - RSHIFT if v in self.hidden else v

    # -- terms ----------------------------------------------------------
    def theta_term(self, j: int, log: bool, rho: bool = False):
        g = None
        if log:
            g = self.neglog[j]
        if rho:
            g = self.logrho[j] if g is None else add_g(g, self.logrho[j])
        return (self.fam_vars[j], self.theta[j][:, None], g)

    def psi_term(self, k: int, log: bool):
        return (self.pots[k], self.psi[k][:, None], self.psi_neglog[k] if log else None)

    def rho_term(self, j: int):
        return (tuple(self.rname(v) for v in self.fam_vars[j]), self.rho[j][:, None], None)

    def relevance(self, target: Target):
        """(fp, fq) per family: indices of relevant target terms and Q families."""
        if self._relevance is None:
            parents = {c: self.structure.parents[c] for c in self.children}
            fp, fq = [], []
            for j, c in enumerate(self.children):
                u = parents[c]
                fp.append([i for i, t in enumerate(target.terms)
                           if t[0] and not d_separated_dag(parents, c, t[0], u)])
                fq.append([k for k, ck in enumerate(self.children)
                           if k != j and not d_separated_dag(parents, c, (ck,) + parents[ck], u)])
            self._relevance = (fp, fq)
        return self._relevance

    def take(self, b: int) -> "State":
        """A batch-of-one copy of element ``b``."""
        s = State(self.structure, {v: c for v, c in self.cards.items() if v not in self.hidden}, 1)
        for j in range(len(self.order)):
            s.set_theta(j, self.theta[j][b:b + 1].copy())
        for k in range(len(self.pots)):
            s.set_psi(k, self.psi[k][b:b + 1].copy())
        if self.rho is not None:
            s.rho = [None] * len(self.order)
            s.logrho = [None] * len(self.order)
            for j in range(len(self.order)):
                s.set_rho(j, self.rho[j][b:b + 1].copy())
        return s


def _clamp_terms(state: State, clamp):
    return [indicator(v, state.cards[v], s) for v, s in (clamp or {}).items()]


def log_partition_q(state: State) -> np.ndarray:
    terms = [state.theta_term(j, False) for j in range(len(state.order))]
    terms += [state.psi_term(k, False) for k in range(len(state.pots))]
    P, _ = contract(terms, (), state.cards)
    with np.errstate(divide="ignore"):
        return np.log(P[:, 0])


def expected_r_sum(state: State, clamp=None) -> np.ndarray:
    """Σ_{t,v} Q(t | c) R(t, v), batched; c clamps the Q side."""
    q_terms = [state.theta_term(j, False) for j in range(len(state.order))] + _clamp_terms(state, clamp)
    Pq, _ = contract(q_terms, (), state.cards)
    terms = q_terms + [state.rho_term(j) for j in range(len(state.order))]
    Ps, _ = contract(terms, (), state.all_cards)
    out = np.zeros(np.broadcast_shapes(Ps.shape, Pq.shape))
    np.divide(Ps, Pq, out=out, where=np.broadcast_to(Pq > 0, out.shape))
    return out[:, 0]


def bound(state: State, target: Target, kind: str, clamp=None) -> np.ndarray:
    """F[Q | c] for ``bn``/``cg`` states, G[Q, R | c] for ``hidden`` states."""
    hidden = kind == "hidden"
    terms = [state.theta_term(j, True, rho=hidden) for j in range(len(state.order))]
    terms += [state.psi_term(k, True) for k in range(len(state.pots))]
    terms += target.terms
    terms += _clamp_terms(state, clamp)
    P, G = contract(terms, (), state.cards)
    P = P[:, 0]
    val = expectation(G) if G is not None else np.zeros_like(P)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = val - target.log_zp + np.log(P)
    if hidden:
        out = out - expected_r_sum(state, clamp) + 1.0
    return np.where(P > 0, out, -np.inf)


def family_energy(state: State, target: Target, j: int, kind: str, reduced: bool = True):
    """Energies over family ``j``'s table and the conditioning mass P(x_j, u_j).

    For ``bn``/``hidden`` with ``reduced`` set, only relevance-set terms are
    included; dropped terms only shift each column by a constant.
    """
    hidden = kind == "hidden"
    n = len(state.order)
    if reduced and kind != "cg":
        fp, fq = state.relevance(target)
        fp, fq = fp[j], set(fq[j])
    else:
        fp, fq = range(len(target.terms)), set(range(n)) - {j}
    terms = [state.theta_term(k, k in fq, rho=hidden and k in fq) for k in range(n) if k != j]
    terms += [state.psi_term(k, True) for k in range(len(state.pots))]
    terms += [target.terms[i] for i in fp]
    if hidden:
        terms.append((state.fam_vars[j], None, state.logrho[j]))
    keep = state.fam_vars[j]
    P, G = contract(terms, keep, state.cards)
    E = expectation(G) if G is not None else np.zeros(P[:, 0].shape)
    P = P[:, 0]
    if hidden:
        s_terms = [state.theta_term(k, False) for k in range(n) if k != j]
        s_terms += [state.rho_term(k) for k in range(n)]
        Ps, _ = contract(s_terms, keep, state.all_cards)
        S = np.zeros(np.broadcast_shapes(Ps[:, 0].shape, P.shape))
        np.divide(Ps[:, 0], P, out=S, where=np.broadcast_to(P > 0, S.shape))
        E = E - S
    shape = (state.B,) + state.shape(j)
    return np.broadcast_to(E, shape), np.broadcast_to(P, shape)


def potential_energy(state: State, target: Target, k: int):
    terms = [state.theta_term(j, True) for j in range(len(state.order))]
    terms += [state.psi_term(m, True) for m in range(len(state.pots)) if m != k]
    terms += target.terms
    P, G = contract(terms, state.pots[k], state.cards)
    E = expectation(G) if G is not None else np.zeros(P[:, 0].shape)
    shape = (state.B,) + state.pot_shape(k)
    return np.broadcast_to(E, shape), np.broadcast_to(P[:, 0], shape)


def exp_normalize(E: np.ndarray, P: np.ndarray, old: np.ndarray, axes: tuple[int, ...]):
    """exp-normalize ``E`` over ``axes``.

    Cells with zero conditioning mass get weight 0; blocks with no mass at all
    keep ``old``; blocks whose energies are all -inf become uniform and are
    reported in the returned ``fallback`` mask (per batch element).
    """
    E = np.where(P > 0, E, -np.inf)
    m = E.max(axis=axes, keepdims=True)
    dead = ~np.isfinite(m)
    with np.errstate(invalid="ignore", over="ignore"):
        w = np.exp(E - np.where(dead, 0.0, m))
    w = np.where(dead, 1.0, w)
    new = w / w.sum(axis=axes, keepdims=True)
    massless = ~np.any(P > 0, axis=axes, keepdims=True)
    new = np.where(massless, old, new)
    fallback = dead & ~massless
    return new, fallback.reshape(fallback.shape[0], -1).any(axis=1)


def cpd_column_shift(E: np.ndarray, P: np.ndarray, max_iter: int = 100) -> np.ndarray:
    """Per-cell offsets that turn chain-graph CPD energies into the exact block maximizer.

    With the rest of Q fixed, F as a function of one CPD is maximized by
    θ(x|u) ∝ exp(E(x, u) - λ_u / b(x, u)), where b(x, u) = ``P`` is the mass of
    everything else at (x, u) and λ solves min_λ log Σ_{x,u} b e^{E - λ_u/b}
    subject to Σ_u λ_u = 0 (a smooth convex problem; solved by equality-
    constrained Newton with backtracking). When b is constant within every
    column, as in any Bayesian network, the offsets are constant per column
    and the plain exp-normalized update is already exact.
    """
    B, X = E.shape[0], E.shape[-1]
    h = E.reshape(B, -1, X)
    b = P.reshape(B, -1, X)
    live = (b > 0) & np.isfinite(h)
    cols = live.any(axis=-1)
    scale = np.where(live, b, 0.0).max(axis=(1, 2), keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    bn = np.where(live, b / scale, 1.0)
    inv = np.where(live, 1.0 / bn, 0.0)
    base = np.where(live, h + np.log(bn), -np.inf)
    U = h.shape[1]
    lam = np.zeros((B, U))
    ones = cols.astype(float)

    def dual(lam):
        a = base - lam[..., None] * inv
        m = a.max(axis=(1, 2), keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        w = np.exp(a - m)
        z = w.sum(axis=(1, 2), keepdims=True)
        return (m + np.log(z))[:, 0, 0], w / z

    D, q = dual(lam)
    active = cols.sum(axis=1) > 1
    for _ in range(max_iter):
        if not active.any():
            break
        s = (q * inv).sum(axis=-1)
        grad = -s * ones
        H = np.einsum("bu,uv->buv", (q * inv * inv).sum(axis=-1), np.eye(U)) - s[:, :, None] * s[:, None, :]
        H = np.where(cols[:, :, None] & cols[:, None, :], H, 0.0) + np.einsum("bu,uv->buv", 1.0 - ones, np.eye(U))
        H = H + 1e-14 * np.einsum("b,uv->buv", np.abs(np.diagonal(H, axis1=1, axis2=2)).max(axis=1) + 1e-300, np.eye(U))
        K = np.zeros((B, U + 1, U + 1))
        K[:, :U, :U] = H
        K[:, :U, U] = ones
        K[:, U, :U] = ones
        rhs = np.concatenate([-grad, np.zeros((B, 1))], axis=1)
        d = np.linalg.solve(K, rhs[..., None])[..., :U, 0]
        dec = -(grad * d).sum(axis=1)
        active &= dec > 1e-22
        t = np.where(active, 1.0, 0.0)
        for _ in range(60):
            D_new, q_new = dual(lam + t[:, None] * d)
            bad = active & (D_new > D - 1e-4 * t * dec) & (t > 0)
            if not bad.any():
                break
            t = np.where(bad, t / 2, t)
        lam = lam + t[:, None] * d
        D, q = dual(lam)
    shift = lam[..., None] * inv
    return shift.reshape(E.shape)


def update_family(state: State, target: Target, j: int, kind: str, reduced: bool = True,
                  stationary: bool = True):
    """New θ for family ``j``; chain-graph CPDs get the exact block maximizer unless
    ``stationary`` is off, in which case the plain exp-normalized energies are used."""
    E, P = family_energy(state, target, j, kind, reduced)
    if kind == "cg" and stationary and state.pots:
        E = E - cpd_column_shift(E, P)
    return exp_normalize(E, P, state.theta[j], (-1,))


def update_potential(state: State, target: Target, k: int):
    E, P = potential_energy(state, target, k)
    axes = tuple(range(1, E.ndim))
    return exp_normalize(E, P, state.psi[k], axes)


def update_rho(state: State, j: int):
    """Closed-form maximizer of G over block ``j`` of R; returns (new, flagged)."""
    n = len(state.order)
    q_terms = [state.theta_term(k, False) for k in range(n)]
    keep = state.fam_vars[j]
    Qa, _ = contract(q_terms, keep, state.cards)
    rkeep = tuple(state.rname(v) for v in keep)
    D, _ = contract(q_terms + [state.rho_term(k) for k in range(n) if k != j], rkeep, state.all_cards)
    Qa, D = Qa[:, 0], D[:, 0]
    ok = (D > 0) & (Qa > 0)
    new = np.array(np.broadcast_to(state.rho[j], np.broadcast_shapes(Qa.shape, state.rho[j].shape)))
    np.divide(Qa, D, out=new, where=ok)
    bad = ~np.broadcast_to(ok, new.shape)
    return new, bad.reshape(bad.shape[0], -1).any(axis=1)


# -- initialization ---------------------------------------------------------

def random_init(state: State, seeds, restarts: int) -> None:
    """Flat-Dirichlet parameters from the stream (seed, tag, restart, var)."""
    for j, c in enumerate(state.children):
        shape = state.shape(j)
        ncol = int(np.prod(shape[:-1], dtype=np.int64))
        rows = []
        for s in seeds:
            for r in range(restarts):
                rng = stream(s, "init-family", r, c)
                rows.append(rng.dirichlet(np.ones(shape[-1]), size=ncol).reshape(shape))
        state.set_theta(j, np.stack(rows))
    for k in range(len(state.pots)):
        shape = state.pot_shape(k)
        size = int(np.prod(shape, dtype=np.int64))
        rows = []
        for s in seeds:
            for r in range(restarts):
                rng = stream(s, "init-potential", r, k)
                rows.append(rng.dirichlet(np.ones(size)).reshape(shape))
        state.set_psi(k, np.stack(rows))


# -- coordinate ascent ------------------------------------------------------

def _mix(old, upd, gamma, axes):
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where((old > 0) & (upd > 0), old ** (1 - gamma) * upd ** gamma, 0.0)
    s = m.sum(axis=axes, keepdims=True)
    return np.where(s > 0, m / np.where(s > 0, s, 1.0), upd)


def _sel(mask, arr):
    return mask.reshape((-1,) + (1,) * (arr.ndim - 1))


class Ascent:
    """Runs asynchronous block updates on a batched state and records traces."""

    def __init__(self, state: State, target: Target, kind: str, opts: OptimizerOptions,
                 reduced: bool = True):
        self.state = state
        self.target = target
        self.kind = kind
        self.opts = opts
        self.reduced = reduced
        self.active = np.ones(state.B, dtype=bool)
        self.traces = [[] for _ in range(state.B)]
        self.flags = [[] for _ in range(state.B)]
        self.cur = None
        self.updates = 0

    def _bound(self):
        return bound(self.state, self.target, self.kind)

    def _record(self, values, force=False):
        if self.opts.trace == "update" or force:
            for b in np.flatnonzero(self.active):
                self.traces[b].append(float(values[b]))

    def _flag(self, mask, text):
        for b in np.flatnonzero(mask & self.active):
            self.flags[b].append(text)

    def _theta_step(self, j):
        st = self.state
        old = st.theta[j]
        new, fb = update_family(st, self.target, j, self.kind, self.reduced)
        self._flag(fb, f"uniform fallback for family {st.children[j]}")
        if self.kind == "cg":
            self._damped(lambda a: st.set_theta(j, a), old, new, (-1,))
        else:
            st.set_theta(j, np.where(_sel(self.active, old), new, old))
            if self.opts.trace == "update":
                self.cur = self._bound()
        self.updates += 1
        self._record(self.cur)

    def _psi_step(self, k):
        st = self.state
        old = st.psi[k]
        new, fb = update_potential(st, self.target, k)
        self._flag(fb, f"uniform fallback for potential {k}")
        self._damped(lambda a: st.set_psi(k, a), old, new, tuple(range(1, old.ndim)))
        self.updates += 1
        self._record(self.cur)

    def _damped(self, setter, old, upd, axes):
        """Accept ``upd`` or a geometric blend toward ``old`` that does not lower the bound."""
        base = self.cur
        gamma = self.opts.damping
        trial = upd if gamma >= 1 else _mix(old, upd, gamma, axes)
        cand = np.where(_sel(self.active, old), trial, old)
        setter(cand)
        val = self._bound()
        need = self.active & (val < base - DECREASE_TOL)
        while need.any():
            gamma /= 2
            if gamma < MIN_STEP:
                cand = np.where(_sel(need, old), old, cand)
                self._flag(need, "update reverted")
                setter(cand)
                val = np.where(need, base, val)
                break
            cand = np.where(_sel(need, old), _mix(old, upd, gamma, axes), cand)
            setter(cand)
            val = np.where(need, self._bound(), val)
            need = need & (val < base - DECREASE_TOL)
        self.cur = val

    def _snapshot(self):
        return [t.copy() for t in self.state.theta] + [p.copy() for p in self.state.psi]

    def _extrapolate(self, anchor):
        """Joint step along the displacement of the last few sweeps.

        A CPD and a potential over its child can trade mass along a narrow
        ridge of F that single-block updates climb very slowly. The displacement
        accumulated over several sweeps points along that ridge; we scale it by
        2, 4, 8, ... in log space and keep the largest step that still raises F.
        """
        st = self.state
        now = self._snapshot()
        n = len(st.theta)

        def put(gamma):
            for i, (a, b) in enumerate(zip(anchor, now)):
                axes = (-1,) if i < n else tuple(range(1, a.ndim))
                g = gamma.reshape((-1,) + (1,) * (a.ndim - 1))
                with np.errstate(divide="ignore", invalid="ignore"):
                    la, lb = np.log(a), np.log(b)
                    ok = (a > 0) & (b > 0)
                    lg = np.where(ok, la + g * (lb - la), -np.inf)
                    m = lg.max(axis=axes, keepdims=True)
                    w = np.exp(lg - np.where(np.isfinite(m), m, 0.0))
                    z = w.sum(axis=axes, keepdims=True)
                    v = np.where(z > 0, w / np.where(z > 0, z, 1.0), b)
                v = np.where(_sel(self.active, b), v, b)
                if i < n:
                    st.set_theta(i, v)
                else:
                    st.set_psi(i - n, v)

        best, gamma = self.cur.copy(), np.ones(st.B)
        trial = 2.0
        while trial <= EXTRAPOLATE_MAX:
            put(np.full(st.B, trial))
            val = self._bound()
            better = self.active & (val > best)
            if not better.any():
                break
            best = np.where(better, val, best)
            gamma = np.where(better, trial, gamma)
            trial *= 2
        put(gamma)
        self.cur = np.where(gamma > 1, best, self.cur)
        self.updates += 1
        self._record(self.cur)

    def _rho_sweep(self):
        st = self.state
        for j in range(len(st.order)):
            old = st.rho[j]
            new, bad = update_rho(st, j)
            self._flag(bad, f"rho entries of family {st.children[j]} left unchanged")
            st.set_rho(j, np.where(_sel(self.active, old), new, old))
            self.updates += 1
            if self.opts.trace == "update":
                self.cur = self._bound()
                self._record(self.cur)

    def run(self):
        st = self.state
        if self.kind == "hidden" and st.rho is None:
            st.init_rho()
        self.cur = self._bound()
        self._record(self.cur, force=True)
        if self.kind == "hidden":
            self._rho_sweep()
            if self.opts.trace == "sweep":
                self.cur = self._bound()
                self._record(self.cur, force=True)
        every = self.opts.extrapolate if self.kind == "cg" and st.pots else 0
        anchor = self._snapshot() if every else None
        for sweep in range(1, self.opts.max_sweeps + 1):
            start = self.cur.copy()
            for j in range(len(st.order)):
                self._theta_step(j)
            for k in range(len(st.pots)):
                self._psi_step(k)
            if every and sweep % every == 0:
                self._extrapolate(anchor)
                anchor = self._snapshot()
            if self.kind == "hidden":
                self._rho_sweep()
            if self.opts.trace == "sweep":
                self.cur = self._bound()
                self._record(self.cur, force=True)
            with np.errstate(invalid="ignore"):
                delta = np.abs(self.cur - start)
                done = (delta <= self.opts.tol * np.maximum(1.0, np.abs(start))) | (
                    np.isneginf(start) & np.isneginf(self.cur))
            self.active &= ~done
            if not self.active.any():
                break
        return self
