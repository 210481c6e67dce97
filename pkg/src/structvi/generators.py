"""Small seeded random models for tests and experiments."""
from __future__ import annotations

import numpy as np

from .model import (DirectedFamily, Evidence, FactorizedModel, TableFactor,
                    Variable, bayesian_network)
from .seeding import dirichlet_half, stream


def random_cpt(rng: np.random.Generator, child: int, parents, cards) -> DirectedFamily:
    vars = tuple(parents) + (child,)
    shape = [cards[v] for v in vars]
    ncol = int(np.prod(shape[:-1], dtype=np.int64))
    table = dirichlet_half(rng, shape[-1], ncol).reshape(shape)
    return DirectedFamily(child, tuple(parents), TableFactor(vars, shape, table))


def random_bn(seed: int, n: int, max_parents: int = 2, n_observed: int = 1,
              card: int = 2) -> tuple[FactorizedModel, Evidence]:
    """A random DAG over ``n`` variables (edges only from lower to higher ids).

    The last ``n_observed`` variables are observed in random states, and
    all CPT columns are Dirichlet(1/2).
    """
    rng = stream(seed, "random-bn", n)
    variables = [Variable(i, f"X{i}", card) for i in range(n)]
    cards = {i: card for i in range(n)}
    fams = []
    for i in range(n):
        k = int(rng.integers(0, min(i, max_parents) + 1))
        parents = sorted(int(u) for u in rng.choice(i, size=k, replace=False)) if k else []
        fams.append(random_cpt(rng, i, parents, cards))
    ev = {v: int(rng.integers(0, card)) for v in range(n - n_observed, n)}
    return bayesian_network(variables, fams), ev


def random_markov(seed: int, n: int, n_factors: int, max_scope: int = 3,
                  n_observed: int = 1, card: int = 2) -> tuple[FactorizedModel, Evidence]:
    """Undirected model with positive Gamma(1/2) potentials over random scopes."""
    rng = stream(seed, "random-markov", n)
    variables = [Variable(i, f"X{i}", card) for i in range(n)]
    factors = []
    for _ in range(n_factors):
        k = int(rng.integers(1, max_scope + 1))
        scope = sorted(int(v) for v in rng.choice(n, size=min(k, n), replace=False))
        factors.append(TableFactor(scope, [card] * len(scope),
                                   rng.gamma(0.5, 1.0, size=card ** len(scope)) + 1e-3))
    for v in range(n):
        factors.append(TableFactor([v], [card], rng.gamma(0.5, 1.0, size=card) + 1e-3))
    ev = {v: int(rng.integers(0, card)) for v in range(n - n_observed, n)}
    return FactorizedModel(variables, factors), ev
