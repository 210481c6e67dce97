"""Named, splittable random streams.

Every stream is a PCG64 generator seeded from ``SeedSequence(seed,
spawn_key=(crc32(tag), *index))``. The same (seed, tag, index) always yields
the same stream on every platform, independent of how many other streams were
drawn before it.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(i: int) -> int:
    # SeedSequence wants nonnegative words; interleave signed ids.
    i = int(i)
    return 2 * i if i >= 0 else -2 * i - 1


def stream(seed: int, tag: str, *index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(tag.encode()),) + tuple(_key(i) for i in index))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, tag: str, *index: int) -> int:
    """A 63-bit integer seed derived from (seed, tag, index)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(tag.encode()),) + tuple(_key(i) for i in index))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 31) ^ int(lo)


def dirichlet_half(rng: np.random.Generator, k: int, size: int) -> np.ndarray:
    """``size`` draws from Dirichlet(1/2, ..., 1/2) as normalized Gamma(1/2, 1) draws."""
    g = rng.gamma(0.5, 1.0, size=(size, k))
    s = g.sum(axis=1, keepdims=True)
    # Gamma(1/2) can underflow to exactly 0 for every component; redraw those rows.
    while np.any(s == 0):
        bad = (s == 0).ravel()
        g[bad] = rng.gamma(0.5, 1.0, size=(int(bad.sum()), k))
        s = g.sum(axis=1, keepdims=True)
    return g / s
