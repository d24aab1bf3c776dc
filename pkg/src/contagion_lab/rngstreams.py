"""Counter-based random number streams and Brownian path helpers.

Every stochastic component of the library draws from a Philox generator
keyed by (seed, *indices).  Philox is counter-based, so streams for
different run indices are independent by construction and a given key
always reproduces the same sequence, on any machine and in any order of
construction.  This is what makes whole simulation studies bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Tags keep streams for different purposes disjoint even when the user
# passes the same integer for several seeds.
TAG_IDIOSYNCRATIC = 0x1D10
TAG_COMMON = 0xC0
TAG_NETWORK_NOISE = 0x4E7
TAG_INITIAL_ASSETS = 0xA55


def philox_stream(seed: int, tag: int, index: int = 0, sub: int = 0) -> np.random.Generator:
    """Return an independent generator keyed by (seed, tag, index, sub).

    The 128-bit Philox key holds the user seed in one word and the purpose
    tag (16 bits), run index (32 bits), and sub-index (16 bits) in the
    other, so distinct purposes and run indices never share a stream.
    """
    if not 0 <= index < (1 << 32):
        raise ValueError("run index must fit in 32 bits")
    word0 = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    word1 = np.uint64((tag & 0xFFFF) | ((index & 0xFFFFFFFF) << 16) | ((sub & 0xFFFF) << 48))
    return np.random.Generator(np.random.Philox(key=np.array([word0, word1], dtype=np.uint64)))


@dataclass(frozen=True)
class CommonNoisePath:
    """A realised common Brownian path B0 on a fixed time grid.

    The finite simulator consumes its increments directly; the mean-field
    solver, which usually steps on a much finer grid, linearly interpolates
    between the stored points.  Sharing one path between both is how the
    convergence harness couples them.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def at(self, t) -> np.ndarray:
        return np.interp(t, self.times, self.values)

    def increments(self, grid: np.ndarray) -> np.ndarray:
        vals = self.at(np.asarray(grid, dtype=float))
        return np.diff(vals)


def brownian_common_path(seed: int, grid: np.ndarray) -> CommonNoisePath:
    """Sample B0 on ``grid`` (grid[0] need not be 0; B0 starts at 0 there)."""
    grid = np.asarray(grid, dtype=float)
    rng = philox_stream(seed, TAG_COMMON)
    dt = np.diff(grid)
    incr = rng.standard_normal(dt.size) * np.sqrt(dt)
    values = np.concatenate([[0.0], np.cumsum(incr)])
    return CommonNoisePath(times=grid, values=values)
