"""Deterministic random streams.

A single `Rng` wraps a PCG64 counter stream seeded from a u64. Gaussian
variates are produced by the Box-Muller transform on top of that uniform
stream (rather than numpy's ziggurat) so the exact sample sequence is a
documented function of the seed and is reproducible bit-for-bit across
platforms and numpy versions.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Seeded random source. Same seed -> bit-identical draw sequence."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, salt: int) -> "Rng":
        """Independent child stream; deterministic in (seed, salt)."""
        return Rng((self.seed * 0x9E3779B97F4A7C15 + salt + 1) & 0xFFFFFFFFFFFFFFFF)

    def uniform(self, shape=(), lo: float = 0.0, hi: float = 1.0, dtype=np.float32) -> np.ndarray:
        u = self._gen.random(shape, dtype=np.float64)
        out = u * (hi - lo) + lo
        return out.astype(dtype, copy=False)

    def gaussian(self, shape=(), dtype=np.float32) -> np.ndarray:
        """Standard normals via Box-Muller on the uniform stream."""
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        # u1 in (0, 1] keeps the log finite; u2 in [0, 1).
        u1 = 1.0 - self._gen.random(m, dtype=np.float64)
        u2 = self._gen.random(m, dtype=np.float64)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * m, dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        out = z[:n].astype(dtype, copy=False)
        return out.reshape(shape) if shape else out.reshape(())

    def integers(self, lo: int, hi: int, shape=()) -> np.ndarray:
        """Uniform integers in [lo, hi). Used for batch index draws."""
        return self._gen.integers(lo, hi, size=shape)
