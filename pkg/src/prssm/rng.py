"""Deterministic, counter-based random number generation.

Draws are addressed by ``(seed, position)``: the value of draw ``i`` is a pure
function of the seed and the counter ``i``, so streams are reproducible across
runs and platforms with identical IEEE-754 double semantics, and independent
substreams can be split off without coordination.

The generator is splitmix64 evaluated in counter mode; one 64-bit word is
consumed per draw.  Standard normals use the Box-Muller transform on the two
32-bit halves of a single word, so a normal draw also advances the counter by
exactly one.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO32 = 4294967296.0  # 2**32
_INV32 = 1.0 / _TWO32
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


def _words(seed: int, start: int, n: int) -> np.ndarray:
    """splitmix64 output words for counter positions start..start+n-1."""
    idx = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    z = np.uint64(seed & _MASK64) + idx * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class SeededRng:
    """Reproducible random stream identified by a 64-bit seed and a counter."""

    def __init__(self, seed: int, position: int = 0):
        self.seed = int(seed) & _MASK64
        self.position = int(position)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, position={self.position})"

    def substream(self, index: int) -> "SeededRng":
        """Independent stream for a worker; substream s = seed XOR index."""
        return SeededRng(self.seed ^ (int(index) & _MASK64))

    def standard_normal(self, n: int) -> np.ndarray:
        """n standard-normal draws; advances the stream position by n."""
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        w = _words(self.seed, self.position, n)
        self.position += n
        hi = (w >> np.uint64(32)).astype(np.float64)
        lo = (w & np.uint64(0xFFFFFFFF)).astype(np.float64)
        u1 = (hi + 0.5) * _INV32
        u2 = (lo + 0.5) * _INV32
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """n uniform draws in [low, high); advances the position by n."""
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        w = _words(self.seed, self.position, n)
        self.position += n
        u = (w >> np.uint64(11)).astype(np.float64) * _INV53
        return low + (high - low) * u

    def integers(self, n: int, low: int, high: int) -> np.ndarray:
        """n integer draws uniform over [low, high); advances the position by n."""
        if high <= low:
            raise ValueError(f"empty range [{low}, {high})")
        u = self.uniform(n)
        return (low + np.floor(u * (high - low))).astype(np.int64)
