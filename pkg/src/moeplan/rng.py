"""Portable seeded random numbers.

All randomness in the package comes from SplitMix64 (Steele, Lea & Flood,
2014), used as a counter-based stream so that the scalar and the vectorised
paths produce identical draws::

    state_i = seed + (i + 1) * 0x9E3779B97F4A7C15          (mod 2**64)
    z = state_i
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9               (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB               (mod 2**64)
    out_i = z ^ (z >> 31)

A draw below ``n`` is ``((out_i >> 11) * n) >> 53``, i.e. the top 53 bits
scaled to ``[0, n)``.  The bias is below ``n / 2**53`` and is ignored.

Any implementation following the lines above reproduces plans and traces
exactly.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# numpy path keeps (out >> 11) * n inside uint64
_MAX_VECTOR_BOUND = 1 << 11


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Sequential view of the counter-based stream for one seed."""

    def __init__(self, seed: int) -> None:
        self.seed = seed & MASK64
        self.counter = 0

    def next_u64(self) -> int:
        self.counter += 1
        return _mix((self.seed + self.counter * GAMMA) & MASK64)

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)``."""
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        return ((self.next_u64() >> 11) * n) >> 53

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates (Durstenfeld), walking from the end."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def u64_stream(seed: int, start: int, count: int) -> np.ndarray:
    """Draws ``start .. start+count-1`` of the stream as a uint64 array."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & MASK64) + idx * np.uint64(GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def below_array(draws: np.ndarray, bounds: np.ndarray | int) -> np.ndarray:
    """Vectorised counterpart of :meth:`SplitMix64.below`."""
    bounds = np.asarray(bounds, dtype=np.uint64)
    if np.any(bounds > _MAX_VECTOR_BOUND) or np.any(bounds == 0):
        raise ValueError(f"vectorised bounds must lie in [1, {_MAX_VECTOR_BOUND}]")
    return ((draws >> np.uint64(11)) * bounds) >> np.uint64(53)
