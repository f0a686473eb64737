"""SplitMix64, the generator behind every seeded parameter draw.

Reference (all arithmetic modulo 2**64)::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

A unit float is ``(next() >> 11) * 2**-53`` and ``uniform(lo, hi)`` is
``lo + (hi - lo) * unit``. Any implementation following these three lines
reproduces evkit's seeded fixtures exactly.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def unit(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float, shape=()) -> np.ndarray | float:
        if shape == ():
            return lo + (hi - lo) * self.unit()
        n = int(np.prod(shape))
        vals = [lo + (hi - lo) * self.unit() for _ in range(n)]
        return np.array(vals, dtype=np.float64).reshape(shape)
