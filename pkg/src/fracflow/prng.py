"""Portable pseudo-random numbers.

All randomness in experiments comes from :class:`Xorshift64Star`, whose
output is fully specified below so that other implementations can reproduce
the same streams bit for bit.

Algorithm
---------
State ``x`` is a nonzero unsigned 64-bit integer.  One step is::

    x ^= x >> 12
    x ^= x << 25   (mod 2^64)
    x ^= x >> 27
    out = x * 0x2545F4914F6CDD1D   (mod 2^64)

A seed ``k`` is turned into the initial state by one round of splitmix64::

    z = (k + 0x9E3779B97F4A7C15) mod 2^64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9   (mod 2^64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB   (mod 2^64)
    x = z ^ (z >> 31)        (replaced by 1 if it is 0)

Uniform doubles on ``[0, 1)`` are ``(out >> 11) * 2^-53``.  Normal deviates
use the Box-Muller transform on two consecutive uniforms ``u1, u2``:
``sqrt(-2 log(1 - u1)) * cos(2 pi u2)``; the sine branch is discarded.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

_MASK = (1 << 64) - 1
_MULT = 0x2545F4914F6CDD1D


def splitmix64(k: int) -> int:
    """One splitmix64 round, used to spread seeds over the state space."""
    z = (k + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class Xorshift64Star:
    """xorshift64* generator with ``uniform`` and ``normal`` draws.

    Parameters
    ----------
    seed : int
        Any non-negative integer; reduced mod ``2^64``.
    """

    def __init__(self, seed: int = 0):
        if int(seed) != seed or seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
        self.state = splitmix64(int(seed) & _MASK) or 1

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK
        x ^= x >> 27
        self.state = x
        return (x * _MULT) & _MASK

    def random(self) -> float:
        """Uniform double on ``[0, 1)``."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def _fill(self, draw, size):
        if size is None:
            return draw()
        shape = (size,) if isinstance(size, int) else tuple(size)
        out = np.empty(int(np.prod(shape)))
        for k in range(out.size):
            out[k] = draw()
        return out.reshape(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, size: Optional[int] = None):
        """Uniform draws on ``[low, high)``."""
        return self._fill(lambda: low + (high - low) * self.random(), size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size: Optional[int] = None):
        """Gaussian draws by Box-Muller."""
        def one():
            u1, u2 = self.random(), self.random()
            return loc + scale * math.sqrt(-2.0 * math.log1p(-u1)) * math.cos(2.0 * math.pi * u2)
        return self._fill(one, size)

    def integers(self, low: int, high: int) -> int:
        """Integer on ``[low, high)`` by scaling a uniform draw."""
        if high <= low:
            raise ValueError("high must exceed low")
        return low + min(int(self.random() * (high - low)), high - low - 1)
