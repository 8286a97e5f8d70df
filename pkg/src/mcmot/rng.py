"""Portable seedable random stream.

The generator is SplitMix64, so any language can reproduce a scenario bit for bit:

    state  <- (state + 0x9E3779B97F4A7C15) mod 2**64
    z      <- state
    z      <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z      <- (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    output <- z ^ (z >> 31)

Derived draws:

* ``uniform()``: ``(next_u64() >> 11) * 2**-53``, in [0, 1).
* ``normal()``: Box-Muller using the cosine branch only,
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``, one fresh pair per draw.
* ``poisson(lam)``: Knuth's product-of-uniforms method.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed: int) -> None:
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)
        return low + (high - low) * u

    def normal(self, mean: float = 0.0, sigma: float = 1.0) -> float:
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return mean + sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def poisson(self, lam: float) -> int:
        if lam < 0.0:
            raise ValueError("poisson rate must be >= 0")
        if lam == 0.0:
            return 0
        limit = math.exp(-lam)
        k, p = 0, self.uniform()
        while p > limit:
            k += 1
            p *= self.uniform()
        return k

    def choice_index(self, weights: tuple[float, ...]) -> int:
        total = float(sum(weights))
        u = self.uniform(0.0, total)
        acc = 0.0
        for i, w in enumerate(weights):
            acc += w
            if u < acc:
                return i
        return len(weights) - 1

    def fork(self) -> "SplitMix64":
        """Independent child stream seeded from this one."""
        return SplitMix64(self.next_u64())
