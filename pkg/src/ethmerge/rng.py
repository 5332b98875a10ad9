"""SplitMix64 pseudorandom generator.

The generator is counter based: the ``i``-th output (1-based) of a stream
seeded with ``s`` is ``mix64(s + i * GAMMA)`` modulo 2**64, where ``mix64`` is
the finalizer from Steele, Lea and Flood (2014)::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

Doubles are taken from the top 53 bits: ``(u64 >> 11) * 2**-53``, so they lie
in ``[0, 1)``.  Scalar draws and vectorized draws consume the same stream, and
the compiled tree kernel carries an identical copy of the algorithm, so all
integer outputs are bit-for-bit reproducible on every platform.
"""
from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Seeded SplitMix64 stream with scalar and numpy-vectorized draws."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        return (self.next_u64() >> 11) * INV_2_53

    def randbelow(self, n: int) -> int:
        return int(self.random() * n)

    def normal(self) -> float:
        # Box-Muller, cosine branch only; one normal per two uniforms.
        u1 = 1.0 - self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def u64_array(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GAMMA) & MASK64
        return z

    def random_array(self, n: int) -> np.ndarray:
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * INV_2_53

    def normal_array(self, n: int) -> np.ndarray:
        """``n`` standard normals; draws ``2n`` uniforms as (u1, u2) pairs."""
        u = self.random_array(2 * n)
        u1 = 1.0 - u[0::2]
        u2 = u[1::2]
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def spawn(self) -> "SplitMix64":
        return SplitMix64(self.next_u64())
