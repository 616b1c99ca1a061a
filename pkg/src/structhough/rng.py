"""Portable counter-based pseudo-random numbers (SplitMix64).

The generator state is a 64-bit counter advanced by a fixed odd increment;
each output is a bijective mix of the counter. Because output ``k`` depends
only on the start state and ``k``, blocks of numbers are produced with
vectorized numpy arithmetic and any implementation using the same
constants reproduces the same stream.

Constants:

* increment ``0x9E3779B97F4A7C15``
* mix: ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
  z *= 0x94D049BB133111EB; z ^= z >> 31``

Uniform doubles use the top 53 bits; normals use the Box-Muller cosine
branch on two uniforms.
"""
from __future__ import annotations

import math

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1


def mix64(z: int) -> int:
    """SplitMix64 output function on a Python integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed for a sub-stream identified by ``keys`` (e.g. frame, purpose)."""
    s = mix64(seed + GAMMA)
    for k in keys:
        s = mix64(s ^ mix64((k & MASK64) + GAMMA))
    return s


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self, n: int) -> np.ndarray:
        """The next ``n`` raw 64-bit outputs."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        with np.errstate(over="ignore"):
            ctr = np.uint64(self.state) + np.uint64(GAMMA) * np.arange(1, n + 1, dtype=np.uint64)
            out = _mix_array(ctr)
        self.state = (self.state + n * GAMMA) & MASK64
        return out

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """``n`` doubles in ``[low, high)``."""
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return low + (high - low) * u

    def normal(self, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        u = self.uniform(2 * n).reshape(n, 2) if n > 0 else np.zeros((0, 2))
        z = np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * math.pi * u[:, 1])
        return mean + std * z

    def truncated_normal(self, n: int, std: float, limit: float = 3.0) -> np.ndarray:
        """Normals with ``|z| <= limit`` standard deviations (rejection sampling)."""
        out = np.empty(0)
        while len(out) < n:
            z = self.normal(n - len(out))
            out = np.concatenate([out, z[np.abs(z) <= limit]])
        return std * out

    def integers(self, n: int, high: int) -> np.ndarray:
        """``n`` integers in ``[0, high)``."""
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)


__all__ = ["SplitMix64", "derive_seed", "mix64"]
