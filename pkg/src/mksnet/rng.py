"""Counter-based deterministic random number generation.

The generator is splitmix64 used in counter mode: output i of a stream with
64-bit key ``k`` is ``mix64(k + (i + 1) * GAMMA)`` where ``mix64`` is the
splitmix64 finalizer and GAMMA = 0x9E3779B97F4A7C15. Streams are split by
hashing a string tag into the key with FNV-1a, so any (seed, tag, index)
triple maps to the same scalar on every platform and in every language that
implements these two constants.

All arithmetic is modulo 2**64; uniform doubles take the top 53 bits.
"""

from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)

_U64 = np.uint64
_INV_2_53 = 1.0 / (1 << 53)


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, elementwise on uint64 arrays."""
    x = x.astype(np.uint64, copy=True)
    x ^= x >> _U64(30)
    x *= MIX1
    x ^= x >> _U64(27)
    x *= MIX2
    x ^= x >> _U64(31)
    return x


def fnv1a64(data: bytes) -> np.uint64:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return _U64(h)


class Stream:
    """A keyed, splittable, counter-based random stream."""

    def __init__(self, seed: int, tag: str = ""):
        key = _U64(seed & 0xFFFFFFFFFFFFFFFF)
        if tag:
            key = mix64(np.array([key ^ fnv1a64(tag.encode())]))[0]
        self.key = key
        self._counter = 0

    def split(self, tag: str) -> "Stream":
        child = Stream(0, "")
        child.key = mix64(np.array([self.key ^ fnv1a64(tag.encode())]))[0]
        return child

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        return mix64(self.key + idx * GAMMA)

    def uniform(self, shape, low=0.0, high=1.0, dtype=np.float64) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> _U64(11)).astype(np.float64) * _INV_2_53
        out = low + (high - low) * u
        return out.reshape(shape).astype(dtype)

    def integers(self, shape, low: int, high: int) -> np.ndarray:
        """Uniform integers in [low, high] inclusive (modulo reduction;
        span must be far below 2**64 for the bias to be negligible)."""
        if high < low:
            raise ValueError(f"empty integer range [{low}, {high}]")
        n = int(np.prod(shape)) if shape else 1
        span = _U64(high - low + 1)
        vals = (self._raw(n) % span).astype(np.int64) + low
        return vals.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle driven by this stream."""
        perm = np.arange(n)
        if n <= 1:
            return perm
        draws = self._raw(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(draws[n - 1 - i] % _U64(i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm
