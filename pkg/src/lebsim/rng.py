"""Counter-based SplitMix64 random streams.

Every draw is a pure function of ``(seed, counter)``::

    z = seed + (counter + 1) * 0x9E3779B97F4A7C15        (mod 2**64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z = z ^ (z >> 31)

which is the SplitMix64 finaliser of Steele, Lea & Flood (2014). Uniforms
take the top 53 bits, normals use Box-Muller on consecutive uniform pairs.
Sub-streams (per node, per repeat, ...) are keyed with :func:`derive_seed`,
a BLAKE2b hash of the parent seed and the keys, so they never overlap in a
way that depends on platform or draw order.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
_TWO_M53 = 1.0 / (1 << 53)


def derive_seed(seed, *keys) -> int:
    """Hash ``seed`` and any number of keys into a fresh 64-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(repr((int(seed) & MASK64,) + tuple(str(k) for k in keys)).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def splitmix64(seed: int, counters: np.ndarray) -> np.ndarray:
    """Vectorised SplitMix64 output for an array of counters."""
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(int(seed) & MASK64) + (c + np.uint64(1)) * GOLDEN
        z = (z ^ (z >> np.uint64(30))) * MIX1
        z = (z ^ (z >> np.uint64(27))) * MIX2
        z = z ^ (z >> np.uint64(31))
    return z


class Stream:
    """A sequential view onto the counter-based generator."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def _raw(self, size: int) -> np.ndarray:
        out = splitmix64(self.seed, np.arange(self.counter, self.counter + size, dtype=np.uint64))
        self.counter += size
        return out

    def uniform(self, size=None, low=0.0, high=1.0):
        n = 1 if size is None else int(np.prod(size))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_M53
        u = low + (high - low) * u
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def normal(self, size=None, loc=0.0, scale=1.0):
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = (self._raw(2 * pairs) >> np.uint64(11)).astype(np.float64) * _TWO_M53
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        z = loc + scale * z[:n]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)`` driven by this stream."""
        idx = list(range(n))
        if n < 2:
            return np.array(idx, dtype=np.int64)
        u = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            idx[i], idx[j] = idx[j], idx[i]
        return np.array(idx, dtype=np.int64)
