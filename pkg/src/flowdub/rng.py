"""Deterministic random numbers: splitmix64-seeded xoshiro256**.

The generator is pinned at the bit level so a seed reproduces the same
stream on every platform, independent of library versions. A 64-bit seed
is expanded into the four xoshiro256** state words by iterating
splitmix64; doubles come from the high 53 bits of each output word and
normal deviates from Box-Muller pairs. Each helper consumes a documented
number of raw words, so call sequences are reproducible too.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_DOUBLE_SCALE = 2.0**-53


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def subseed(seed: int, label: str) -> int:
    """Derive a stable sub-stream seed from a parent seed and a label.

    The label is folded with FNV-1a (not Python's salted hash), then mixed
    through splitmix64, so derived seeds match across processes.
    """
    h = 0xCBF29CE484222325
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    _, mixed = _splitmix64((int(seed) & _MASK64) ^ h)
    return mixed


class Rng:
    """xoshiro256** stream with float64 helpers."""

    def __init__(self, seed: int):
        s = int(seed) & _MASK64
        state = []
        for _ in range(4):
            s, word = _splitmix64(s)
            state.append(word)
        if not any(state):
            state[0] = 1  # all-zero state is a fixed point of xoshiro
        self._s = state

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """One double in [0, 1). Consumes one word."""
        return (self.next_u64() >> 11) * _DOUBLE_SCALE

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles in [0, 1). Consumes n words."""
        nxt = self.next_u64
        return np.fromiter(
            ((nxt() >> 11) * _DOUBLE_SCALE for _ in range(n)),
            dtype=np.float64,
            count=n,
        )

    def normals(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller. Consumes 2*ceil(n/2) words."""
        m = (n + 1) // 2
        u = self.uniforms(2 * m)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps the log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        z = np.empty(2 * m, dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]

    def normal(self) -> float:
        return float(self.normals(1)[0])

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        return self.normals(rows * cols).reshape(rows, cols)

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        """n ints uniform on [low, high). Consumes n words."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        span = high - low
        u = self.uniforms(n)
        vals = np.minimum((u * span).astype(np.int64), span - 1)
        return vals + low

    def integer(self, low: int, high: int) -> int:
        return int(self.integers(low, high, 1)[0])

    def choice(self, weights) -> int:
        """Index drawn with the given (normalized) weights. One word."""
        w = np.asarray(weights, dtype=np.float64)
        edges = np.cumsum(w / w.sum())
        return int(np.searchsorted(edges, self.uniform(), side="right"))
