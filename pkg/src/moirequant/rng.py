"""Deterministic, platform-independent randomness.

All stochastic steps in the toolkit (index sampling, weight init, crops,
data synthesis) draw from a single named generator: xoshiro256** seeded
through splitmix64.  Identical seeds give identical streams on every
platform, which the sampled range estimators and the reproducibility
guarantees of the CLI depend on.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64(seed: int, k: int = 0) -> int:
    """k-th output of the splitmix64 stream started at ``seed``.

    Used to derive independent sub-seeds (per-image seeds, per-purpose
    streams) from one run seed.
    """
    return _mix64((seed + (k + 1) * _SPLITMIX_GAMMA) & MASK64)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** stream with splitmix64 state expansion."""

    __slots__ = ("_s",)

    def __init__(self, seed: int):
        seed &= MASK64
        self._s = [splitmix64(seed, i) for i in range(4)]

    def next_u64(self) -> int:
        s = self._s
        out = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return out

    def state_words(self) -> tuple[int, int, int, int]:
        """Current state, for handing the stream to compiled helpers."""
        return tuple(self._s)

    def random(self) -> float:
        """float64 uniform in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def below(self, n: int) -> int:
        """Integer in [0, n).

        Modulo reduction; the bias is immaterial for n far below 2**64.
        """
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def sample_indices(rng: Xoshiro256, n: int, gamma: float) -> np.ndarray:
    """Draw a sorted set of distinct indices covering a ``gamma`` fraction of [0, n).

    Returns max(1, round(gamma * n)) distinct indices, uniform without
    replacement (round is ties-to-even).  Deterministic for a fixed rng
    state.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    k = max(1, round(gamma * n))
    if k >= n:
        return np.arange(n, dtype=np.int64)
    if k > n // 2:
        # dense draw: partial Fisher-Yates over the full index range
        pool = np.arange(n, dtype=np.int64)
        for i in range(k):
            j = i + rng.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        picked = pool[:k]
        picked.sort()
        return picked
    picked = set()
    while len(picked) < k:
        picked.add(rng.below(n))
    return np.array(sorted(picked), dtype=np.int64)
