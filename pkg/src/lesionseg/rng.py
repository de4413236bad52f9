"""SplitMix64 random stream with counter-based vectorised draws.

Every stochastic step in the pipeline draws from an :class:`RngState`, so a
(master seed, epoch, sample index) triple pins the outcome on any platform.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)

__all__ = ["RngState", "splitmix64_mix", "derive_rng"]


def splitmix64_mix(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class RngState:
    """A SplitMix64 generator. Not thread-safe; derive one per task instead."""

    __slots__ = ("state",)

    def __init__(self, seed: int) -> None:
        self.state = int(seed) & MASK64

    def copy(self) -> "RngState":
        return RngState(self.state)

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return splitmix64_mix(self.state)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        """A float in ``[low, high)``."""
        u = (self.next_u64() >> 11) * _INV_2_53
        return low + (high - low) * u

    def integer(self, low: int, high: int) -> int:
        """An integer in ``[low, high)``."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        return low + int(((self.next_u64() >> 11) * _INV_2_53) * (high - low))

    def u64_block(self, n: int) -> np.ndarray:
        """The next ``n`` outputs as a uint64 array, same stream as ``next_u64``."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(GAMMA)
        self.state = (self.state + n * GAMMA) & MASK64
        return _mix_array(states)

    def uniform_block(self, n: int) -> np.ndarray:
        return (self.u64_block(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def integer_block(self, low: int, high: int, n: int) -> np.ndarray:
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        return low + np.floor(self.uniform_block(n) * (high - low)).astype(np.int64)

    def permutation(self, n: int) -> list:
        """Fisher-Yates shuffle of ``range(n)``."""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integer(0, i + 1)
            order[i], order[j] = order[j], order[i]
        return order


def derive_rng(master_seed: int, epoch: int, index: int) -> RngState:
    """Independent stream for one sample of one epoch."""
    key = ((int(epoch) << 32) + int(index)) & MASK64
    return RngState(splitmix64_mix((int(master_seed) & MASK64) ^ key))
