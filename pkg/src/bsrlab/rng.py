"""Counter-based random streams.

Draw ``i`` of a stream with key ``k`` is ``mix64(k + i * GOLDEN)``, so a run
can be resumed or split by position alone.  The same arithmetic is used in
the compiled simulator kernels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, uint64

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix_py(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> uint64(30))) * _M1
    z = (z ^ (z >> uint64(27))) * _M2
    return z ^ (z >> uint64(31))


@njit(cache=True, inline="always")
def draw_u64(key, counter):
    return mix64(key + counter * GOLDEN)


@njit(cache=True, inline="always")
def draw_below(key, counter, n):
    """Uniform integer in [0, n) from 53 random bits."""
    x = draw_u64(key, counter) >> uint64(11)
    return np.int64(np.float64(x) * (1.0 / 9007199254740992.0) * n)


def derive_key(seed: int, run_index: int = 0) -> int:
    """Stream key for run ``run_index`` of a seed."""
    return _mix_py(_mix_py(int(seed) * 0x9E3779B97F4A7C15 + 1) ^ (int(run_index) + 0x632BE59BD9B4E019))


@dataclass
class CounterRNG:
    key: int
    counter: int = 0

    @classmethod
    def from_seed(cls, seed: int, run_index: int = 0) -> "CounterRNG":
        return cls(derive_key(seed, run_index), 0)

    def split(self, index: int) -> "CounterRNG":
        return CounterRNG(_mix_py(self.key ^ _mix_py(index + 1)), 0)

    def numpy(self) -> np.random.Generator:
        """A numpy generator seeded from this stream, for auxiliary sampling."""
        return np.random.Generator(np.random.Philox(key=self.key))
