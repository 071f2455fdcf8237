"""Deterministic random streams shared between Python code and compiled kernels.

A :class:`RandomStream` owns two faces of the same seeded stream: a numpy
``Generator`` for Python-level sampling (seed relaxation, shuffles) and a raw
xoshiro256** state that the nopython kernels advance in place. Streams for
distinct ids derived from the same seed are statistically independent.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << k) | (x >> (_U64(64) - k))


@njit(cache=True)
def rng_next(state, row):
    """xoshiro256** step on ``state[row, 0:4]``; returns a uint64."""
    s0 = state[row, 0]
    s1 = state[row, 1]
    s2 = state[row, 2]
    s3 = state[row, 3]
    result = _rotl(s1 * _U64(5), _U64(7)) * _U64(9)
    t = s1 << _U64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, _U64(45))
    state[row, 0] = s0
    state[row, 1] = s1
    state[row, 2] = s2
    state[row, 3] = s3
    return result


@njit(cache=True)
def rng_uniform(state, row):
    """Uniform float64 in [0, 1)."""
    return (rng_next(state, row) >> _U64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def rng_gauss(state, row):
    """Standard normal via Box-Muller (one value per call)."""
    u1 = 1.0 - rng_uniform(state, row)  # (0, 1], keeps log finite
    u2 = rng_uniform(state, row)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _splitmix64(x: np.uint64) -> np.uint64:
    x = _U64(x) + _GOLDEN
    z = x
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


class RandomStream:
    """Seeded stream ``(seed, stream_id)``; same pair gives the same sequence."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))
        # Kernel state is derived independently of the Generator draw order so
        # Python-side sampling never perturbs kernel determinism.
        state = ss.generate_state(4, dtype=np.uint64)
        with np.errstate(over="ignore"):
            state = np.array([_splitmix64(w) for w in state], dtype=np.uint64)
        if not state.any():
            state[0] = _GOLDEN
        self.kernel_state = state.reshape(1, 4)

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"
