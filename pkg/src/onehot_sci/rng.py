"""Stateless counter-based random numbers.

Each value is a pure function of ``(seed, counters...)``, so a mask element
does not depend on iteration order, chunking or platform. The mixer is the
SplitMix64 finalizer applied once per key word.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_u64(seed: int, *counters) -> np.ndarray:
    """64-bit hash of ``seed`` and broadcastable integer counter arrays."""
    with np.errstate(over="ignore"):
        state = _mix(np.asarray(seed % 2**64, dtype=np.uint64) + _GOLDEN)
        for c in counters:
            c = np.asarray(c).astype(np.uint64)
            state = _mix(state ^ (c + _GOLDEN) * _GOLDEN)
    return state


def uniform01(seed: int, *counters) -> np.ndarray:
    """Uniform doubles in [0, 1) built from the top 53 bits of the hash."""
    bits = hash_u64(seed, *counters) >> np.uint64(11)
    return bits.astype(np.float64) * (1.0 / 2**53)


def gaussian_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed on ``(seed, stream)``.

    Streams with different ids are independent and jointly reproducible.
    """
    key = np.array([seed % 2**64, stream % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
