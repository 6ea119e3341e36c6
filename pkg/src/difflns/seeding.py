"""Seed derivation and counter-based uniforms.

Every random draw in the package is keyed by integers rather than by the
order in which draws happen, so parallel or permuted execution reproduces
serial results.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a tuple of non-negative integer keys."""
    seq = np.random.SeedSequence(entropy=[int(k) & _MASK64 for k in keys])
    lo, hi = seq.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def keyed_uniforms(seed: int, *keys) -> np.ndarray:
    """Uniforms in [0, 1), one per element of the broadcast ``keys`` arrays.

    Each output depends only on ``(seed, keys...)`` at that position.
    """
    arrays = np.broadcast_arrays(*[np.asarray(k, dtype=np.int64) for k in keys])
    h = np.full(arrays[0].shape, np.uint64(seed & _MASK64), dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _splitmix64(h)
        for a in arrays:
            h = _splitmix64(h ^ a.astype(np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
