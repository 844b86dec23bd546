"""Index-keyed random streams.

Every random draw in the package is taken from a generator keyed by a tuple of
non-negative integers (root seed, query index, repeat, step, purpose...). Keyed
streams make results independent of execution order and thread count, and let
an environment state be branched or replayed without carrying generator state.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _norm(keys) -> list[int]:
    out = []
    for k in keys:
        k = int(k)
        if k < 0:
            raise ValueError(f"stream keys must be non-negative, got {k}")
        out.append(k & _MASK64)
    return out


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a tuple of integer keys."""
    words = np.random.SeedSequence(_norm(keys)).generate_state(2, dtype=np.uint32)
    return (int(words[0]) << 32) | int(words[1])


def stream(*keys: int) -> np.random.Generator:
    """Independent generator for the given key tuple."""
    return np.random.default_rng(_norm(keys))
