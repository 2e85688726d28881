"""Deterministic seed derivation for parallel-safe random streams.

Every stochastic component (support draws, per-pair sampling chains, Q
initialisation) owns a private ``numpy`` generator seeded through
:func:`mix64`, so results never depend on execution or chunking order.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(*values: int) -> int:
    """Fold integers into one 64-bit seed with the splitmix64 finalizer.

    Stable across platforms and Python versions; negative inputs are taken
    modulo 2**64.
    """
    acc = 0
    for v in values:
        acc = (acc + _GOLDEN + (int(v) & _MASK64)) & _MASK64
        acc ^= acc >> 30
        acc = (acc * 0xBF58476D1CE4E5B9) & _MASK64
        acc ^= acc >> 27
        acc = (acc * 0x94D049BB133111EB) & _MASK64
        acc ^= acc >> 31
    return acc


def generator(*seed_parts: int) -> np.random.Generator:
    """PCG64 generator for the stream identified by ``seed_parts``."""
    return np.random.default_rng(mix64(*seed_parts))
