"""Counter-based deterministic randomness.

All stochastic choices in the package flow through these helpers so that
identical seeds give identical results on every platform and in every
implementation. The generator is the SplitMix64 finalizer applied to a
chained fold of the input words; the constants below are the algorithm's
published ones and must not change.
"""

from __future__ import annotations

import hashlib

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(x: int) -> int:
    x = (x + _GAMMA) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return (z ^ (z >> 31)) & _MASK


def hash_chain(*parts: int) -> int:
    """Fold integer words into one 64-bit value; order-sensitive."""
    state = 0
    for part in parts:
        state = splitmix64((state ^ (part & _MASK)) & _MASK)
    return state


def label_word(label: str) -> int:
    """Stable 64-bit word for a text label (lane names, item ids)."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def unit_interval(*parts: int) -> float:
    """Uniform float in [0, 1) derived from the chained words."""
    return (hash_chain(*parts) >> 11) / float(1 << 53)


def signed_unit(*parts: int) -> float:
    """Uniform float in [-1, 1) derived from the chained words."""
    return unit_interval(*parts) * 2.0 - 1.0


def derive_seed(seed: int, *labels: str) -> int:
    """Named seed derivation: one run seed fans out to per-task streams."""
    return hash_chain(seed, *(label_word(label) for label in labels))
