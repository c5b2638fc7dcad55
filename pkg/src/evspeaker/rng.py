"""Deterministic RNG derivation.

Every random draw in the package flows from a generator derived here, keyed
by the run seed plus a purpose path (strings and integers). Python's builtin
``hash`` is salted per process, so string keys are folded through sha256 to
stay stable across runs and machines.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"rng keys must be int or str, got {type(key)!r}")


def derive_rng(*keys) -> np.random.Generator:
    """Build a generator from a sequence of int/str keys."""
    entropy = [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
