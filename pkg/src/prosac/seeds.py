"""Deterministic seed derivation.

One top-level integer seed reproduces an entire run: every consumer of
randomness (calibration draws, UCB observation noise, Monte Carlo trials)
derives its own 64-bit stream seed from (seed, purpose tag, index) through
a keyed hash, so adding or reordering consumers never perturbs the others.
"""

from __future__ import annotations

import hashlib

import numpy as np

_INT_BYTES = 16


def split_seed(seed: int, tag: str, index: int = 0) -> int:
    """Derive a 64-bit child seed from (seed, tag, index) via blake2b."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed).to_bytes(_INT_BYTES, "little", signed=True))
    h.update(tag.encode("utf-8"))
    h.update(int(index).to_bytes(_INT_BYTES, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


def rng_from(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """A fresh PCG64 generator seeded by split_seed(seed, tag, index)."""
    return np.random.default_rng(split_seed(seed, tag, index))


def hash_floats(values) -> int:
    """64-bit content hash of a float vector (used to key per-point streams)."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    h = hashlib.blake2b(arr.tobytes(), digest_size=8)
    return int.from_bytes(h.digest(), "little")
