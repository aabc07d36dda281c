"""Deterministic seed splitting (same blake2b rule as the certifier side,
reimplemented here so the runner stays dependency-free)."""

from __future__ import annotations

import hashlib

import numpy as np

_INT_BYTES = 16


def split_seed(seed: int, tag: str, index: int = 0) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed).to_bytes(_INT_BYTES, "little", signed=True))
    h.update(tag.encode("utf-8"))
    h.update(int(index).to_bytes(_INT_BYTES, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


def rng_from(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(split_seed(seed, tag, index))
