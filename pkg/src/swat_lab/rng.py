"""Deterministic random streams.

A single experiment seed fans out into independent named substreams (one per
parameter, one per data shuffle, and so on). Streams are Philox counter-based
generators keyed by a hash of (seed, label), so adding a new consumer never
perturbs existing ones.
"""
from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for (seed, label), stable across processes."""
    digest = hashlib.blake2b(f"{seed}:{label}".encode(), digest_size=16).digest()
    key = int.from_bytes(digest, "little")
    return np.random.Generator(np.random.Philox(key=key))


def truncated_normal(
    rng: np.random.Generator, shape: tuple[int, ...], std: float, clip: float = 2.0
) -> np.ndarray:
    """Normal(0, std) with draws beyond clip standard deviations resampled."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > clip
    # Resampling preserves the stream's determinism: draw counts depend only
    # on the values already drawn.
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > clip
    return out * std
