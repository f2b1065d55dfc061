"""Seeded random streams keyed by logical indices.

Every random draw in a run comes from a Philox (counter-based) generator
whose key is derived from ``(seed, role, *indices)``.  Two runs with the same
seed therefore produce the same numbers no matter how the work is scheduled.
"""
from __future__ import annotations

import zlib

import numpy as np


def _role_code(role: str) -> int:
    return zlib.crc32(role.encode("utf-8"))


def substream(seed: int, role: str, *indices: int) -> np.random.Generator:
    """Independent generator for the logical cell ``(role, *indices)``."""
    key = (_role_code(role),) + tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """Draw one index per row of ``probs`` (shape ``(m, k)``) by inverse CDF."""
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)
