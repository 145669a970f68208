"""Seed-stream splitting.

Every random consumer gets its own generator derived from (seed, purpose,
*indices) through numpy's SeedSequence spawn keys, so adding a new consumer
never shifts the draws of existing ones. Purposes are hashed with CRC32 to
keep the mapping stable across processes.
"""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    key = (zlib.crc32(purpose.encode()),) + tuple(int(i) for i in indices)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
