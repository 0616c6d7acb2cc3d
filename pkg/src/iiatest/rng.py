"""Seed plumbing. Every random stream is a named child of one root seed."""

from __future__ import annotations

import zlib

import numpy as np

# Stable integer keys for named substreams.
GENERATION = 0
SAMPLING = 1
REPLICATION = 2


def seed_sequence(seed, *keys: int | str) -> np.random.SeedSequence:
    """SeedSequence for `seed` extended by `keys` (independent of call order)."""
    keys = tuple(_key(k) for k in keys)
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + keys)
    return np.random.SeedSequence(int(seed), spawn_key=keys)


def generator(seed, *keys: int | str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def _key(k: int | str) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)
