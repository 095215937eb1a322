"""Splittable seeding.

Every random stream is derived from ``(master_seed, purpose_tag, index...)``
through :class:`numpy.random.SeedSequence`, so a stream's contents never
depend on how many other streams were drawn before it or on worker order.
"""
from __future__ import annotations

import zlib

import numpy as np


def _tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def seed_sequence(master_seed: int, tag: str, *index: int) -> np.random.SeedSequence:
    key = (_tag_key(tag),) + tuple(int(i) for i in index)
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)


def stream(master_seed: int, tag: str, *index: int) -> np.random.Generator:
    """Independent generator for one purpose, e.g. ``stream(seed, "trial", 3)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, tag, *index)))


def derive_seed(master_seed: int, tag: str, *index: int) -> int:
    """A 63-bit integer seed for handing to a sub-experiment."""
    return int(seed_sequence(master_seed, tag, *index).generate_state(1, np.uint64)[0] >> np.uint64(1))
