"""Deterministic derivation of named RNG sub-streams from one run seed.

Every source of randomness in a run is keyed by (seed, stream name[, index])
so that re-running with the same seed reproduces each stream bit-for-bit,
independent of evaluation order or thread count.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seed_sequence(seed: int, name: str, *indices: int) -> np.random.SeedSequence:
    """SeedSequence for the sub-stream `name` (optionally indexed) of `seed`."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, _name_key(name)]
    entropy.extend(int(i) & 0xFFFFFFFFFFFFFFFF for i in indices)
    return np.random.SeedSequence(entropy)


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Generator for the named sub-stream of `seed`."""
    return np.random.default_rng(seed_sequence(seed, name, *indices))


def substream_seed(seed: int, name: str, *indices: int) -> int:
    """A 63-bit integer seed derived from the named sub-stream (for nested configs)."""
    return int(seed_sequence(seed, name, *indices).generate_state(1)[0] >> 1)
