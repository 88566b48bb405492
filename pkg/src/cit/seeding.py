"""Deterministic seed derivation for reproducible, parallel-safe experiments.

Every source of randomness in the package is a `numpy` Generator obtained
from a master seed plus a *counter path*: a tuple of integers and string
tags.  The same (master, path) always yields the same stream; distinct
paths yield statistically independent streams.  This lets trials and bins
be generated in any order (or in parallel) without changing results.
"""

from __future__ import annotations

import hashlib

import numpy as np

_KEY_SPACE = 2**32


def _as_key(part) -> int:
    """Map one path component to a 32-bit counter key.

    Non-negative integers fold into 32 bits; strings and floats hash via
    SHA-256 so tags like family names get stable cross-platform keys.
    """
    if isinstance(part, (bool, float)):
        return _as_key(repr(part))
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"seed path components must be >= 0, got {part}")
        return int(part) % _KEY_SPACE
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "little")
    raise TypeError(f"unsupported seed path component: {part!r}")


def seed_sequence(master: int, *path) -> np.random.SeedSequence:
    """Child seed stream for counter `path` under `master`."""
    return np.random.SeedSequence(int(master), spawn_key=tuple(_as_key(p) for p in path))


def child_seed(master: int, *path) -> int:
    """A plain integer seed derived from (master, path)."""
    return int(seed_sequence(master, *path).generate_state(1)[0])


def generator(master: int, *path) -> np.random.Generator:
    """`default_rng` over `seed_sequence(master, *path)`."""
    return np.random.default_rng(seed_sequence(master, *path))


def as_generator(seed) -> np.random.Generator:
    """Coerce an int seed, SeedSequence, or Generator to a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
