"""Deterministic seed derivation for every random decision in a run.

All randomness flows from (master_seed, *tags) through SeedSequence, so
any client round, synthesis pass, or shard split can be reproduced in
isolation and runs are byte-stable across processes.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _as_entropy(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seed_sequence(master_seed: int, *tags) -> np.random.SeedSequence:
    return np.random.SeedSequence([_as_entropy(master_seed)]
                                  + [_as_entropy(t) for t in tags])


def spawn_rng(master_seed: int, *tags) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master_seed, *tags))


def derived_seed(master_seed: int, *tags) -> int:
    """A plain integer seed derived from (master, tags); stable across runs."""
    return int(seed_sequence(master_seed, *tags).generate_state(1, np.uint64)[0])
