"""Deterministic seed fan-out.

A single run seed is expanded into independent child streams keyed by
(stage, user, ...) so that adding a user or a stage never shifts the
randomness seen by the others.
"""
import zlib

import numpy as np

STAGES = ("synthetic", "balance", "extra_trees", "svm", "permute", "pilot")


def _stage_key(stage: str) -> int:
    return zlib.crc32(stage.encode("utf-8"))


def seed_sequence(seed: int, stage: str, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=(_stage_key(stage),) + tuple(int(k) for k in keys),
    )


def derive_seed(seed: int, stage: str, *keys: int) -> int:
    """Return a 63-bit integer seed for ``stage`` and ``keys``."""
    state = seed_sequence(seed, stage, *keys).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def rng(seed: int, stage: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, stage, *keys))
