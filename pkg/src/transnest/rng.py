"""Seeded random streams.

Every consumer asks for a labelled substream of the run seed, so adding a
draw in one stage never shifts the numbers seen by another.
"""

import hashlib

import numpy as np


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")


def substream(seed: int, label: str) -> np.random.Generator:
    """PCG64 generator derived from ``(seed, label)``."""
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_label_key(label),))
    return np.random.Generator(np.random.PCG64(ss))
