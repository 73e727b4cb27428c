"""
Seed splitting shared by every stochastic stage.

Child seeds are derived from a master seed and a tuple of keys, so parallel
work units (shots chunks, replicas, candidates, test samples) draw
independent, reproducible streams regardless of evaluation order.
"""

import hashlib
from typing import Union

import numpy as np

SeedKey = Union[int, str]


def _key_to_int(key: SeedKey) -> int:
    if isinstance(key, str):
        return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:4], "little")
    if key < 0:
        raise ValueError(f"Seed keys must be non-negative, got {key}")
    return int(key)


def derive_seed(master: int, *keys: SeedKey) -> int:
    """Derive a 32-bit child seed from a master seed and ordered keys"""
    entropy = [_key_to_int(master)] + [_key_to_int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def make_rng(master: int, *keys: SeedKey) -> np.random.Generator:
    """Generator seeded from ``derive_seed(master, *keys)``"""
    return np.random.default_rng(derive_seed(master, *keys))
