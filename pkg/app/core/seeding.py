"""Stable child seeds for every stochastic stage of a run."""

import hashlib
from typing import Union

import numpy as np


Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, bool):
        raise TypeError("seed keys must be int or str")
    if isinstance(key, int):
        if key < 0:
            raise ValueError("integer seed keys must be non-negative")
        return key
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:4], "little")


def derive_seed(base_seed: int, *keys: Key) -> int:
    """Child seed of ``base_seed`` addressed by ``keys``.

    Equal (base_seed, keys) give equal seeds on every platform; different key
    paths give independent streams through ``numpy.random.SeedSequence``.
    """
    sequence = np.random.SeedSequence(entropy=base_seed, spawn_key=tuple(_key_to_int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
