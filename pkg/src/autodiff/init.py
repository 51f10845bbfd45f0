"""
Parameter initialisers
"""
from typing import Sequence

import numpy as np

HASH_INIT_SCALE = 1e-4


def glorot_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int, fan_out: int,
                   dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=tuple(shape)).astype(dtype)


def zeros(shape: Sequence[int], dtype=np.float32) -> np.ndarray:
    return np.zeros(tuple(shape), dtype=dtype)


def hash_uniform(rng: np.random.Generator, shape: Sequence[int], dtype=np.float32) -> np.ndarray:
    return rng.uniform(-HASH_INIT_SCALE, HASH_INIT_SCALE, size=tuple(shape)).astype(dtype)
