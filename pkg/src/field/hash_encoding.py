"""
Multi-resolution hash encoding of normalized 3D coordinates

Level l scales x in [0, 1]^3 to a grid of resolution T_l and trilinearly
blends the feature rows of the 8 surrounding vertices. Coarse levels whose
(T_l + 1)^3 vertices fit into the table are indexed densely; finer levels hash
vertices with an XOR of prime products, wrapping at 32 bits.
"""
from typing import List, Tuple

import numpy as np
import structlog

from src.autodiff import init, ops
from src.autodiff.module import Module
from src.autodiff.tensor import Tensor
from src.core.config import HashEncoderConfig
from src.core.exceptions import DomainError, ShapeError

logger = structlog.get_logger(__name__)

DOMAIN_TOL = 1e-9
_U32 = np.uint64(0xFFFFFFFF)

# corner c of a cell sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1)
CORNER_OFFSETS = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)], dtype=np.int64)


def is_dense_level(resolution: int, table_size: int) -> bool:
    return (resolution + 1) ** 3 <= table_size


def hash_index(vertex: np.ndarray, resolution: int, config: HashEncoderConfig) -> np.ndarray:
    """Table row(s) for integer vertex coordinates (..., 3) at a level of ``resolution``"""
    vertex = np.asarray(vertex, dtype=np.int64)
    if vertex.shape[-1] != 3:
        raise ShapeError(f"vertices must have 3 components, got shape {vertex.shape}")
    if np.any(vertex < 0):
        raise DomainError("vertex coordinates must be >= 0")
    table_size = config.table_size
    if is_dense_level(resolution, table_size):
        side = resolution + 1
        return (vertex[..., 0] + vertex[..., 1] * side + vertex[..., 2] * side * side).astype(np.int64)
    v = vertex.astype(np.uint64)
    p1, p2, p3 = (np.uint64(p) for p in config.primes)
    h = ((v[..., 0] * p1) & _U32) ^ ((v[..., 1] * p2) & _U32) ^ ((v[..., 2] * p3) & _U32)
    return (h & np.uint64(table_size - 1)).astype(np.int64)


def check_unit_cube(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ShapeError(f"expected (N, 3) points, got {points.shape}")
    if np.any(points < -DOMAIN_TOL) or np.any(points > 1.0 + DOMAIN_TOL):
        raise DomainError("points must lie in [0, 1]^3")
    return np.clip(points, 0.0, 1.0)


def cell_and_weights(points: np.ndarray, resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    """Lower cell corner (N, 3) and trilinear weights (N, 8); x = 1 uses the last cell"""
    scaled = points * resolution
    base = np.minimum(np.floor(scaled).astype(np.int64), resolution - 1)
    frac = scaled - base
    per_axis = np.where(CORNER_OFFSETS[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    return base, per_axis.prod(axis=2)


class HashEncoder(Module):
    """One learnable table of T_max x F rows per level"""

    def __init__(self, config: HashEncoderConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.config = config
        self.resolutions = config.resolutions
        self.tables: List[Tensor] = [
            self.add_parameter(f"level{level}", init.hash_uniform(
                rng, (config.table_size, config.features_per_level), dtype))
            for level in range(config.levels)
        ]
        dense = sum(is_dense_level(r, config.table_size) for r in self.resolutions)
        logger.debug("hash_encoder_built", levels=config.levels, resolutions=self.resolutions, dense_levels=dense)

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    def level_rows(self, points: np.ndarray, level: int) -> Tuple[np.ndarray, np.ndarray]:
        """Row indices (N, 8) and weights (N, 8) touched by ``points`` at ``level``"""
        resolution = self.resolutions[level]
        base, weights = cell_and_weights(points, resolution)
        vertices = base[:, None, :] + CORNER_OFFSETS[None, :, :]
        return hash_index(vertices, resolution, self.config), weights

    def encode_points(self, points: np.ndarray) -> Tensor:
        """(N, 3) normalized coordinates -> (N, L*F) concatenated level features"""
        points = check_unit_cube(points)
        per_level = []
        for level, table in enumerate(self.tables):
            rows, weights = self.level_rows(points, level)
            per_level.append(ops.trilinear_blend(ops.gather_rows(table, rows.ravel()), weights))
        return ops.concat(per_level, axis=1)

    __call__ = encode_points
