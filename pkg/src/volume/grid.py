"""
Volumetric grids and coordinate conventions

Values are stored as numpy arrays of shape (nx, ny, nz) indexed [i, j, k].
Whenever a grid is flattened (files, system matrices) the order is x fastest,
then y, then z, i.e. numpy Fortran order.
"""
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from src.core.exceptions import DomainError, ShapeError, ValidationError

Dims = Tuple[int, int, int]
Spacing = Tuple[float, float, float]


def _check_geometry(dims: Sequence[int], spacing: Sequence[float]) -> None:
    if len(dims) != 3 or min(dims) < 2:
        raise ValidationError(f"dims must be three components >= 2, got {tuple(dims)}")
    if len(spacing) != 3 or min(spacing) <= 0:
        raise ValidationError(f"spacing must be three positive components, got {tuple(spacing)}")


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Normalized attenuation field in [0, 1]

    Stored as float32 unless float64 values are passed in; SPVOL files always
    hold float32.
    """

    values: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        values = np.asarray(self.values)
        values = values.astype(np.float64 if values.dtype == np.float64 else np.float32)
        spacing = tuple(float(s) for s in self.spacing)
        _check_geometry(values.shape, spacing)
        if not np.all(np.isfinite(values)):
            raise ValidationError("voxel values must be finite")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValidationError(f"voxel values must lie in [0, 1], got [{values.min()}, {values.max()}]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> Dims:
        return tuple(int(d) for d in self.values.shape)

    @property
    def extent_mm(self) -> np.ndarray:
        return np.asarray(self.dims, dtype=np.float64) * np.asarray(self.spacing)

    def flat(self) -> np.ndarray:
        return self.values.ravel(order="F")

    @classmethod
    def zeros(cls, dims: Dims, spacing: Spacing = (1.0, 1.0, 1.0)) -> "VoxelGrid":
        return cls(np.zeros(dims, dtype=np.float32), spacing)

    @classmethod
    def from_clamped(cls, values: np.ndarray, spacing: Spacing) -> "VoxelGrid":
        return cls(np.clip(np.nan_to_num(values, nan=0.0), 0.0, 1.0), spacing)


@dataclass(frozen=True, eq=False)
class LabelGrid:
    """Per-voxel class ids; 0 is background and ``class_count`` counts the structures"""

    labels: np.ndarray
    class_count: int
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.size and labels.min() < 0:
            raise ValidationError("labels must be non-negative")
        labels = labels.astype(np.uint16)
        spacing = tuple(float(s) for s in self.spacing)
        _check_geometry(labels.shape, spacing)
        if self.class_count < 1:
            raise ValidationError(f"class_count must be >= 1, got {self.class_count}")
        if labels.size and int(labels.max()) > self.class_count:
            raise ValidationError(f"label {int(labels.max())} exceeds class_count {self.class_count}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> Dims:
        return tuple(int(d) for d in self.labels.shape)

    def flat(self) -> np.ndarray:
        return self.labels.ravel(order="F")

    def mask(self, class_id: int) -> np.ndarray:
        return self.labels == class_id

    def check_pairs_with(self, grid: VoxelGrid) -> None:
        if self.dims != grid.dims:
            raise ShapeError(f"label dims {self.dims} do not match voxel dims {grid.dims}")


def linear_index(index: Sequence[int], dims: Dims) -> int:
    i, j, k = _checked_index(index, dims)
    return i + dims[0] * (j + dims[1] * k)


def unravel(flat_index: int, dims: Dims) -> Tuple[int, int, int]:
    if not 0 <= flat_index < int(np.prod(dims)):
        raise DomainError(f"flat index {flat_index} outside grid of dims {dims}")
    i = flat_index % dims[0]
    j = (flat_index // dims[0]) % dims[1]
    k = flat_index // (dims[0] * dims[1])
    return int(i), int(j), int(k)


def _checked_index(index: Sequence[int], dims: Dims) -> Tuple[int, int, int]:
    if len(index) != 3:
        raise DomainError(f"expected a 3-component index, got {tuple(index)}")
    for axis, (n, d) in enumerate(zip(index, dims)):
        if not 0 <= n < d:
            raise DomainError(f"index {tuple(index)} out of bounds on axis {axis} (size {d})")
    return int(index[0]), int(index[1]), int(index[2])


def normalized_coord(index: Sequence[int], dims: Dims) -> np.ndarray:
    """Voxel center in [0, 1]^3: ((i + 0.5) / nx, (j + 0.5) / ny, (k + 0.5) / nz)"""
    idx = np.asarray(_checked_index(index, dims), dtype=np.float64)
    return (idx + 0.5) / np.asarray(dims, dtype=np.float64)


def nearest_voxel(point: Sequence[float], dims: Dims) -> Tuple[int, int, int]:
    p = np.asarray(point, dtype=np.float64)
    idx = np.clip(np.floor(p * np.asarray(dims)), 0, np.asarray(dims) - 1).astype(int)
    return int(idx[0]), int(idx[1]), int(idx[2])


def voxel_centers(dims: Dims) -> np.ndarray:
    """All voxel centers in flat (x-fastest) order, shape (N, 3)"""
    axes = [(np.arange(n, dtype=np.float64) + 0.5) / n for n in dims]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx.ravel(order="F"), gy.ravel(order="F"), gz.ravel(order="F")], axis=1)
