"""
Parallel-beam forward projector and its exact adjoint

Each detector pixel casts one ray; the system matrix entry for (ray, voxel)
is the exact length of the ray inside that voxel (Siddon-style plane
crossings). Projection and backprojection are the matrix and its transpose,
so adjointness holds to rounding.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np
import scipy.sparse as sp
import structlog

from src.core.exceptions import DomainError, GeometryError, ShapeError, ValidationError
from src.projector.geometry import DetectorSpec, ViewPose
from src.volume.grid import VoxelGrid

logger = structlog.get_logger(__name__)

_PARALLEL_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class Projection:
    """Log-domain detector image p(u, v), shape (nu, nv)"""

    pose: ViewPose
    detector: DetectorSpec
    log_values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.log_values, dtype=np.float64)
        if values.shape != (self.detector.nu, self.detector.nv):
            raise ShapeError(f"projection shape {values.shape} != detector ({self.detector.nu}, {self.detector.nv})")
        if not np.all(np.isfinite(values)):
            raise ValidationError("projection values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "log_values", values)


def _ray_origins(pose: ViewPose, detector: DetectorSpec, rays: np.ndarray) -> np.ndarray:
    _, u, v, origin = pose.axes()
    iu = rays % detector.nu
    iv = rays // detector.nu
    return origin + (iu * detector.pitch_u)[:, None] * u + (iv * detector.pitch_v)[:, None] * v


def _intersections(
    rays: np.ndarray,
    pose: ViewPose,
    detector: DetectorSpec,
    dims: Tuple[int, int, int],
    spacing: Tuple[float, float, float],
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(ray, voxel, length) triplets for a chunk of flat ray indices"""
    direction = np.asarray(pose.ray_direction, dtype=np.float64)
    p0 = _ray_origins(pose, detector, rays)
    extent = np.asarray(dims, dtype=np.float64) * np.asarray(spacing)

    t_enter = np.full(len(rays), -np.inf)
    t_exit = np.full(len(rays), np.inf)
    hit = np.ones(len(rays), dtype=bool)
    crossings = []
    for axis in range(3):
        if abs(direction[axis]) < _PARALLEL_EPS:
            hit &= (p0[:, axis] > 0.0) & (p0[:, axis] < extent[axis])
            continue
        planes = np.arange(dims[axis] + 1, dtype=np.float64) * spacing[axis]
        t = (planes[None, :] - p0[:, axis, None]) / direction[axis]
        t_enter = np.maximum(t_enter, np.minimum(t[:, 0], t[:, -1]))
        t_exit = np.minimum(t_exit, np.maximum(t[:, 0], t[:, -1]))
        crossings.append(t)
    hit &= t_exit > t_enter

    t_all = np.concatenate(crossings + [t_enter[:, None], t_exit[:, None]], axis=1)
    inside = (t_all >= t_enter[:, None]) & (t_all <= t_exit[:, None]) & hit[:, None]
    t_all = np.sort(np.where(inside, t_all, np.nan), axis=1)

    lengths = np.diff(t_all, axis=1)
    mids = 0.5 * (t_all[:, 1:] + t_all[:, :-1])
    valid = np.isfinite(lengths) & (lengths > 0.0)
    ray_local, seg = np.nonzero(valid)

    points = p0[ray_local] + mids[ray_local, seg][:, None] * direction
    idx = np.floor(points / np.asarray(spacing)).astype(np.int64)
    idx = np.clip(idx, 0, np.asarray(dims) - 1)
    voxel = idx[:, 0] + dims[0] * (idx[:, 1] + dims[1] * idx[:, 2])
    return rays[ray_local], voxel, lengths[ray_local, seg]


@lru_cache(maxsize=32)
def system_matrix(
    dims: Tuple[int, int, int],
    spacing: Tuple[float, float, float],
    pose: ViewPose,
    detector: DetectorSpec,
    workers: int = 1,
) -> sp.csr_matrix:
    """Sparse A (rays x voxels); rows follow detector flat order, columns voxel flat order"""
    pose.check()
    detector.check()
    dims = tuple(int(d) for d in dims)
    spacing = tuple(float(s) for s in spacing)
    n_rays = detector.nu * detector.nv
    n_voxels = int(np.prod(dims))

    chunks = np.array_split(np.arange(n_rays, dtype=np.int64), max(1, workers))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _intersections(c, pose, detector, dims, spacing), chunks))
    else:
        parts = [_intersections(c, pose, detector, dims, spacing) for c in chunks]

    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n_rays, n_voxels)).tocsr()
    if matrix.nnz == 0:
        raise GeometryError(f"{pose.view_id} pose: no detector ray intersects a {dims} volume")
    logger.debug("system_matrix_built", view=pose.view_id, dims=dims, nnz=int(matrix.nnz))
    return matrix


def project_parallel(grid: VoxelGrid, pose: ViewPose, detector: DetectorSpec, workers: int = 1) -> Projection:
    """p(u, v) = sum over voxels of attenuation x intersection length"""
    values = project_array(grid.values, grid.spacing, pose, detector, workers)
    return Projection(pose=pose, detector=detector, log_values=values)


def project_array(values: np.ndarray, spacing, pose: ViewPose, detector: DetectorSpec, workers: int = 1) -> np.ndarray:
    """Forward projection of an unconstrained 3D array (no [0, 1] requirement)"""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3:
        raise ShapeError(f"expected a 3D array, got shape {values.shape}")
    matrix = system_matrix(values.shape, tuple(spacing), pose, detector, workers)
    return (matrix @ values.ravel(order="F")).reshape((detector.nu, detector.nv), order="F")


def backproject(p: Projection, dims, spacing, workers: int = 1) -> np.ndarray:
    """Aᵀ y accumulated into a (nx, ny, nz) array"""
    return backproject_array(p.log_values, p.pose, p.detector, dims, spacing, workers)


def backproject_array(values: np.ndarray, pose: ViewPose, detector: DetectorSpec, dims, spacing,
                      workers: int = 1) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (detector.nu, detector.nv):
        raise GeometryError(f"detector image {values.shape} does not match detector ({detector.nu}, {detector.nv})")
    dims = tuple(int(d) for d in dims)
    matrix = system_matrix(dims, tuple(float(s) for s in spacing), pose, detector, workers)
    return (matrix.T @ values.ravel(order="F")).reshape(dims, order="F")


def attenuate(p: Projection, i0: float) -> np.ndarray:
    """Beer-Lambert: I = I0 * exp(-p)"""
    if not i0 > 0:
        raise DomainError(f"incident intensity must be > 0, got {i0}")
    return i0 * np.exp(-p.log_values)


def log_measurement(intensity: np.ndarray, i0: float) -> np.ndarray:
    """Inverse of ``attenuate``: p = -log(I / I0)"""
    if not i0 > 0:
        raise DomainError(f"incident intensity must be > 0, got {i0}")
    intensity = np.asarray(intensity, dtype=np.float64)
    if np.any(intensity <= 0):
        raise DomainError("measured intensities must be > 0")
    return -np.log(intensity / i0)


def normalize_drr(p: Projection) -> np.ndarray:
    """Per-image min-max scaling to [0, 1] for the view encoder"""
    values = p.log_values
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)
