"""
Isosurface meshes for structural comparison figures
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import structlog
from skimage import measure

from src.core.exceptions import ShapeError, ValidationError

logger = structlog.get_logger(__name__)

DEGENERATE_AREA = 1e-12


@dataclass
class SurfaceMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    @classmethod
    def empty(cls) -> "SurfaceMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_areas(self) -> np.ndarray:
        if self.is_empty:
            return np.zeros(0)
        p = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def edges(self) -> np.ndarray:
        """Unique undirected edges (E, 2)"""
        if self.is_empty:
            return np.zeros((0, 2), dtype=np.int64)
        t = self.triangles
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(pairs, axis=1), axis=0)

    def euler_characteristic(self) -> int:
        used = np.unique(self.triangles) if not self.is_empty else np.zeros(0)
        return int(len(used) - len(self.edges()) + len(self.triangles))

    def check(self) -> None:
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValidationError("triangle indices out of range")
        if np.any(self.triangle_areas() <= DEGENERATE_AREA):
            raise ValidationError("mesh holds degenerate triangles")


def marching_cubes(volume: np.ndarray, iso: float = 0.5, spacing: Sequence[float] = (1.0, 1.0, 1.0),
                   pad: bool = True) -> SurfaceMesh:
    """Extract the ``iso`` surface; vertices are in millimeters at voxel-center positions

    With ``pad`` the grid gets a one-voxel border at its minimum value so surfaces
    touching the grid edge still close.
    """
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim != 3 or min(volume.shape) < 2:
        raise ShapeError(f"marching cubes needs a 3D grid of at least 2^3, got {volume.shape}")
    if not volume.min() < iso < volume.max():
        return SurfaceMesh.empty()
    spacing = np.asarray(spacing, dtype=np.float64)
    if pad:
        volume = np.pad(volume, 1, mode="constant", constant_values=float(volume.min()))
    vertices, faces, _, _ = measure.marching_cubes(volume, level=iso, spacing=tuple(spacing), allow_degenerate=False)
    offset = (0.5 - (1.0 if pad else 0.0)) * spacing
    mesh = SurfaceMesh(vertices.astype(np.float64) + offset, faces.astype(np.int64))
    keep = mesh.triangle_areas() > DEGENERATE_AREA
    if not np.all(keep):
        mesh = SurfaceMesh(mesh.vertices, mesh.triangles[keep])
    logger.debug("mesh_extracted", vertices=len(mesh.vertices), triangles=len(mesh.triangles))
    return mesh


def mask_mesh(mask: np.ndarray, spacing: Sequence[float] = (1.0, 1.0, 1.0)) -> SurfaceMesh:
    return marching_cubes(np.asarray(mask, dtype=np.float64), 0.5, spacing)


def laplacian_smooth(mesh: SurfaceMesh, iterations: int = 10, factor: float = 0.5) -> SurfaceMesh:
    """Move each vertex ``factor`` of the way to its 1-ring average, ``iterations`` times"""
    vertices = mesh.vertices.copy()
    if iterations <= 0 or mesh.is_empty:
        return SurfaceMesh(vertices, mesh.triangles.copy())
    edges = mesh.edges()
    n = len(vertices)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adjacency = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    connected = degree > 0
    for _ in range(iterations):
        average = adjacency @ vertices
        average[connected] /= degree[connected, None]
        vertices[connected] += factor * (average[connected] - vertices[connected])
    return SurfaceMesh(vertices, mesh.triangles.copy())


def save_obj(path: Path | str, mesh: SurfaceMesh) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="ascii")
