"""
Witness for the underdetermination of biplanar projection

The stacked two-view system matrix has far fewer rows than voxels, so there
are distinct volumes with identical projections. This module builds one such
pair explicitly.
"""
from typing import Sequence, Tuple

import numpy as np
import scipy.linalg
import structlog

from src.core.exceptions import DomainError, NoWitnessError
from src.projector.geometry import DetectorSpec, ViewPose
from src.projector.operator import project_array
from src.volume.grid import VoxelGrid, unravel

logger = structlog.get_logger(__name__)

MAX_WITNESS_SIDE = 6


def assemble_dense(dims, spacing, poses: Sequence[ViewPose], detector: DetectorSpec) -> np.ndarray:
    """A_bp (M x N) by probing the projector with unit basis volumes"""
    dims = tuple(int(d) for d in dims)
    n_voxels = int(np.prod(dims))
    columns = []
    for n in range(n_voxels):
        basis = np.zeros(dims)
        basis[unravel(n, dims)] = 1.0
        columns.append(np.concatenate([
            project_array(basis, spacing, pose, detector).ravel(order="F") for pose in poses
        ]))
    return np.stack(columns, axis=1)


def null_space_witness(
    dims,
    spacing,
    poses: Sequence[ViewPose],
    detector: DetectorSpec,
    seed: int = 0,
    step: float = 0.25,
) -> Tuple[VoxelGrid, VoxelGrid]:
    """Return (x, x') with A_bp x = A_bp x' and max |x - x'| = ``step``"""
    if max(dims) > MAX_WITNESS_SIDE:
        raise DomainError(f"dense assembly limited to {MAX_WITNESS_SIDE}^3 voxels, got {tuple(dims)}")
    matrix = assemble_dense(dims, spacing, poses, detector)
    basis = scipy.linalg.null_space(matrix)
    if basis.shape[1] == 0:
        raise NoWitnessError(f"A_bp of shape {matrix.shape} has full column rank")
    logger.info("null_space_found", rows=matrix.shape[0], cols=matrix.shape[1], nullity=basis.shape[1])

    rng = np.random.default_rng(seed)
    direction = basis @ rng.normal(size=basis.shape[1])
    direction /= np.abs(direction).max()
    x = rng.uniform(0.3, 0.7, size=matrix.shape[1])
    x_prime = x + step * direction

    shape = tuple(int(d) for d in dims)
    return (
        VoxelGrid(x.reshape(shape, order="F"), spacing),
        VoxelGrid(x_prime.reshape(shape, order="F"), spacing),
    )
