"""
Dense field evaluation into voxel and label grids
"""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import structlog

from src.core.exceptions import ConfigError
from src.field.decoder import FieldOutput
from src.field.model import SpiderModel
from src.volume.grid import LabelGrid, VoxelGrid, voxel_centers

logger = structlog.get_logger(__name__)

DEFAULT_BATCH = 8192


def _check_drr(model: SpiderModel, drr: np.ndarray, view: str) -> None:
    detector = model.geometry.detector
    if np.asarray(drr).shape[-2:] != (detector.nu, detector.nv):
        raise ConfigError(f"{view} radiograph {np.asarray(drr).shape} does not match the trained detector "
                          f"({detector.nu}, {detector.nv})")


def evaluate_dense(
    model: SpiderModel,
    drr_pa: np.ndarray,
    drr_lat: np.ndarray,
    out_dims: Sequence[int],
    batch_size: int = DEFAULT_BATCH,
    workers: int = 1,
) -> FieldOutput:
    """Field outputs at every voxel center of ``out_dims`` in flat (x-fastest) order"""
    _check_drr(model, drr_pa, "pa")
    _check_drr(model, drr_lat, "lat")
    f_pa, f_lat = model.encode_views(drr_pa, drr_lat)
    points = voxel_centers(tuple(int(d) for d in out_dims))
    batches = [points[start:start + batch_size] for start in range(0, len(points), batch_size)]

    def run(batch: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        decoded = model.field.decode_points(batch, f_pa, f_lat, model.geometry)
        return decoded.intensity.data[:, 0], decoded.logits.data

    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, batches))
    else:
        results = [run(batch) for batch in batches]
    intensity = np.concatenate([r[0] for r in results])
    logits = np.concatenate([r[1] for r in results])
    return FieldOutput.from_logits(intensity, logits)


def output_spacing(model: SpiderModel, out_dims: Sequence[int]) -> Tuple[float, float, float]:
    """Spacing that keeps the training volume's physical extent"""
    extent = model.geometry.extent_mm
    return tuple(float(e / d) for e, d in zip(extent, out_dims))


def reconstruct(
    model: SpiderModel,
    drr_pa: np.ndarray,
    drr_lat: np.ndarray,
    out_dims: Sequence[int],
    batch_size: int = DEFAULT_BATCH,
    workers: int = 1,
) -> Tuple[VoxelGrid, LabelGrid]:
    dims = tuple(int(d) for d in out_dims)
    output = evaluate_dense(model, drr_pa, drr_lat, dims, batch_size, workers)
    spacing = output_spacing(model, dims)
    intensity = np.clip(output.intensity, 0.0, 1.0).reshape(dims, order="F")
    labels = output.predicted_class.reshape(dims, order="F")
    logger.info("volume_reconstructed", dims=dims, evaluations=int(np.prod(dims)))
    return VoxelGrid(intensity, spacing), LabelGrid(labels, model.num_classes - 1, spacing)


def reconstruct_from_checkpoint(
    path: Path | str,
    drr_pa: np.ndarray,
    drr_lat: np.ndarray,
    out_dims: Sequence[int],
    precision: Optional[str] = None,
    workers: int = 1,
) -> Tuple[VoxelGrid, LabelGrid]:
    model = SpiderModel.load(path, precision=precision)
    return reconstruct(model, drr_pa, drr_lat, out_dims, workers=workers)
