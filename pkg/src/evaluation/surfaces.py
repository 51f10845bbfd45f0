"""
Surface distances between binary masks

Surfaces are the mask voxels with at least one 6-neighbour outside the mask
(grid borders count as outside), placed at voxel centers in millimeters.
"""
from typing import Sequence, Tuple

import numpy as np
import structlog
from scipy import ndimage
from scipy.spatial import cKDTree

from src.core.exceptions import ShapeError

logger = structlog.get_logger(__name__)

_SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


def boundary_points(mask: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=_SIX_CONNECTED, border_value=0)
    return np.argwhere(mask & ~interior) * np.asarray(spacing, dtype=np.float64)


def _directed(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from every point of ``a`` to its nearest point of ``b``"""
    distances, _ = cKDTree(b).query(a, k=1)
    return np.asarray(distances, dtype=np.float64)


def _surface_pair(pred: np.ndarray, truth: np.ndarray, spacing, metric: str) -> Tuple[np.ndarray, np.ndarray] | float:
    pred, truth = np.asarray(pred, dtype=bool), np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ShapeError(f"{metric}: mask dims {pred.shape} and {truth.shape} differ")
    if not pred.any() or not truth.any():
        sentinel = float(np.linalg.norm(np.asarray(pred.shape) * np.asarray(spacing, dtype=np.float64)))
        logger.warning("empty_mask_distance", metric=metric, pred_empty=not pred.any(),
                       truth_empty=not truth.any(), sentinel_mm=sentinel)
        return sentinel
    a, b = boundary_points(pred, spacing), boundary_points(truth, spacing)
    return _directed(a, b), _directed(b, a)


def hd95(pred: np.ndarray, truth: np.ndarray, spacing: Sequence[float] = (1.0, 1.0, 1.0)) -> float:
    """Max of the two directed 95th-percentile surface distances"""
    pair = _surface_pair(pred, truth, spacing, "hd95")
    if isinstance(pair, float):
        return pair
    d_ab, d_ba = pair
    return float(max(np.percentile(d_ab, 95), np.percentile(d_ba, 95)))


def chamfer(pred: np.ndarray, truth: np.ndarray, spacing: Sequence[float] = (1.0, 1.0, 1.0)) -> float:
    """Mean of the two directed mean surface distances"""
    pair = _surface_pair(pred, truth, spacing, "chamfer")
    if isinstance(pair, float):
        return pair
    d_ab, d_ba = pair
    return float((d_ab.mean() + d_ba.mean()) / 2.0)
