"""
Volume and segmentation metrics

PSNR returns ``math.inf`` for identical inputs. SSIM is computed per z slice
with an 11x11 Gaussian window (sigma 1.5) and averaged; slices smaller than the
window shrink it and log a warning. Dice of two empty masks is 1.0.
"""
import math
from typing import Dict, Iterable, List, Optional

import numpy as np
import structlog
from pydantic import BaseModel, Field
from scipy import ndimage

from src.core.exceptions import ShapeError
from src.evaluation.surfaces import chamfer, hd95
from src.volume.grid import LabelGrid, VoxelGrid

logger = structlog.get_logger(__name__)

SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _values(volume) -> np.ndarray:
    return np.asarray(volume.values if isinstance(volume, VoxelGrid) else volume, dtype=np.float64)


def _labels(volume) -> np.ndarray:
    return np.asarray(volume.labels if isinstance(volume, LabelGrid) else volume)


def _same_dims(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: dims {a.shape} and {b.shape} differ")


def psnr(a, b, data_range: float = 1.0) -> float:
    x, y = _values(a), _values(b)
    _same_dims(x, y, "psnr")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


def _ssim_slice(x: np.ndarray, y: np.ndarray, sigma: float, truncate: float, radius: int, data_range: float) -> float:
    def blur(image):
        return ndimage.gaussian_filter(image, sigma=sigma, truncate=truncate, mode="reflect")

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    ux, uy = blur(x), blur(y)
    vx = blur(x * x) - ux * ux
    vy = blur(y * y) - uy * uy
    vxy = blur(x * y) - ux * uy
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    return float(s[radius:s.shape[0] - radius, radius:s.shape[1] - radius].mean())


def ssim(a, b, data_range: float = 1.0) -> float:
    x, y = _values(a), _values(b)
    _same_dims(x, y, "ssim")
    if x.ndim == 2:
        x, y = x[:, :, None], y[:, :, None]
    win = 2 * int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5) + 1
    sigma, truncate = SSIM_SIGMA, SSIM_TRUNCATE
    side = min(x.shape[0], x.shape[1])
    if side < win:
        win = side if side % 2 else side - 1
        if win < 3:
            raise ShapeError(f"ssim: slices of {x.shape[:2]} are too small for any window")
        sigma = SSIM_SIGMA * win / 11.0
        truncate = ((win - 1) // 2) / sigma
        logger.warning("ssim_window_shrunk", window=win, slice_shape=x.shape[:2])
    radius = (win - 1) // 2
    scores = [_ssim_slice(x[:, :, k], y[:, :, k], sigma, truncate, radius, data_range) for k in range(x.shape[2])]
    return float(np.mean(scores))


def dice_metric(pred, truth, class_id: int) -> float:
    p, t = _labels(pred), _labels(truth)
    _same_dims(p, t, "dice")
    a, b = p == class_id, t == class_id
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


class MetricsReport(BaseModel):
    psnr_db: float
    ssim: float
    dice: Dict[int, float] = Field(default_factory=dict)
    hd95_mm: Dict[int, float] = Field(default_factory=dict)
    chamfer_mm: Dict[int, float] = Field(default_factory=dict)

    @staticmethod
    def _mean(values: Dict[int, float]) -> float:
        return float(np.mean(list(values.values()))) if values else math.nan

    @property
    def mean_dice(self) -> float:
        return self._mean(self.dice)

    @property
    def mean_hd95_mm(self) -> float:
        return self._mean(self.hd95_mm)

    @property
    def mean_chamfer_mm(self) -> float:
        return self._mean(self.chamfer_mm)

    def to_row(self, **context) -> Dict[str, object]:
        row: Dict[str, object] = dict(context)
        row.update({
            "psnr_db": self.psnr_db,
            "ssim": self.ssim,
            "dice_mean": self.mean_dice,
            "hd95_mean_mm": self.mean_hd95_mm,
            "chamfer_mean_mm": self.mean_chamfer_mm,
        })
        for c in sorted(self.dice):
            row[f"dice_c{c}"] = self.dice[c]
            row[f"hd95_c{c}_mm"] = self.hd95_mm.get(c, math.nan)
            row[f"chamfer_c{c}_mm"] = self.chamfer_mm.get(c, math.nan)
        return row


def present_classes(*label_grids) -> List[int]:
    """Foreground classes occurring in any of the grids"""
    found = set()
    for grid in label_grids:
        found.update(int(c) for c in np.unique(_labels(grid)))
    found.discard(0)
    return sorted(found)


def evaluate_pair(
    pred_volume: VoxelGrid,
    pred_labels: LabelGrid,
    truth_volume: VoxelGrid,
    truth_labels: LabelGrid,
    class_ids: Optional[Iterable[int]] = None,
    surfaces: bool = True,
) -> MetricsReport:
    class_ids = list(class_ids) if class_ids is not None else present_classes(pred_labels, truth_labels)
    spacing = truth_labels.spacing
    report = MetricsReport(psnr_db=psnr(pred_volume, truth_volume), ssim=ssim(pred_volume, truth_volume))
    for c in class_ids:
        report.dice[c] = dice_metric(pred_labels, truth_labels, c)
        if surfaces:
            p, t = pred_labels.mask(c), truth_labels.mask(c)
            report.hd95_mm[c] = hd95(p, t, spacing)
            report.chamfer_mm[c] = chamfer(p, t, spacing)
    return report
