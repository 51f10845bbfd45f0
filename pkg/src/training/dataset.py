"""
On-disk datasets of phantoms and their simulated radiograph pairs

A data directory holds, per subject ``<id>``::

    <id>_volume.spvol  <id>_labels.spvol   (from ``phantom``)
    <id>_pa.spvol      <id>_lat.spvol      (from ``simulate``, log-domain)

plus ``split.json``, ``phantom.conf`` and ``geometry.json``.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog

from src.core.exceptions import ConfigError, ShapeError
from src.projector.geometry import BiplanarGeometry
from src.projector.operator import Projection, normalize_drr, project_parallel
from src.volume.grid import LabelGrid, VoxelGrid
from src.volume.io import load_volume, read_spvol, save_png, write_spvol
from src.volume.phantom import DatasetSplit, PhantomSpec, load_phantom_spec

logger = structlog.get_logger(__name__)

SPLIT_FILE = "split.json"
SPEC_FILE = "phantom.conf"
GEOMETRY_FILE = "geometry.json"


def volume_path(directory: Path, subject_id: str) -> Path:
    return Path(directory) / f"{subject_id}_volume.spvol"


def labels_path(directory: Path, subject_id: str) -> Path:
    return Path(directory) / f"{subject_id}_labels.spvol"


def projection_path(directory: Path, subject_id: str, view: str) -> Path:
    return Path(directory) / f"{subject_id}_{view}.spvol"


@dataclass
class TrainingSubject:
    """One phantom with its normalized DRR pair"""

    subject_id: str
    drr_pa: np.ndarray
    drr_lat: np.ndarray
    volume: VoxelGrid
    labels: LabelGrid


def simulate_pair(grid: VoxelGrid, geometry: BiplanarGeometry, workers: int = 1) -> Tuple[Projection, Projection]:
    if grid.dims != geometry.dims or grid.spacing != geometry.spacing:
        raise ConfigError(f"volume {grid.dims}@{grid.spacing} does not match geometry {geometry.dims}@{geometry.spacing}")
    return (
        project_parallel(grid, geometry.pose_pa, geometry.detector, workers),
        project_parallel(grid, geometry.pose_lat, geometry.detector, workers),
    )


def save_projection(path: Path, projection: Projection, preview: bool = True) -> None:
    detector = projection.detector
    write_spvol(path, projection.log_values, (detector.pitch_u, detector.pitch_v, 1.0), "f32")
    if preview:
        save_png(path.with_suffix(".png"), projection.log_values)


def load_drr(path: Path | str, geometry: Optional[BiplanarGeometry] = None) -> np.ndarray:
    """Read a stored projection and min-max normalize it for the encoder"""
    array, _, _ = read_spvol(path)
    if array.shape[2] != 1:
        raise ShapeError(f"{path}: expected a 2D projection, got dims {array.shape}")
    image = array[:, :, 0].astype(np.float64)
    if geometry is not None and image.shape != (geometry.detector.nu, geometry.detector.nv):
        raise ConfigError(f"{path}: projection {image.shape} does not match detector "
                          f"({geometry.detector.nu}, {geometry.detector.nv})")
    lo, hi = float(image.min()), float(image.max())
    return np.zeros_like(image) if hi <= lo else (image - lo) / (hi - lo)


def load_split(directory: Path | str) -> DatasetSplit:
    path = Path(directory) / SPLIT_FILE
    if not path.exists():
        raise FileNotFoundError(f"split file not found: {path}")
    return DatasetSplit.model_validate_json(path.read_text(encoding="utf-8"))


def save_split(directory: Path | str, split: DatasetSplit) -> None:
    path = Path(directory) / SPLIT_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(split.model_dump_json(indent=2), encoding="utf-8")


def load_geometry(directory: Path | str) -> BiplanarGeometry:
    path = Path(directory) / GEOMETRY_FILE
    if not path.exists():
        raise FileNotFoundError(f"geometry file not found: {path} (run simulate first)")
    return BiplanarGeometry.model_validate_json(path.read_text(encoding="utf-8"))


def save_geometry(directory: Path | str, geometry: BiplanarGeometry) -> None:
    path = Path(directory) / GEOMETRY_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(geometry.model_dump_json(indent=2), encoding="utf-8")


def load_population_spec(directory: Path | str) -> Optional[PhantomSpec]:
    path = Path(directory) / SPEC_FILE
    return load_phantom_spec(path) if path.exists() else None


def load_subject(
    data_dir: Path | str,
    subject_id: str,
    geometry: BiplanarGeometry,
    volumes_dir: Optional[Path | str] = None,
) -> TrainingSubject:
    data_dir = Path(data_dir)
    volumes_dir = Path(volumes_dir) if volumes_dir is not None else data_dir
    volume = load_volume(volume_path(volumes_dir, subject_id))
    labels = load_volume(labels_path(volumes_dir, subject_id))
    if not isinstance(volume, VoxelGrid) or not isinstance(labels, LabelGrid):
        raise ConfigError(f"{subject_id}: volume/labels files hold the wrong payload types")
    labels.check_pairs_with(volume)
    return TrainingSubject(
        subject_id=subject_id,
        drr_pa=load_drr(projection_path(data_dir, subject_id, "pa"), geometry),
        drr_lat=load_drr(projection_path(data_dir, subject_id, "lat"), geometry),
        volume=volume,
        labels=labels,
    )


def load_subjects(data_dir: Path | str, ids: Sequence[str], geometry: BiplanarGeometry,
                  volumes_dir: Optional[Path | str] = None) -> List[TrainingSubject]:
    subjects = [load_subject(data_dir, subject_id, geometry, volumes_dir) for subject_id in ids]
    logger.info("subjects_loaded", count=len(subjects), data_dir=str(data_dir))
    return subjects


def subject_in_memory(subject_id: str, grid: VoxelGrid, labels: LabelGrid, geometry: BiplanarGeometry,
                      workers: int = 1) -> TrainingSubject:
    """Simulate the DRR pair of an in-memory phantom"""
    p_pa, p_lat = simulate_pair(grid, geometry, workers)
    return TrainingSubject(subject_id, normalize_drr(p_pa), normalize_drr(p_lat), grid, labels)
