"""
Ablation experiment runners

``decoders`` compares the shared, two-branch and two-stage decoders.
``structures`` trains intensity-only and then adds one structure class at a
time to the segmentation loss. Each run trains on the training subjects and
scores every test subject; rows collect into one DataFrame.
"""
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
import structlog

from src.core.config import ExperimentConfig, build_experiment_config, flatten_config
from src.evaluation.metrics import evaluate_pair
from src.projector.geometry import BiplanarGeometry
from src.training.dataset import TrainingSubject
from src.training.reconstruct import reconstruct
from src.training.trainer import remap_classes, train
from src.volume.grid import LabelGrid

logger = structlog.get_logger(__name__)

TOPOLOGIES = ("shared", "two_branch", "two_stage")


def with_overrides(config: ExperimentConfig, overrides: Dict[str, object]) -> ExperimentConfig:
    return build_experiment_config(flatten_config(config), overrides)


def _score(
    config: ExperimentConfig,
    geometry: BiplanarGeometry,
    train_subjects: Sequence[TrainingSubject],
    test_subjects: Sequence[TrainingSubject],
    context: Dict[str, object],
    class_ids: Optional[Sequence[int]] = None,
    val_subjects: Sequence[TrainingSubject] = (),
    workers: int = 1,
) -> List[Dict[str, object]]:
    model, _ = train(config, geometry, train_subjects, val_subjects, workers=workers)
    included = config.train.classes_included
    rows = []
    for subject in test_subjects:
        volume, labels = reconstruct(model, subject.drr_pa, subject.drr_lat, geometry.dims, workers=workers)
        truth = LabelGrid(remap_classes(subject.labels.labels, included), subject.labels.class_count,
                          subject.labels.spacing)
        report = evaluate_pair(volume, labels, subject.volume, truth, class_ids)
        rows.append(report.to_row(subject=subject.subject_id, **context))
    logger.info("ablation_arm_scored", **context, subjects=len(test_subjects),
                psnr_db=float(np.mean([r["psnr_db"] for r in rows])) if rows else float("nan"))
    return rows


def run_decoder_ablation(
    config: ExperimentConfig,
    geometry: BiplanarGeometry,
    train_subjects: Sequence[TrainingSubject],
    test_subjects: Sequence[TrainingSubject],
    seeds: Iterable[int] = (0, 1, 2),
    topologies: Sequence[str] = TOPOLOGIES,
    val_subjects: Sequence[TrainingSubject] = (),
    workers: int = 1,
) -> pd.DataFrame:
    rows = []
    for seed in seeds:
        for topology in topologies:
            arm_config = with_overrides(config, {"decoder.topology": topology, "train.seed": seed})
            context = {"suite": "decoders", "arm": topology, "seed": seed}
            rows += _score(arm_config, geometry, train_subjects, test_subjects, context,
                           val_subjects=val_subjects, workers=workers)
    return pd.DataFrame(rows)


def run_structure_ablation(
    config: ExperimentConfig,
    geometry: BiplanarGeometry,
    train_subjects: Sequence[TrainingSubject],
    test_subjects: Sequence[TrainingSubject],
    seeds: Iterable[int] = (0, 1, 2),
    val_subjects: Sequence[TrainingSubject] = (),
    workers: int = 1,
) -> pd.DataFrame:
    structures = config.decoder.num_classes - 1
    all_classes = list(range(1, structures + 1))
    rows = []
    for seed in seeds:
        arm_config = with_overrides(config, {"train.lambda_seg": 0.0, "train.seed": seed})
        context = {"suite": "structures", "arm": "intensity_only", "n_structures": 0, "seed": seed}
        rows += _score(arm_config, geometry, train_subjects, test_subjects, context, all_classes,
                       val_subjects, workers)
        for n in range(1, structures + 1):
            included = list(range(1, n + 1))
            arm_config = with_overrides(config, {"train.classes_included": included, "train.seed": seed})
            context = {"suite": "structures", "arm": f"structures_{n}", "n_structures": n, "seed": seed}
            rows += _score(arm_config, geometry, train_subjects, test_subjects, context, included,
                           val_subjects, workers)
    return pd.DataFrame(rows)


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """Median over seeds of the per-seed subject means, one row per arm"""
    per_seed = frame.groupby(["arm", "seed"], sort=False)[["psnr_db", "ssim", "dice_mean"]].mean()
    return per_seed.groupby(level="arm", sort=False).median().reset_index()
