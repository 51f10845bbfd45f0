"""
Frozen-decoder transfer to an out-of-domain subject

The pretrained model is fitted to a single new subject with the intensity loss
only. With the decoder frozen, its learned intensity-to-structure mapping keeps
producing segmentations; the comparison arm freezes the encoder instead.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog

from src.evaluation.metrics import MetricsReport, evaluate_pair
from src.field.model import SpiderModel
from src.training.dataset import TrainingSubject
from src.training.reconstruct import reconstruct
from src.training.trainer import FreezeMask, RunLog, Trainer
from src.volume.grid import LabelGrid, VoxelGrid

logger = structlog.get_logger(__name__)


@dataclass
class TransferResult:
    arm: str
    volume: VoxelGrid
    labels: LabelGrid
    report: MetricsReport
    log: RunLog
    decoder_unchanged: bool
    model: SpiderModel


def _decoder_bytes(model: SpiderModel) -> Dict[str, bytes]:
    return {name: p.data.tobytes() for name, p in model.named_parameters() if name.startswith("field.decoder.")}


def frozen_decoder_transfer(
    checkpoint: Path | str,
    subject: TrainingSubject,
    epochs: int,
    freeze: str = "decoder",
    precision: Optional[str] = None,
    workers: int = 1,
) -> TransferResult:
    """Fit ``subject`` with the intensity loss while ``freeze`` stays fixed"""
    model = SpiderModel.load(checkpoint, precision=precision)
    before = _decoder_bytes(model)
    train_config = model.config.train.model_copy(update={"epochs": int(epochs), "precision": model.precision})
    config = model.config.model_copy(update={"train": train_config})
    trainer = Trainer(config, model.geometry, FreezeMask.named(freeze, loss="intensity"), model=model, workers=workers)
    log = trainer.fit([subject])
    volume, labels = reconstruct(model, subject.drr_pa, subject.drr_lat, model.geometry.dims, workers=workers)
    truth_classes = [c for c in range(1, model.num_classes) if np.any(subject.labels.labels == c)]
    report = evaluate_pair(volume, labels, subject.volume, subject.labels, truth_classes)
    unchanged = before == _decoder_bytes(model)
    logger.info("transfer_finished", arm=freeze, epochs=epochs, subject=subject.subject_id,
                psnr_db=report.psnr_db, dice=report.mean_dice, decoder_unchanged=unchanged)
    return TransferResult(freeze, volume, labels, report, log, unchanged, model)


def run_transfer(
    checkpoint: Path | str,
    subject: TrainingSubject,
    epochs: int,
    arms: Sequence[str] = ("decoder", "encoder"),
    precision: Optional[str] = None,
    workers: int = 1,
) -> Tuple[Dict[str, TransferResult], pd.DataFrame]:
    results = {arm: frozen_decoder_transfer(checkpoint, subject, epochs, arm, precision, workers) for arm in arms}
    rows = [
        result.report.to_row(arm=f"freeze_{arm}", subject=subject.subject_id, epochs=epochs,
                             decoder_unchanged=result.decoder_unchanged)
        for arm, result in results.items()
    ]
    return results, pd.DataFrame(rows)
