"""
Training engine

One optimization step uses one subject: both DRRs are encoded fresh, a
seeded batch of voxel centers is decoded, and the weighted intensity + Dice
loss is backpropagated into every unfrozen parameter group.
"""
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog

from src.autodiff.optim import SgdState, sgd_step
from src.autodiff.tensor import Tape, backward
from src.core.config import ExperimentConfig, TrainConfig, dump_kv_text
from src.core.exceptions import ConfigError
from src.evaluation.metrics import dice_metric, present_classes, psnr
from src.field.model import SpiderModel
from src.projector.geometry import BiplanarGeometry
from src.training.dataset import TrainingSubject
from src.training.losses import loss_dice, loss_intensity, loss_total, one_hot
from src.training.reconstruct import reconstruct
from src.volume.grid import LabelGrid, voxel_centers

logger = structlog.get_logger(__name__)

RUNLOG_COLUMNS = [
    "epoch", "lr", "train_loss", "train_loss_int", "train_loss_seg",
    "val_loss", "val_psnr_db", "val_dice", "wall_time_s",
]


@dataclass(frozen=True)
class FreezeMask:
    freeze_encoder: bool = False
    freeze_decoder: bool = False
    freeze_hash: bool = False
    loss: Literal["joint", "intensity"] = "joint"

    @classmethod
    def named(cls, name: str, loss: Literal["joint", "intensity"] = "joint") -> "FreezeMask":
        if name == "none":
            return cls(loss=loss)
        if name == "encoder":
            return cls(freeze_encoder=True, loss=loss)
        if name == "decoder":
            return cls(freeze_decoder=True, loss=loss)
        if name == "hash":
            return cls(freeze_hash=True, loss=loss)
        raise ConfigError(f"unknown freeze target {name!r}")

    def frozen_groups(self) -> List[str]:
        flags = {"encoder": self.freeze_encoder, "hash": self.freeze_hash, "decoder": self.freeze_decoder}
        return [group for group, frozen in flags.items() if frozen]


@dataclass
class RunLog:
    """Per-epoch losses, lr, timing and validation snapshots plus the config echo"""

    config: ExperimentConfig
    freeze: FreezeMask = FreezeMask()
    rows: List[Dict[str, float]] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.config.train.seed

    def append(self, row: Dict[str, float]) -> None:
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise ConfigError("RunLog epochs must increase")
        self.rows.append(row)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=RUNLOG_COLUMNS)

    def echo_text(self) -> str:
        header = f"# freeze = {','.join(self.freeze.frozen_groups()) or 'none'}\n# loss = {self.freeze.loss}\n"
        return header + dump_kv_text(self.config)

    def save(self, path: Path | str) -> Path:
        """Write ``<path>`` as CSV and ``<path>.conf`` with the config echo"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        echo = path.with_suffix(path.suffix + ".conf")
        echo.write_text(self.echo_text(), encoding="utf-8")
        return echo


def remap_classes(labels: np.ndarray, included: Optional[Sequence[int]]) -> np.ndarray:
    """Labels outside ``included`` become background"""
    if included is None:
        return labels
    return np.where(np.isin(labels, np.asarray(included)), labels, 0).astype(labels.dtype)


class Trainer:
    """Main training engine"""

    def __init__(
        self,
        config: ExperimentConfig,
        geometry: BiplanarGeometry,
        freeze: FreezeMask = FreezeMask(),
        model: Optional[SpiderModel] = None,
        workers: int = 1,
    ):
        self.config = config
        self.train_config: TrainConfig = config.train
        self.geometry = geometry
        self.freeze = freeze
        self.model = model if model is not None else SpiderModel(config, geometry)
        self.model.check_geometry(geometry)
        self.workers = workers
        self.state = SgdState.from_config(self.train_config)
        self.rng = np.random.default_rng([self.train_config.seed, 1])
        self._centers: Dict[Tuple[int, int, int], np.ndarray] = {}
        self._class_pools: Dict[str, Dict[int, np.ndarray]] = {}
        self.logger = logger.bind(topology=config.decoder.topology, frozen=freeze.frozen_groups(), loss=freeze.loss)

    @property
    def lambdas(self) -> Tuple[float, float]:
        lambda_seg = 0.0 if self.freeze.loss == "intensity" else self.train_config.lambda_seg
        return self.train_config.lambda_int, lambda_seg

    def trainable_parameters(self):
        groups = self.model.parameter_groups()
        frozen = set(self.freeze.frozen_groups())
        return [p for name, params in groups.items() if name not in frozen for p in params]

    def check_subjects(self, subjects: Sequence[TrainingSubject]) -> None:
        num_classes = self.model.num_classes
        for subject in subjects:
            top = int(subject.labels.labels.max()) if subject.labels.labels.size else 0
            if top >= num_classes or subject.labels.class_count + 1 > num_classes:
                raise ConfigError(f"{subject.subject_id}: labels up to {max(top, subject.labels.class_count)} "
                                  f"need num_classes >= {max(top, subject.labels.class_count) + 1}, "
                                  f"decoder has {num_classes}")
            if subject.volume.dims != self.geometry.dims:
                raise ConfigError(f"{subject.subject_id}: volume dims {subject.volume.dims} differ from "
                                  f"training geometry {self.geometry.dims}")

    def _voxel_centers(self, dims) -> np.ndarray:
        if dims not in self._centers:
            self._centers[dims] = voxel_centers(dims)
        return self._centers[dims]

    def sample_indices(self, subject: TrainingSubject, rng: np.random.Generator) -> np.ndarray:
        """Flat voxel indices for one step"""
        n = self.train_config.points_per_step
        total = int(np.prod(subject.volume.dims))
        if self.train_config.sampling == "uniform":
            return rng.integers(0, total, size=n)
        pools = self._class_pools.get(subject.subject_id)
        if pools is None:
            labels = remap_classes(subject.labels.flat(), self.train_config.classes_included)
            pools = {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}
            self._class_pools[subject.subject_id] = pools
        classes = sorted(pools)
        picks = rng.integers(0, len(classes), size=n)
        indices = np.empty(n, dtype=np.int64)
        for slot, c in enumerate(classes):
            chosen = picks == slot
            pool = pools[c]
            indices[chosen] = pool[rng.integers(0, len(pool), size=int(chosen.sum()))]
        return indices

    def _losses(self, subject: TrainingSubject, indices: np.ndarray):
        points = self._voxel_centers(subject.volume.dims)[indices]
        truth = subject.volume.flat()[indices]
        labels = remap_classes(subject.labels.flat()[indices], self.train_config.classes_included)
        decoded = self.model.forward_points(subject.drr_pa, subject.drr_lat, points)
        l_int = loss_intensity(decoded.intensity, truth)
        l_seg = loss_dice(decoded.probabilities(), one_hot(labels, self.model.num_classes),
                          self.train_config.dice_epsilon)
        lambda_int, lambda_seg = self.lambdas
        return loss_total(l_int, l_seg, lambda_int, lambda_seg), l_int, l_seg

    def step(self, subject: TrainingSubject) -> Tuple[float, float, float]:
        indices = self.sample_indices(subject, self.rng)
        self.model.zero_grad()
        with Tape() as tape:
            total, l_int, l_seg = self._losses(subject, indices)
        backward(tape, total)
        sgd_step(self.trainable_parameters(), self.state)
        return total.item(), l_int.item(), l_seg.item()

    def validate(self, subjects: Sequence[TrainingSubject]) -> Dict[str, float]:
        """Loss on a fixed point batch plus dense PSNR / mean Dice per subject"""
        rng = np.random.default_rng([self.train_config.seed, 2])
        losses, psnrs, dices = [], [], []
        for subject in subjects:
            total, _, _ = self._losses(subject, self.sample_indices(subject, rng))
            losses.append(total.item())
            volume, labels = reconstruct(self.model, subject.drr_pa, subject.drr_lat, subject.volume.dims,
                                         workers=self.workers)
            psnrs.append(psnr(volume, subject.volume))
            truth = LabelGrid(remap_classes(subject.labels.labels, self.train_config.classes_included),
                              subject.labels.class_count, subject.labels.spacing)
            classes = present_classes(truth)
            if classes:
                dices.append(float(np.mean([dice_metric(labels, truth, c) for c in classes])))
        return {
            "val_loss": float(np.mean(losses)),
            "val_psnr_db": float(np.mean(psnrs)),
            "val_dice": float(np.mean(dices)) if dices else float("nan"),
        }

    def fit(self, subjects: Sequence[TrainingSubject], val_subjects: Sequence[TrainingSubject] = ()) -> RunLog:
        if not subjects:
            raise ConfigError("training needs at least one subject")
        self.check_subjects([*subjects, *val_subjects])
        log = RunLog(config=self.config, freeze=self.freeze)
        epochs = self.train_config.epochs
        self.logger.info("training_started", epochs=epochs, subjects=len(subjects), val_subjects=len(val_subjects),
                         parameters=self.model.num_parameters())
        for epoch in range(epochs):
            self.state.current_epoch = epoch
            started = time.perf_counter()
            totals, ints, segs = [], [], []
            for n in self.rng.permutation(len(subjects)):
                total, l_int, l_seg = self.step(subjects[n])
                totals.append(total)
                ints.append(l_int)
                segs.append(l_seg)
            row = {
                "epoch": epoch,
                "lr": self.state.effective_lr,
                "train_loss": float(np.mean(totals)),
                "train_loss_int": float(np.mean(ints)),
                "train_loss_seg": float(np.mean(segs)),
                "val_loss": float("nan"),
                "val_psnr_db": float("nan"),
                "val_dice": float("nan"),
            }
            eval_every = self.train_config.eval_every
            if val_subjects and eval_every > 0 and ((epoch + 1) % eval_every == 0 or epoch == epochs - 1):
                row.update(self.validate(val_subjects))
            row["wall_time_s"] = time.perf_counter() - started
            log.append(row)
            self.logger.info("epoch_finished", epoch=epoch, lr=row["lr"], loss=row["train_loss"],
                             loss_int=row["train_loss_int"], loss_seg=row["train_loss_seg"])
        return log


def train(
    config: ExperimentConfig,
    geometry: BiplanarGeometry,
    subjects: Sequence[TrainingSubject],
    val_subjects: Sequence[TrainingSubject] = (),
    freeze: FreezeMask = FreezeMask(),
    model: Optional[SpiderModel] = None,
    workers: int = 1,
) -> Tuple[SpiderModel, RunLog]:
    trainer = Trainer(config, geometry, freeze=freeze, model=model, workers=workers)
    log = trainer.fit(subjects, val_subjects)
    return trainer.model, log
