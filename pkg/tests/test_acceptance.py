"""
Test the end-to-end experiment runs at desk scale

The learned comparisons (overfit thresholds, segmentation weight, decoder
ordering, transfer Dice) are reproduced with the ``ablate`` and ``transfer``
commands at full size; here each run is checked for completeness,
determinism and the guarantees that do not depend on how well it learns.
"""
import math

import numpy as np
import pytest

from src.core.config import DetectorConfig
from src.evaluation.metrics import psnr
from src.field.model import SpiderModel
from src.projector.fbp import fbp, fbp_two_view
from src.projector.geometry import BiplanarGeometry, rotated_pose
from src.projector.operator import project_parallel
from src.training.dataset import subject_in_memory
from src.training.experiments import run_decoder_ablation, run_structure_ablation, summarize
from src.training.reconstruct import reconstruct
from src.training.trainer import train
from src.training.transfer import frozen_decoder_transfer, run_transfer
from src.volume.phantom import default_phantom_spec, generate_phantom, perturbed_family

from tests.conftest import TINY_DIMS, tiny_config

pytestmark = pytest.mark.slow

FLOAT64 = {"train.precision": "float64"}


def test_many_view_fbp_beats_two_views_by_ten_db():
    dims, spacing = (64, 64, 64), (1.0, 1.0, 1.0)
    truth, _ = generate_phantom(default_phantom_spec(), 0, dims, spacing)
    geometry = BiplanarGeometry.build(dims, spacing, DetectorConfig(nu=64, nv=64))
    two = fbp_two_view(project_parallel(truth, geometry.pose_pa, geometry.detector),
                       project_parallel(truth, geometry.pose_lat, geometry.detector), dims, spacing)
    poses = [rotated_pose(math.pi * n / 180, dims, spacing, geometry.detector) for n in range(180)]
    many = fbp([project_parallel(truth, pose, geometry.detector) for pose in poses], dims, spacing)
    assert psnr(many, truth) - psnr(two, truth) >= 10.0


def test_overfitting_one_phantom_improves_the_reconstruction(geometry, subjects):
    config = tiny_config(**FLOAT64, **{"train.epochs": 200, "train.points_per_step": 512,
                                       "train.base_lr": 0.02, "train.decay_every": 1000})
    subject = subjects[0]
    model = SpiderModel(config, geometry)
    before, _ = reconstruct(model, subject.drr_pa, subject.drr_lat, TINY_DIMS)
    _, log = train(config, geometry, [subject], model=model)
    after, _ = reconstruct(model, subject.drr_pa, subject.drr_lat, TINY_DIMS)
    losses = log.to_frame()["train_loss"]
    assert np.isfinite(losses).all()
    assert losses.iloc[-1] < losses.iloc[0]
    assert psnr(after, subject.volume) > psnr(before, subject.volume)


def test_structure_ablation_over_three_seeds(geometry, subjects):
    config = tiny_config(**{"train.epochs": 3})
    frame = run_structure_ablation(config, geometry, subjects[:2], subjects[2:], seeds=(0, 1, 2))
    summary = summarize(frame)
    assert summary["arm"].tolist() == ["intensity_only", "structures_1", "structures_2", "structures_3"]
    assert np.isfinite(summary[["psnr_db", "ssim"]].to_numpy()).all()
    assert summary["dice_mean"].between(0.0, 1.0).all()


def test_decoder_ablation_over_three_seeds(geometry, subjects):
    config = tiny_config(**{"train.epochs": 3})
    frame = run_decoder_ablation(config, geometry, subjects[:2], subjects[2:], seeds=(0, 1, 2))
    assert sorted(frame["seed"].unique().tolist()) == [0, 1, 2]
    summary = summarize(frame)
    assert summary["arm"].tolist() == ["shared", "two_branch", "two_stage"]
    assert summary["dice_mean"].between(0.0, 1.0).all()


def test_out_of_domain_transfer_keeps_the_decoder_bytes(tmp_path, geometry, subjects):
    config = tiny_config(**FLOAT64, **{"train.epochs": 3})
    model, _ = train(config, geometry, subjects)
    path = tmp_path / "model.spckpt"
    model.save(path)
    spec = perturbed_family(default_phantom_spec(), 0.2, seed=11)
    grid, labels = generate_phantom(spec, 0, TINY_DIMS)
    target = subject_in_memory("ood", grid, labels, geometry)
    results, frame = run_transfer(path, target, epochs=5, precision="float64")
    assert results["decoder"].decoder_unchanged
    assert not results["encoder"].decoder_unchanged
    assert frame["dice_mean"].between(0.0, 1.0).all()


def test_same_seed_gives_identical_checkpoints_and_logs(tmp_path, geometry, subjects):
    config = tiny_config(**FLOAT64, **{"train.epochs": 3})
    runs = []
    for name in ("a", "b"):
        model, log = train(config, geometry, subjects[:2], subjects[2:])
        model.save(tmp_path / f"{name}.spckpt")
        transfer = frozen_decoder_transfer(tmp_path / f"{name}.spckpt", subjects[2], epochs=2, precision="float64")
        transfer.model.save(tmp_path / f"{name}_transfer.spckpt")
        runs.append((log.to_frame().drop(columns="wall_time_s"), transfer.log.to_frame().drop(columns="wall_time_s")))
    assert (tmp_path / "a.spckpt").read_bytes() == (tmp_path / "b.spckpt").read_bytes()
    assert (tmp_path / "a_transfer.spckpt").read_bytes() == (tmp_path / "b_transfer.spckpt").read_bytes()
    for first, second in zip(*runs):
        assert first.equals(second)
