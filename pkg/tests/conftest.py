"""
Shared fixtures and helpers: a tiny configuration, its geometry, in-memory subjects and gradient checks
"""
import numpy as np
import pytest

from src.autodiff import ops
from src.autodiff.tensor import Tape, Tensor, backward
from src.core.config import DetectorConfig, build_experiment_config
from src.projector.geometry import BiplanarGeometry
from src.training.dataset import subject_in_memory
from src.volume.phantom import default_phantom_spec, generate_phantom

TINY_DIMS = (8, 8, 8)
EPS = 1e-6

TINY_OVERRIDES = {
    "volume.dims": list(TINY_DIMS),
    "detector.nu": 8,
    "detector.nv": 8,
    "encoder.depth": 2,
    "encoder.channels": [4, 8],
    "encoder.output_channels": 4,
    "hash.levels": 2,
    "hash.features_per_level": 2,
    "hash.base_resolution": 2,
    "hash.max_resolution": 8,
    "hash.log2_table_size": 8,
    "decoder.hidden_layers": 2,
    "decoder.width": 16,
    "decoder.num_classes": 4,
    "train.epochs": 2,
    "train.points_per_step": 64,
    "train.base_lr": 0.01,
    "train.eval_every": 1,
}


def tiny_config(**overrides):
    return build_experiment_config({}, {**TINY_OVERRIDES, **overrides})


def _forward_loss(build, tensors, weights):
    return float(np.sum(build(*tensors).data * weights))


def check_gradients(build, *arrays, seed=0):
    """Compare tape gradients with central differences on every input element"""
    rng = np.random.default_rng(seed)
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    weights = rng.normal(size=build(*tensors).shape)
    with Tape() as tape:
        loss = ops.sum(ops.mul(build(*tensors), Tensor(weights)))
    backward(tape, loss)
    for t in tensors:
        numeric = np.zeros_like(t.data)
        for idx in np.ndindex(t.data.shape):
            original = t.data[idx]
            t.data[idx] = original + EPS
            up = _forward_loss(build, tensors, weights)
            t.data[idx] = original - EPS
            down = _forward_loss(build, tensors, weights)
            t.data[idx] = original
            numeric[idx] = (up - down) / (2 * EPS)
        np.testing.assert_allclose(t.grad, numeric, rtol=1e-5, atol=1e-7)


def check_parameter_gradients(loss_fn, parameters, entries):
    """Central differences of the scalar ``loss_fn()`` at ``entries`` of each float64 parameter"""
    for p in parameters:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)
    for p, indices in zip(parameters, entries):
        for idx in indices:
            original = p.data[idx]
            p.data[idx] = original + EPS
            up = loss_fn().item()
            p.data[idx] = original - EPS
            down = loss_fn().item()
            p.data[idx] = original
            assert p.grad[idx] == pytest.approx((up - down) / (2 * EPS), rel=1e-5, abs=1e-7), idx


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def geometry():
    return BiplanarGeometry.build(TINY_DIMS, (1.0, 1.0, 1.0), DetectorConfig(nu=8, nv=8))


@pytest.fixture
def subjects(geometry):
    spec = default_phantom_spec()
    made = []
    for n in range(3):
        grid, labels = generate_phantom(spec, n, TINY_DIMS)
        made.append(subject_in_memory(f"s{n}", grid, labels, geometry))
    return made
