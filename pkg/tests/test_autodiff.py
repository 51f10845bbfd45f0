"""
Test the tape, differentiable ops, modules, SGD and checkpoints
"""
import threading

import numpy as np
import pytest

from src.autodiff import ops
from src.autodiff.checkpoint import load_checkpoint, save_checkpoint
from src.autodiff.module import Linear, Module
from src.autodiff.optim import SgdState, sgd_step
from src.autodiff.tensor import Tape, Tensor, backward, current_tape
from src.core.config import TrainConfig
from src.core.exceptions import CheckpointError, ConfigError, DiagnosticsError, ShapeError, UsageError

from tests.conftest import check_gradients

rng = np.random.default_rng(42)
A = rng.normal(size=(3, 4))
B = rng.normal(size=(3, 4))
POSITIVE = rng.uniform(0.5, 1.5, size=(3, 4))
AWAY_FROM_ZERO = np.where(rng.random((3, 4)) < 0.5, -1.0, 1.0) * rng.uniform(0.2, 1.0, size=(3, 4))


@pytest.mark.parametrize(
    "build, arrays",
    [
        (ops.add, (A, B)),
        (ops.sub, (A, B)),
        (ops.mul, (A, B)),
        (ops.div, (A, POSITIVE)),
        (lambda x: ops.mul(x, 3.0), (A,)),
        (lambda x: ops.div(2.0, x), (POSITIVE,)),
        (lambda x: ops.sub(1.0, x), (A,)),
        (ops.abs, (AWAY_FROM_ZERO,)),
        (ops.log, (POSITIVE,)),
        (ops.exp, (A,)),
        (ops.relu, (AWAY_FROM_ZERO,)),
        (ops.sum, (A,)),
        (lambda x: ops.sum(x, axis=1), (A,)),
        (lambda x: ops.mean(x, axis=0), (A,)),
        (ops.mean, (A,)),
        (ops.softmax, (A,)),
        (lambda x, y: ops.concat([x, y], axis=1), (A, B)),
        (lambda x: ops.columns(x, 1, 3), (A,)),
        (lambda x: ops.mul(x, x), (A,)),
    ],
)
def test_elementwise_and_reduction_gradients(build, arrays):
    check_gradients(build, *arrays)


def test_linear_gradients():
    check_gradients(ops.linear, rng.normal(size=(5, 3)), rng.normal(size=(3, 2)), rng.normal(size=(2,)))


def test_gather_rows_accumulates_repeated_indices():
    index = np.array([0, 2, 2, 1, 2])
    check_gradients(lambda table: ops.gather_rows(table, index), rng.normal(size=(4, 3)))


def test_trilinear_blend_gradients():
    weights = rng.dirichlet(np.ones(8), size=3)
    check_gradients(lambda rows: ops.trilinear_blend(rows, weights), rng.normal(size=(24, 2)))


def test_bilinear_sample_gradients():
    u = np.array([0.0, 1.3, 2.9, -0.4, 4.0])
    v = np.array([0.5, 2.2, 0.0, 1.0, 1.0])
    check_gradients(lambda fmap: ops.bilinear_sample_2d(fmap, u, v), rng.normal(size=(2, 3, 4)))


def test_bilinear_sample_alignment_and_band():
    fmap = Tensor(np.arange(12.0).reshape(1, 3, 4))
    out = ops.bilinear_sample_2d(fmap, np.array([1.0, 1.5, -0.5, 2.5, -0.6, 3.0]),
                                 np.array([2.0, 2.0, 0.0, 3.5, 0.0, 0.0]))
    np.testing.assert_allclose(out.data[:, 0], [6.0, 8.0, 0.0, 11.0, 0.0, 0.0])


def test_conv2d_gradients():
    check_gradients(ops.conv2d, rng.normal(size=(2, 5, 4)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=(3,)))


def test_conv2d_matches_direct_correlation():
    x = rng.normal(size=(1, 4, 4))
    w = rng.normal(size=(1, 1, 3, 3))
    out = ops.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1))).data
    padded = np.pad(x[0], 1)
    expected = np.array([[np.sum(padded[i:i + 3, j:j + 3] * w[0, 0]) for j in range(4)] for i in range(4)])
    np.testing.assert_allclose(out[0], expected)


def test_pool_and_upsample_gradients():
    check_gradients(ops.avg_pool2, rng.normal(size=(2, 4, 6)))
    check_gradients(ops.upsample_nearest, rng.normal(size=(2, 2, 3)))
    check_gradients(lambda x, y: ops.channel_concat([x, y]), rng.normal(size=(1, 2, 2)), rng.normal(size=(2, 2, 2)))


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor(np.array([0.0, 1.0, -1.0]), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.relu(x))
    backward(tape, loss)
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_ops_without_tape_or_grad_record_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    ops.exp(x)
    with Tape() as tape:
        ops.exp(Tensor(np.ones(3)))
    assert len(tape) == 0


def test_backward_needs_scalar_loss_from_the_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ops.exp(x)
    with pytest.raises(UsageError):
        backward(tape, y)
    with pytest.raises(UsageError):
        backward(Tape(), ops.sum(y))


def test_tapes_close_in_order():
    outer, inner = Tape(), Tape()
    outer.__enter__()
    inner.__enter__()
    with pytest.raises(UsageError):
        outer.__exit__(None, None, None)
    inner.__exit__(None, None, None)
    outer.__exit__(None, None, None)
    assert current_tape() is None


def test_tape_is_thread_local():
    seen = []
    with Tape():
        worker = threading.Thread(target=lambda: seen.append(current_tape()))
        worker.start()
        worker.join()
    assert seen == [None]


def test_non_finite_values_raise():
    with pytest.raises(DiagnosticsError):
        ops.log(Tensor(np.array([0.0, 1.0])))


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))), Tensor(np.zeros(1)))
    with pytest.raises(ShapeError):
        ops.gather_rows(Tensor(np.ones((2, 2))), np.array([2]))


def test_learning_rate_halves_every_hundred_epochs():
    state = SgdState.from_config(TrainConfig(base_lr=0.01))
    assert state.lr_at(0) == pytest.approx(0.01)
    assert state.lr_at(99) == pytest.approx(0.01)
    assert state.lr_at(100) == pytest.approx(0.005)
    assert state.lr_at(250) == pytest.approx(0.0025)


def test_sgd_step_moves_against_the_gradient():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    p.grad = np.array([0.5, -1.0])
    lr = sgd_step([p], SgdState(base_lr=0.1, current_epoch=100))
    assert lr == pytest.approx(0.05)
    np.testing.assert_allclose(p.data, [0.975, 2.05])
    with pytest.raises(ConfigError):
        sgd_step([p], SgdState(base_lr=0.0))


class _Pair(Module):
    def __init__(self, rng):
        super().__init__()
        self.first = self.add_module("first", Linear(3, 4, rng))
        self.second = self.add_module("second", Linear(4, 2, rng))


def test_module_names_are_dotted_paths():
    model = _Pair(np.random.default_rng(0))
    assert [name for name, _ in model.named_parameters()] == [
        "first.weight", "first.bias", "second.weight", "second.bias"]
    assert model.num_parameters() == 3 * 4 + 4 + 4 * 2 + 2
    assert not model.first.bias.data.any()
    assert np.abs(model.first.weight.data).max() <= np.sqrt(6.0 / 7.0) + 1e-6


def test_load_state_dict_checks_names_and_shapes():
    model = _Pair(np.random.default_rng(0))
    state = model.state_dict()
    with pytest.raises(CheckpointError):
        model.load_state_dict({k: v for k, v in state.items() if k != "first.bias"})
    state["first.bias"] = np.zeros(5)
    with pytest.raises(CheckpointError):
        model.load_state_dict(state)


def test_checkpoint_restores_parameters_and_meta(tmp_path):
    model = _Pair(np.random.default_rng(0))
    path = tmp_path / "model.spckpt"
    save_checkpoint(path, model.state_dict(), {"decoder.topology": "shared"})
    state, meta = load_checkpoint(path)
    assert meta == {"decoder.topology": "shared"}
    other = _Pair(np.random.default_rng(1))
    other.load_state_dict(state)
    for (_, a), (_, b) in zip(model.named_parameters(), other.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data)


def test_checkpoint_header_lists_sorted_names(tmp_path):
    path = tmp_path / "c.spckpt"
    save_checkpoint(path, {"b": np.ones((2, 3)), "a": np.float32(2.0)}, {})
    header = path.read_bytes().split(b"end\n")[0].decode("ascii").splitlines()
    assert header == ["SPCKPT 1", "meta {}", "params 2", "a scalar 0", "b 2,3 4"]
    state, _ = load_checkpoint(path)
    assert state["a"].shape == () and state["a"] == 2.0


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.spckpt")
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "x.spckpt", {"bad name": np.ones(2)})
    bad = tmp_path / "bad.spckpt"
    bad.write_bytes(b"SPCKPT 2\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    path = tmp_path / "short.spckpt"
    save_checkpoint(path, {"w": np.ones(4)})
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
