"""
Differentiable primitives

Every op validates shapes, computes its forward value with numpy, trips a
DiagnosticsError on NaN/Inf, and (under an active tape) records a backward
rule returning one gradient per input (None for non-differentiable inputs).
Binary elementwise ops take equal shapes or a Python scalar.
"""
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.autodiff.tensor import BackwardFn, Tensor, current_tape
from src.core.exceptions import DiagnosticsError, ShapeError

Operand = Union[Tensor, float, int]


def _emit(op: str, inputs: Sequence[Tensor], value: np.ndarray, backward: BackwardFn) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise DiagnosticsError(f"{op}: non-finite output")
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=False)
    out.requires_grad = requires_grad
    out.is_leaf = False
    tape = current_tape()
    if tape is not None and requires_grad:
        tape.record(op, inputs, out, backward)
    return out


def _binary_operands(op: str, a: Operand, b: Operand):
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")
        return a, b, a.data, b.data
    if isinstance(a, Tensor):
        return a, None, a.data, np.asarray(b, dtype=a.dtype)
    if isinstance(b, Tensor):
        return None, b, np.asarray(a, dtype=b.dtype), b.data
    raise ShapeError(f"{op}: needs at least one tensor operand")


def _binary(op: str, a: Operand, b: Operand, value, grad_a, grad_b) -> Tensor:
    ta, tb, da, db = _binary_operands(op, a, b)
    out_value = value(da, db)
    inputs = [t for t in (ta, tb) if t is not None]

    def backward(g):
        grads = []
        if ta is not None:
            grads.append(grad_a(g, da, db))
        if tb is not None:
            grads.append(grad_b(g, da, db))
        return grads

    return _emit(op, inputs, out_value, backward)


def add(a: Operand, b: Operand) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a: Operand, b: Operand) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a: Operand, b: Operand) -> Tensor:
    return _binary("mul", a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a: Operand, b: Operand) -> Tensor:
    return _binary("div", a, b, lambda x, y: x / y, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def _unary(op: str, x: Tensor, value: np.ndarray, grad) -> Tensor:
    return _emit(op, [x], value, lambda g: [grad(g)])


def abs(x: Tensor) -> Tensor:  # noqa: A001
    return _unary("abs", x, np.abs(x.data), lambda g: g * np.sign(x.data))


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(x.data)
    return _unary("log", x, value, lambda g: g / x.data)


def exp(x: Tensor) -> Tensor:
    value = np.exp(x.data)
    return _unary("exp", x, value, lambda g: g * value)


def relu(x: Tensor) -> Tensor:
    """Subgradient at exactly 0 is 0"""
    active = x.data > 0
    return _unary("relu", x, np.where(active, x.data, 0.0).astype(x.dtype), lambda g: g * active)


def sum(x: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    value = np.sum(x.data, axis=axis)

    def grad(g):
        g = g if axis is None else np.expand_dims(g, axis)
        return np.broadcast_to(g, x.shape).copy()

    return _unary("sum", x, np.asarray(value), grad)


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    if count == 0:
        raise ShapeError("mean: empty reduction")
    value = np.mean(x.data, axis=axis)

    def grad(g):
        g = g if axis is None else np.expand_dims(g, axis)
        return np.broadcast_to(g / count, x.shape).copy()

    return _unary("mean", x, np.asarray(value), grad)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x (N, in) @ weight (in, out) + bias (out,)"""
    if x.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise ShapeError(f"linear: expected (N, in), (in, out), (out,), got {x.shape}, {weight.shape}, {bias.shape}")
    if x.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.shape}, {weight.shape}, {bias.shape}")
    value = x.data @ weight.data + bias.data

    def backward(g):
        return [g @ weight.data.T, x.data.T @ g, g.sum(axis=0)]

    return _emit("linear", [x, weight, bias], value, backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis"""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return [s * (g - np.sum(g * s, axis=-1, keepdims=True))]

    return _emit("softmax", [x], s, backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: no inputs")
    ndim = tensors[0].data.ndim
    axis = axis % ndim
    for t in tensors:
        if t.data.ndim != ndim or any(t.shape[d] != tensors[0].shape[d] for d in range(ndim) if d != axis):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} along axis {axis}")
    value = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return [np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])]

    return _emit("concat", list(tensors), value, backward)


def channel_concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate (C, H, W) feature maps along channels"""
    for t in tensors:
        if t.data.ndim != 3:
            raise ShapeError(f"channel_concat: expected (C, H, W) maps, got {t.shape}")
    return concat(tensors, axis=0)


def columns(x: Tensor, start: int, stop: int) -> Tensor:
    """x[:, start:stop] for a 2D tensor"""
    if x.data.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"columns: bad slice [{start}:{stop}] of {x.shape}")
    value = x.data[:, start:stop].copy()

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return [full]

    return _emit("columns", [x], value, backward)


def gather_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """table[index] for an integer index vector; differentiable w.r.t. the table"""
    index = np.asarray(index)
    if table.data.ndim != 2 or index.ndim != 1 or not np.issubdtype(index.dtype, np.integer):
        raise ShapeError(f"gather_rows: expected (T, F) table and integer vector, got {table.shape}, {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {table.shape[0]} rows")
    value = table.data[index]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, index, g)
        return [full]

    return _emit("gather_rows", [table], value, backward)


def trilinear_blend(rows: Tensor, weights: np.ndarray) -> Tensor:
    """Blend 8 vertex rows per point: rows (N*8, F) point-major, fixed weights (N, 8) -> (N, F)"""
    weights = np.asarray(weights, dtype=rows.dtype)
    if weights.ndim != 2 or weights.shape[1] != 8 or rows.data.ndim != 2 or rows.shape[0] != weights.shape[0] * 8:
        raise ShapeError(f"trilinear_blend: rows {rows.shape} do not match weights {weights.shape}")
    n, f = weights.shape[0], rows.shape[1]
    stacked = rows.data.reshape(n, 8, f)
    value = np.einsum("nk,nkf->nf", weights, stacked)

    def backward(g):
        return [(weights[:, :, None] * g[:, None, :]).reshape(n * 8, f)]

    return _emit("trilinear_blend", [rows], value, backward)


def bilinear_sample_2d(feature_map: Tensor, u: np.ndarray, v: np.ndarray) -> Tensor:
    """Sample a (C, H, W) map at fractional pixel coords -> (N, C)

    ``u`` indexes H and ``v`` indexes W; pixel centers sit at integers. Points
    with u outside [-0.5, H - 0.5] (or v likewise) get zero features; inside
    that band coordinates clamp to the edge pixels. Coordinates are constants.
    """
    if feature_map.data.ndim != 3:
        raise ShapeError(f"bilinear_sample_2d: expected (C, H, W), got {feature_map.shape}")
    c, h, w = feature_map.shape
    if h < 2 or w < 2:
        raise ShapeError("bilinear_sample_2d: map needs at least 2x2 pixels")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    inside = (u >= -0.5) & (u <= h - 0.5) & (v >= -0.5) & (v <= w - 0.5)
    uc = np.clip(u, 0.0, h - 1.0)
    vc = np.clip(v, 0.0, w - 1.0)
    u0 = np.minimum(np.floor(uc).astype(np.int64), h - 2)
    v0 = np.minimum(np.floor(vc).astype(np.int64), w - 2)
    fu = uc - u0
    fv = vc - v0
    corner_index = np.stack([u0 * w + v0, u0 * w + v0 + 1, (u0 + 1) * w + v0, (u0 + 1) * w + v0 + 1], axis=1)
    corner_weight = np.stack([(1 - fu) * (1 - fv), (1 - fu) * fv, fu * (1 - fv), fu * fv], axis=1)
    corner_weight = (corner_weight * inside[:, None]).astype(feature_map.dtype)

    flat = feature_map.data.reshape(c, h * w).T
    value = np.einsum("nk,nkc->nc", corner_weight, flat[corner_index])

    def backward(g):
        grad_flat = np.zeros((h * w, c), dtype=feature_map.dtype)
        np.add.at(grad_flat, corner_index.ravel(), (corner_weight[:, :, None] * g[:, None, :]).reshape(-1, c))
        return [grad_flat.T.reshape(c, h, w)]

    return _emit("bilinear_sample_2d", [feature_map], value, backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Stride-1 'same' convolution: x (Cin, H, W), weight (Cout, Cin, k, k) with odd k"""
    if x.data.ndim != 3 or weight.data.ndim != 4 or bias.data.ndim != 1:
        raise ShapeError(f"conv2d: expected (C, H, W), (O, C, k, k), (O,), got {x.shape}, {weight.shape}, {bias.shape}")
    cout, cin, kh, kw = weight.shape
    if cin != x.shape[0] or kh != kw or kh % 2 == 0 or bias.shape[0] != cout:
        raise ShapeError(f"conv2d: incompatible shapes {x.shape}, {weight.shape}, {bias.shape}")
    _, h, w = x.shape
    k, pad = kh, kh // 2
    padded = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(cin * k * k, h * w)
    kernel = weight.data.reshape(cout, cin * k * k)
    value = (kernel @ cols + bias.data[:, None]).reshape(cout, h, w)

    def backward(g):
        gm = g.reshape(cout, h * w)
        grad_weight = (gm @ cols.T).reshape(weight.shape)
        grad_bias = gm.sum(axis=1)
        dcols = (kernel.T @ gm).reshape(cin, k, k, h, w)
        grad_padded = np.zeros_like(padded)
        for di in range(k):
            for dj in range(k):
                grad_padded[:, di:di + h, dj:dj + w] += dcols[:, di, dj]
        return [grad_padded[:, pad:pad + h, pad:pad + w], grad_weight, grad_bias]

    return _emit("conv2d", [x, weight, bias], value, backward)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling of a (C, H, W) map with even H, W"""
    if x.data.ndim != 3 or x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeError(f"avg_pool2: expected (C, H, W) with even H, W, got {x.shape}")
    c, h, w = x.shape
    value = x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def backward(g):
        return [np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) / 4.0]

    return _emit("avg_pool2", [x], value, backward)


def upsample_nearest(x: Tensor) -> Tensor:
    """x2 nearest-neighbour upsampling of a (C, H, W) map"""
    if x.data.ndim != 3:
        raise ShapeError(f"upsample_nearest: expected (C, H, W), got {x.shape}")
    c, h, w = x.shape
    value = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def backward(g):
        return [g.reshape(c, h, 2, w, 2).sum(axis=(2, 4))]

    return _emit("upsample_nearest", [x], value, backward)
