"""
Training objectives

``loss_dice`` is the global soft Dice over all classes and points:
1 - (2 * sum(p * y) + eps) / (sum(p + y) + eps).
"""
import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.core.exceptions import DomainError, ShapeError, ValidationError

ROW_SUM_TOL = 1e-5


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError(f"labels must lie in 0..{num_classes - 1}")
    return np.eye(num_classes, dtype=dtype)[labels]


def loss_intensity(pred: Tensor, truth: np.ndarray) -> Tensor:
    """Mean absolute error over the sampled points"""
    truth = np.asarray(truth, dtype=pred.dtype)
    if pred.data.size == 0:
        raise DomainError("loss_intensity on an empty batch")
    if truth.size != pred.data.size:
        raise ShapeError(f"loss_intensity: {pred.shape} predictions vs {truth.shape} targets")
    target = Tensor(truth.reshape(pred.shape))
    return ops.mean(ops.abs(ops.sub(pred, target)))


def loss_dice(probs: Tensor, onehot: np.ndarray, epsilon: float = 1e-6) -> Tensor:
    onehot = np.asarray(onehot, dtype=probs.dtype)
    if probs.data.ndim != 2 or onehot.shape != probs.shape:
        raise ShapeError(f"loss_dice: probabilities {probs.shape} vs one-hot {onehot.shape}")
    if probs.shape[0] == 0:
        raise DomainError("loss_dice on an empty batch")
    if np.any(np.abs(probs.data.sum(axis=1) - 1.0) > ROW_SUM_TOL):
        raise ValidationError("probability rows must sum to 1")
    if np.any(onehot.sum(axis=1) != 1) or np.any((onehot != 0) & (onehot != 1)):
        raise ValidationError("targets must be one-hot rows")
    overlap = ops.sum(ops.mul(probs, Tensor(onehot)))
    mass = ops.add(ops.sum(probs), float(onehot.sum()) + epsilon)
    return ops.sub(1.0, ops.div(ops.add(ops.mul(overlap, 2.0), epsilon), mass))


def loss_total(l_int: Tensor, l_seg: Tensor, lambda_int: float = 1.0, lambda_seg: float = 0.3) -> Tensor:
    return ops.add(ops.mul(l_int, float(lambda_int)), ops.mul(l_seg, float(lambda_seg)))
