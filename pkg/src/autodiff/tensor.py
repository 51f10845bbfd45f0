"""
Dense tensors and the reverse-mode tape

Operations executed while a ``Tape`` is active append one record each; with no
active tape they compute values only (inference mode).
"""
import threading
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from src.core.exceptions import UsageError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

DTYPES = {"float32": np.float32, "float64": np.float64}


class Tensor:
    """N-dimensional value with an optional gradient accumulator"""

    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        array = np.asarray(data, dtype=dtype)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data = array
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.name = name
        self.grad = np.zeros_like(array) if requires_grad else None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


@dataclass
class Record:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


_local = threading.local()


def _stack() -> List["Tape"]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def current_tape() -> Optional["Tape"]:
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed operations; confined to the creating thread"""

    def __init__(self):
        self.records: List[Record] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise UsageError("tapes must be closed in the order they were opened")
        stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn) -> None:
        self.records.append(Record(op, tuple(inputs), output, backward))
        self._produced.add(id(output))

    def produced(self, tensor: Tensor) -> bool:
        return id(tensor) in self._produced


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf reached by the tape"""
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.produced(loss):
        raise UsageError("loss was not produced on this tape")

    pending = {id(loss): np.ones_like(loss.data)}
    for record in reversed(tape.records):
        upstream = pending.pop(id(record.output), None)
        if upstream is None:
            continue
        input_grads = record.backward(upstream)
        for tensor, grad in zip(record.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.is_leaf:
                tensor.grad += grad.astype(tensor.data.dtype, copy=False)
            else:
                key = id(tensor)
                pending[key] = pending[key] + grad if key in pending else grad
