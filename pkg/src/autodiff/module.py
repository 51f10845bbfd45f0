"""
Parameter containers

A ``Module`` owns named parameters and child modules; full names are dotted
paths (``encoder.down0.conv1.weight``) and are the keys of ``state_dict`` and
of checkpoint manifests.
"""
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from src.autodiff import init
from src.autodiff.ops import conv2d, linear
from src.autodiff.tensor import Tensor
from src.core.exceptions import CheckpointError


class Parameter(Tensor):
    """Trainable leaf tensor"""

    __slots__ = ()

    def __init__(self, data, name: Optional[str] = None, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)


class Module:
    """Base class for everything that carries parameters"""

    def __init__(self):
        self._parameters: Dict[str, Parameter] = {}
        self._children: Dict[str, "Module"] = {}

    def add_parameter(self, name: str, value: np.ndarray) -> Parameter:
        param = Parameter(value, name=name)
        self._parameters[name] = param
        return param

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._parameters.items():
            yield f"{prefix}{name}", param
        for child_name, child in self._children.items():
            yield from child.named_parameters(prefix=f"{prefix}{child_name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise CheckpointError(f"parameter names differ: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, param in own.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise CheckpointError(f"{name}: stored shape {value.shape} != model shape {param.shape}")
            param.data = value.astype(param.dtype)
            param.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.weight = self.add_parameter(
            "weight", init.glorot_uniform(rng, (in_features, out_features), in_features, out_features, dtype))
        self.bias = self.add_parameter("bias", init.zeros((out_features,), dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        area = kernel_size * kernel_size
        self.weight = self.add_parameter("weight", init.glorot_uniform(
            rng, (out_channels, in_channels, kernel_size, kernel_size), in_channels * area, out_channels * area, dtype))
        self.bias = self.add_parameter("bias", init.zeros((out_channels,), dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias)
