"""
Reverse-mode automatic differentiation over numpy arrays
"""
from .checkpoint import load_checkpoint, save_checkpoint
from .module import Conv2d, Linear, Module, Parameter
from .optim import SgdState, sgd_step
from .tensor import DTYPES, Tape, Tensor, backward

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "DTYPES",
    "Module",
    "Parameter",
    "Linear",
    "Conv2d",
    "SgdState",
    "sgd_step",
    "save_checkpoint",
    "load_checkpoint",
]
