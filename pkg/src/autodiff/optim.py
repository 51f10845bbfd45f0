"""
Plain SGD with a step-decay learning rate
"""
from dataclasses import dataclass
from typing import Iterable

from src.autodiff.tensor import Tensor
from src.core.config import TrainConfig
from src.core.exceptions import ConfigError


@dataclass
class SgdState:
    base_lr: float = 0.001
    decay_factor: float = 0.5
    decay_every: int = 100
    current_epoch: int = 0

    @classmethod
    def from_config(cls, config: TrainConfig) -> "SgdState":
        return cls(base_lr=config.base_lr, decay_factor=config.decay_factor, decay_every=config.decay_every)

    def lr_at(self, epoch: int) -> float:
        if self.decay_every < 1:
            raise ConfigError(f"decay_every must be >= 1, got {self.decay_every}")
        return self.base_lr * self.decay_factor ** (epoch // self.decay_every)

    @property
    def effective_lr(self) -> float:
        return self.lr_at(self.current_epoch)


def sgd_step(params: Iterable[Tensor], state: SgdState) -> float:
    """p <- p - lr * grad for every parameter passed in; returns the lr used"""
    lr = state.effective_lr
    if not lr > 0:
        raise ConfigError(f"learning rate must be > 0, got {lr}")
    for p in params:
        if p.grad is None:
            continue
        p.data -= (lr * p.grad).astype(p.dtype, copy=False)
    return lr
