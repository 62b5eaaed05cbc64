"""Named parameters, SGD with classical momentum, and the LR schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import StateError


class Parameter:
    """A named, trainable tensor with a persistent velocity buffer."""

    __slots__ = ("name", "tensor", "velocity")

    def __init__(self, name: str, data):
        self.name = str(name)
        self.tensor = Tensor(data, requires_grad=True)
        self.velocity = np.zeros_like(self.tensor.data)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self.tensor.data.shape:
            raise ValueError(f"parameter {self.name}: shape {arr.shape} != {self.tensor.data.shape}")
        self.tensor.data = arr

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def check_unique_names(params) -> None:
    seen = set()
    for p in params:
        if p.name in seen:
            raise ValueError(f"duplicate parameter name: {p.name}")
        seen.add(p.name)


def zero_grads(params) -> None:
    for p in params:
        p.tensor.grad = None


def sgd_step(params, lr: float, momentum: float = 0.9) -> None:
    """One in-place update: v <- momentum*v + grad; theta <- theta - lr*v.

    Plain (non-Nesterov) momentum; momentum=1 would never decay the
    velocity and is rejected.
    """
    lr = float(lr)
    momentum = float(momentum)
    if lr <= 0.0 or not math.isfinite(lr):
        raise ValueError(f"learning rate must be positive and finite, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
    for p in params:
        if p.tensor.grad is None:
            raise StateError(f"parameter {p.name} has no gradient; run backward first")
    for p in params:
        p.velocity *= momentum
        p.velocity += p.tensor.grad
        p.tensor.data = p.tensor.data - lr * p.velocity


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup to ``base_lr`` followed by cosine decay to zero.

    Epoch e < warmup_epochs gets base_lr*(e+1)/warmup_epochs; afterwards
    base_lr * 0.5*(1 + cos(pi * progress)) with progress measured over the
    remaining epochs, so the final epoch's rate is still positive.
    """

    base_lr: float
    warmup_epochs: int
    total_epochs: int

    def __post_init__(self):
        if self.base_lr <= 0.0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.warmup_epochs < 0:
            raise ValueError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if self.total_epochs <= self.warmup_epochs:
            raise ValueError(
                f"total_epochs ({self.total_epochs}) must exceed warmup_epochs ({self.warmup_epochs})"
            )

    def lr_at(self, epoch: int) -> float:
        if not 0 <= epoch < self.total_epochs:
            raise ValueError(f"epoch {epoch} outside [0, {self.total_epochs})")
        if epoch < self.warmup_epochs:
            return self.base_lr * (epoch + 1) / self.warmup_epochs
        progress = (epoch - self.warmup_epochs) / (self.total_epochs - self.warmup_epochs)
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """He-style uniform init: U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)
