from collections.abc import Sequence

import numpy as np

from pkcam.tensor.tensor import Tensor


class SGD:
    """Momentum SGD with coupled weight decay: v ← μ·v + (g + λ·p); p ← p − lr·v."""

    def __init__(
        self,
        parameters: Sequence[Tensor],
        lr: float,
        momentum: float = 0.9,
        weight_decay: float = 1e-4,
    ) -> None:
        self.params = list(parameters)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            grad = p.grad + self.weight_decay * p.data
            self.velocity[i] = self.momentum * self.velocity[i] + grad
            p.assign_(p.data - self.lr * self.velocity[i])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class StepLR:
    """Multiplies the base rate by `gamma` once every `step` epochs."""

    def __init__(self, optimizer: SGD, step: int, gamma: float = 0.1) -> None:
        self.optimizer = optimizer
        self.base_lr = optimizer.lr
        self.step = step
        self.gamma = gamma

    def lr_at(self, epoch: int) -> float:
        return self.base_lr * self.gamma ** (epoch // self.step)

    def apply(self, epoch: int) -> float:
        self.optimizer.lr = self.lr_at(epoch)
        return self.optimizer.lr
