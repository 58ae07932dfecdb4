"""First-order optimizer and parameter averaging."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter


class TrainingDiverged(RuntimeError):
    """Loss or gradients became non-finite; carries the last good state."""

    def __init__(self, message: str, last_good: dict | None = None, epoch: int | None = None):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch


class Adam:
    def __init__(
        self,
        params: list[Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise TrainingDiverged(f"non-finite gradient in parameter {p.name!r}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.zero_grad()


class AveragedParams:
    """Bias-corrected exponential moving average of parameter values."""

    def __init__(self, params: list[Parameter], decay: float = 0.999):
        if not 0.0 <= decay < 1.0:
            raise ValueError("decay must lie in [0, 1)")
        self.decay = decay
        self.names = [p.name for p in params]
        self.ema = {p.name: np.zeros_like(p.data) for p in params}
        self.count = 0

    def update(self, params: list[Parameter]) -> None:
        self.count += 1
        rho = self.decay
        for p in params:
            self.ema[p.name] = rho * self.ema[p.name] + (1.0 - rho) * p.data

    def averaged(self) -> dict[str, np.ndarray]:
        if self.count == 0:
            raise ValueError("no updates recorded yet")
        corr = 1.0 - self.decay**self.count
        return {k: v / corr for k, v in self.ema.items()}
