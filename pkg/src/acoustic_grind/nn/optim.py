"""Adam with coupled L2 weight decay and a reduce-on-plateau learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Update ``params`` in place. The decay term is added to the gradient (L2, not AdamW)."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for key, theta in params.items():
        g = grads[key]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {theta.shape} for {key}")
        if state.weight_decay:
            g = g + state.weight_decay * theta
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(theta)
            state.v[key] = np.zeros_like(theta)
        v = state.v[key]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        theta -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class PlateauScheduler:
    factor: float = 0.5
    patience: int = 5
    min_lr: float = 1e-6
    best: float = float("inf")
    bad_epochs: int = 0

    def step(self, optimizer: AdamState, validation_loss: float) -> bool:
        """Record one validation loss; returns True when the learning rate was reduced."""
        if validation_loss < self.best:
            self.best = validation_loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.bad_epochs = 0
            new_lr = max(optimizer.lr * self.factor, self.min_lr)
            reduced = new_lr < optimizer.lr
            optimizer.lr = new_lr
            return reduced
        return False


def scheduler_step(scheduler: PlateauScheduler, optimizer: AdamState, validation_loss: float) -> float:
    scheduler.step(optimizer, validation_loss)
    return optimizer.lr
