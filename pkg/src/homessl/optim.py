"""Warmup-cosine learning-rate schedule and SGD with momentum and weight decay."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Schedule:
    base_lr: float = 0.5
    final_lr: float = 0.002
    warmup_epochs: int = 10
    total_epochs: int = 800
    steps_per_epoch: int = 1

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch

    @property
    def last_step(self) -> int:
        return self.total_epochs * self.steps_per_epoch - 1


def lr_at(step: int, schedule: Schedule) -> float:
    """Linear warmup from 0 to ``base_lr``, then cosine decay reaching ``final_lr`` at the last step."""
    if step < 0:
        raise ValueError("step must be non-negative")
    s = schedule
    if step < s.warmup_steps:
        return s.base_lr * step / s.warmup_steps
    span = s.last_step - s.warmup_steps
    if span <= 0:
        return s.final_lr if step >= s.last_step else s.base_lr
    progress = min(1.0, (step - s.warmup_steps) / span)
    return s.final_lr + (s.base_lr - s.final_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


class SGD:
    """Heavy-ball SGD; weight decay is added to the gradient of decayed parameters."""

    def __init__(self, params, momentum: float = 0.9, weight_decay: float = 5e-4, decay_mask=None):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.decay_mask = list(decay_mask) if decay_mask is not None else [True] * len(params)
        self.buffers = [np.zeros_like(p) for p in params]

    def step(self, params, grads, lr: float) -> None:
        for p, g, buf, decay in zip(params, grads, self.buffers, self.decay_mask):
            if decay and self.weight_decay:
                g = g + self.weight_decay * p
            buf *= self.momentum
            buf += g
            p -= lr * buf
