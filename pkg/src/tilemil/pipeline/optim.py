"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..core.tensor import Tensor


def cosine_lr(step: int, total_steps: int, base_lr: float, floor: float = 0.0) -> float:
    """Cosine decay from ``base_lr`` at step 0 to ``floor`` at ``total_steps - 1``."""
    if total_steps <= 1:
        return base_lr
    frac = min(step, total_steps - 1) / (total_steps - 1)
    return floor + 0.5 * (base_lr - floor) * (1.0 + math.cos(math.pi * frac))


class AdamW:
    """Decay is applied to matrices only; vectors (norm gains, biases) are exempt."""

    def __init__(self, params: Sequence[Tensor], betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-2):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2))
                             for p in self.params if p.grad is not None))

    def step(self, lr: float, clip_norm: float | None = None) -> None:
        self.t += 1
        scale = 1.0
        if clip_norm is not None:
            norm = self.grad_norm()
            if norm > clip_norm:
                scale = clip_norm / (norm + 1e-12)
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad * scale if scale != 1.0 else p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay and p.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data = p.data - (lr * update).astype(p.dtype, copy=False)
