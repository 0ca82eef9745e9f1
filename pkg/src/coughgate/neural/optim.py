"""Adamax and AdamW with the warmup-then-linear-decay schedule."""

from __future__ import annotations

from typing import Callable

import numpy as np

Schedule = Callable[[int], float]


def warmup_linear_decay(max_lr: float, warmup_steps: int, total_steps: int) -> Schedule:
    """lr rises 0 -> max_lr over warmup_steps, then decays linearly to 0.

    By construction lr(0) = 0 (when warming up), lr(warmup) = max_lr and
    lr(total) = 0.
    """
    if warmup_steps > total_steps:
        raise ValueError("warmup_steps must not exceed total_steps")

    def lr_at(step: int) -> float:
        if warmup_steps > 0 and step < warmup_steps:
            return max_lr * step / warmup_steps
        if total_steps == warmup_steps:
            return max_lr
        return max_lr * max(0.0, (total_steps - step) / (total_steps - warmup_steps))

    return lr_at


class Adamax:
    """Infinity-norm Adam variant: u tracks max(beta2*u, |g|)."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-7,
    ) -> None:
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.u = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        correction = 1.0 - self.beta1**self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.u[name] = np.maximum(self.beta2 * self.u[name], np.abs(g))
            p -= (self.lr / correction) * self.m[name] / (self.u[name] + self.eps)


class AdamW:
    """Adam with decoupled weight decay and an optional lr schedule.

    The schedule is queried with the 0-based index of the upcoming step, so
    a warmup starting from zero really applies lr 0 on the first call.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        schedule: Schedule | None = None,
    ) -> None:
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.schedule = schedule
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        lr_t = self.schedule(self.t) if self.schedule is not None else self.lr
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p -= lr_t * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p)
