"""Finite-difference audit of backpropagated gradients.

Central differences in double precision against analytic gradients; the
helper samples parameter coordinates across all tensors so every layer
contributes to the audit.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

LossAndGrads = Callable[[], tuple[float, dict[str, np.ndarray]]]


def gradient_check(
    params: dict[str, np.ndarray],
    loss_and_grads: LossAndGrads,
    rng: np.random.Generator,
    n_samples: int = 200,
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic and finite-difference gradients.

    ``loss_and_grads`` must evaluate the loss at the *current* parameter
    values and return fresh gradients (dropout disabled / replayed). The
    parameter arrays are perturbed in place and restored.
    """
    for p in params.values():
        if p.dtype != np.float64:
            raise ValueError("gradient_check requires float64 parameters")
    _, grads = loss_and_grads()

    names = sorted(params)
    sizes = np.array([params[n].size for n in names])
    total = int(sizes.sum())
    n_samples = min(n_samples, total)
    chosen = rng.choice(total, size=n_samples, replace=False)

    bounds = np.cumsum(sizes)
    max_rel = 0.0
    for flat in np.sort(chosen):
        which = int(np.searchsorted(bounds, flat, side="right"))
        idx = int(flat - (bounds[which - 1] if which else 0))
        name = names[which]
        p = params[name]

        orig = p.flat[idx]
        p.flat[idx] = orig + h
        loss_plus, _ = loss_and_grads()
        p.flat[idx] = orig - h
        loss_minus, _ = loss_and_grads()
        p.flat[idx] = orig

        fd = (loss_plus - loss_minus) / (2.0 * h)
        bp = float(grads[name].flat[idx])
        rel = abs(bp - fd) / max(abs(bp), abs(fd), 1e-3)
        max_rel = max(max_rel, rel)
    return max_rel
