"""Sequential container and loss functions."""

from __future__ import annotations

import numpy as np

from coughgate.neural.layers import Layer, LayerSpec, build_layer


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


class Sequential:
    """Ordered layer stack with a shared forward cache for backward."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    @classmethod
    def from_specs(
        cls,
        specs: list[LayerSpec],
        input_shape: tuple,
        rng: np.random.Generator,
        dtype=np.float32,
    ) -> "Sequential":
        layers = []
        shape = input_shape
        for spec in specs:
            layer = build_layer(spec, shape, rng, dtype=dtype)
            shape = layer.out_shape(shape)
            layers.append(layer)
        return cls(layers)

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train=train, rng=rng)
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                out[f"{i:02d}_{layer.kind}/{name}"] = p
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, g in layer.grads.items():
                out[f"{i:02d}_{layer.kind}/{name}"] = g
        return out

    def zero_grads(self) -> None:
        for layer in self.layers:
            layer.zero_grads()

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        current = self.params()
        missing = set(current) ^ set(values)
        if missing:
            raise ValueError(f"parameter name mismatch: {sorted(missing)}")
        for name, p in current.items():
            if p.shape != values[name].shape:
                raise ValueError(f"shape mismatch for {name}")
            p[...] = values[name]

    def shapes(self, input_shape: tuple) -> list[tuple]:
        out = []
        shape = input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
            out.append(shape)
        return out

    def n_params(self) -> int:
        return sum(layer.n_params() for layer in self.layers)


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy on logits; gradient is (sigmoid(z) - y) / n."""
    z = logits.reshape(-1)
    y = targets.reshape(-1).astype(z.dtype)
    softplus = np.logaddexp(0.0, z)
    loss = float(np.mean(softplus - y * z))
    grad = (sigmoid(z) - y) / z.size
    return loss, grad.reshape(logits.shape).astype(logits.dtype)


def masked_mse(
    pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Mean squared error over selected cells (all cells when mask is None)."""
    if mask is None:
        mask = np.ones_like(pred, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(pred)
    diff = (pred - target) * mask
    loss = float(np.sum(diff * diff) / count)
    grad = (2.0 / count) * diff
    return loss, grad.astype(pred.dtype)
