"""Minimal deterministic neural-network engine (numpy, CPU).

Fixed layer-sequence reverse-mode only: each layer implements an exact
backward for its forward, audited against central finite differences.
"""

from coughgate.neural.layers import (
    Conv2D,
    Dense,
    Dropout,
    FeedForward,
    GlobalAvgPool,
    Layer,
    LayerNorm,
    LayerSpec,
    MaxPool2D,
    MultiHeadAttention,
    ReLU,
    Sigmoid,
    TransformerBlock,
    build_layer,
)
from coughgate.neural.net import Sequential, bce_with_logits, masked_mse, sigmoid
from coughgate.neural.optim import Adamax, AdamW, warmup_linear_decay
from coughgate.neural.gradcheck import gradient_check
from coughgate.neural.checkpoint import load_weights, save_weights

__all__ = [
    "Adamax",
    "AdamW",
    "Conv2D",
    "Dense",
    "Dropout",
    "FeedForward",
    "GlobalAvgPool",
    "Layer",
    "LayerNorm",
    "LayerSpec",
    "MaxPool2D",
    "MultiHeadAttention",
    "ReLU",
    "Sequential",
    "Sigmoid",
    "TransformerBlock",
    "bce_with_logits",
    "build_layer",
    "gradient_check",
    "load_weights",
    "masked_mse",
    "save_weights",
    "sigmoid",
    "warmup_linear_decay",
]
