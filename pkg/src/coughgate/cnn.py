"""CNN classifier on MFCC sonographs: architecture, audio augmentation,
training with best-validation-AUC checkpointing, and inference.

The full architecture follows the published layer table (seven weight
layers from 7x7/32 down to 3x3/512, global average pooling, then two
dense layers). Note the fifth convolution: the table lists 512 filters,
but both its parameter count (590,080) and its output shape (8x32x256)
are only consistent with 256 filters, so 256 is used here. The "toy"
variant keeps the same shape of stack at a fraction of the width for
desk-scale runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from coughgate import evaluate
from coughgate.corpus import CoughExample, stable_rng
from coughgate.features import (
    SONOGRAPH_SAMPLES,
    Sonograph,
    sonograph_from_samples,
)
from coughgate.neural import (
    Adamax,
    LayerSpec,
    Sequential,
    bce_with_logits,
    load_weights,
    save_weights,
    sigmoid,
)

SONOGRAPH_INPUT_SHAPE = (64, 256, 1)
DROPOUT_RATE = 0.2

# Parameter counts of the published table, in weight-layer order
# (convolutions 1-6, then the two dense layers; Conv-5 read as 256 filters).
TABLE2_PARAM_COUNTS = (1600, 51264, 147712, 590080, 590080, 1180160, 131328, 257)


def table2_architecture() -> list[LayerSpec]:
    """Full-scale stack; every ReLU is followed by dropout 0.2, the final
    dense layer emits one logit (sigmoid applied at inference)."""

    def conv(kernel: int, filters: int) -> list[LayerSpec]:
        return [
            LayerSpec("conv2d", {"kernel": (kernel, kernel), "filters": filters}),
            LayerSpec("relu"),
            LayerSpec("dropout", {"rate": DROPOUT_RATE}),
        ]

    pool = LayerSpec("maxpool2d", {"window": 2, "stride": 2})
    specs: list[LayerSpec] = []
    specs += conv(7, 32)
    specs += conv(5, 64)
    specs.append(pool)
    specs += conv(3, 256)
    specs.append(pool)
    specs += conv(3, 256)
    specs.append(pool)
    specs += conv(3, 256)  # listed as 512 filters; counts/shapes say 256
    specs.append(pool)
    specs += conv(3, 512)
    specs.append(LayerSpec("global_avg_pool"))
    specs.append(LayerSpec("dense", {"units": 256}))
    specs.append(LayerSpec("relu"))
    specs.append(LayerSpec("dropout", {"rate": DROPOUT_RATE}))
    specs.append(LayerSpec("dense", {"units": 1}))
    return specs


def toy_architecture() -> list[LayerSpec]:
    """Width-reduced stack for desk-scale training and gradient audits."""
    return [
        LayerSpec("conv2d", {"kernel": (7, 7), "filters": 8}),
        LayerSpec("relu"),
        LayerSpec("dropout", {"rate": DROPOUT_RATE}),
        LayerSpec("maxpool2d", {"window": 4, "stride": 4}),
        LayerSpec("conv2d", {"kernel": (3, 3), "filters": 16}),
        LayerSpec("relu"),
        LayerSpec("dropout", {"rate": DROPOUT_RATE}),
        LayerSpec("maxpool2d", {"window": 4, "stride": 4}),
        LayerSpec("conv2d", {"kernel": (3, 3), "filters": 32}),
        LayerSpec("relu"),
        LayerSpec("dropout", {"rate": DROPOUT_RATE}),
        LayerSpec("global_avg_pool"),
        LayerSpec("dense", {"units": 32}),
        LayerSpec("relu"),
        LayerSpec("dropout", {"rate": DROPOUT_RATE}),
        LayerSpec("dense", {"units": 1}),
    ]


ARCHITECTURES = {"table2": table2_architecture, "toy": toy_architecture}


@dataclass
class AugmentSpec:
    shift_min_fraction: float = -0.5
    shift_max_fraction: float = 0.5
    shift_probability: float = 1.0
    noise_param_min: float = 0.25
    noise_param_max: float = 0.9
    noise_probability: float = 0.5


@dataclass
class CnnTrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 100
    batch_size: int = 16
    upsample_ratio: int = 4
    augment: AugmentSpec = field(default_factory=AugmentSpec)

    @classmethod
    def toy(cls, epochs: int = 25) -> "CnnTrainConfig":
        # Desk-scale preset: the short schedule needs a larger step size.
        return cls(learning_rate=3e-3, epochs=epochs)


@dataclass
class CnnModel:
    """Trained CNN plus the dataset standardization applied to inputs.

    Sonographs are standardized per MFCC row (coefficient) with statistics
    from the training set, so low-order coefficients with large dynamic
    range cannot drown out the informative ones.
    """

    arch_name: str
    net: Sequential
    norm_mean: np.ndarray = None  # [64, 1]
    norm_std: np.ndarray = None  # [64, 1]

    def __post_init__(self) -> None:
        if self.norm_mean is None:
            self.norm_mean = np.zeros((64, 1))
        if self.norm_std is None:
            self.norm_std = np.ones((64, 1))


def build_cnn(arch_name: str = "table2", rng_seed: int = 0, dtype=np.float32) -> CnnModel:
    specs = ARCHITECTURES[arch_name]()
    rng = np.random.default_rng(rng_seed)
    net = Sequential.from_specs(specs, SONOGRAPH_INPUT_SHAPE, rng, dtype=dtype)
    return CnnModel(arch_name=arch_name, net=net)


def weight_layer_param_counts(model: CnnModel) -> list[int]:
    return [layer.n_params() for layer in model.net.layers if layer.n_params()]


def augment_audio(audio: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Random time shift (vacated region zeroed) plus optional Gaussian noise
    whose sigma is a random multiple of the signal RMS."""
    if len(audio) == 0:
        raise ValueError("cannot augment empty audio")
    out = audio.copy()
    if spec.shift_probability > 0 and rng.random() < spec.shift_probability:
        frac = rng.uniform(spec.shift_min_fraction, spec.shift_max_fraction)
        offset = int(round(frac * len(out)))
        shifted = np.zeros_like(out)
        if offset > 0:
            shifted[offset:] = out[: len(out) - offset]
        elif offset < 0:
            shifted[: len(out) + offset] = out[-offset:]
        else:
            shifted = out
        out = shifted
    if spec.noise_probability > 0 and rng.random() < spec.noise_probability:
        param = rng.uniform(spec.noise_param_min, spec.noise_param_max)
        rms = float(np.sqrt(np.mean(out**2)))
        if rms > 0:
            out = out + rng.normal(0.0, param * rms, len(out))
    return out


def _condensed(example: CoughExample) -> np.ndarray:
    if len(example.cough) >= SONOGRAPH_SAMPLES:
        return example.cough[:SONOGRAPH_SAMPLES].copy()
    return np.concatenate(
        [example.cough, np.zeros(SONOGRAPH_SAMPLES - len(example.cough))]
    )


def example_sonograph(
    example: CoughExample,
    augment: AugmentSpec | None = None,
    rng: np.random.Generator | None = None,
    copy_index: int = 0,
) -> Sonograph:
    samples = _condensed(example)
    if augment is not None:
        samples = augment_audio(samples, augment, rng or np.random.default_rng())
    return sonograph_from_samples(samples, record_id=example.id, copy_index=copy_index)


def _predict_logits(net: Sequential, x: np.ndarray, batch: int = 64) -> np.ndarray:
    outs = []
    for lo in range(0, len(x), batch):
        outs.append(net.forward(x[lo : lo + batch], train=False).reshape(-1))
    return np.concatenate(outs) if outs else np.zeros(0)


def train_cnn(
    train_examples: list[CoughExample],
    val_examples: list[CoughExample],
    config: CnnTrainConfig | None = None,
    rng_seed: int = 0,
    arch_name: str = "table2",
) -> tuple[CnnModel, dict]:
    """Train with 4:1 positive upsampling and per-copy augmentation.

    Validation AUC is computed after every epoch and the weights from the
    best epoch are returned. History carries per-epoch loss and AUC.
    """
    config = config or CnnTrainConfig()
    if not train_examples or not val_examples:
        raise ValueError("train and validation sets must be non-empty")
    if any(e.label is None for e in train_examples + val_examples):
        raise ValueError("CNN training requires labeled examples")
    val_labels = np.array([e.label for e in val_examples])
    if len(np.unique(val_labels)) < 2:
        raise ValueError("AUC undefined for single-class validation split")

    # Static upsampled + augmented training set; augmentation randomness is
    # keyed on (seed, record id, copy index) so every copy differs but runs
    # reproduce bit-identically.
    entries = []
    for ex in train_examples:
        copies = config.upsample_ratio if ex.label == 1 else 1
        for k in range(copies):
            entries.append((ex, k))
    x_train = np.stack(
        [
            example_sonograph(
                ex, config.augment, stable_rng(rng_seed, ex.id, k), copy_index=k
            ).values
            for ex, k in entries
        ]
    ).astype(np.float32)[..., None]
    y_train = np.array([ex.label for ex, _ in entries], dtype=np.float32)

    x_val = np.stack([example_sonograph(ex).values for ex in val_examples]).astype(
        np.float32
    )[..., None]

    norm_mean = x_train.mean(axis=(0, 2, 3))[:, None].astype(np.float64)
    norm_std = x_train.std(axis=(0, 2, 3))[:, None].astype(np.float64)
    norm_std[norm_std < 1e-12] = 1.0
    x_train = ((x_train - norm_mean[..., None]) / norm_std[..., None]).astype(np.float32)
    x_val = ((x_val - norm_mean[..., None]) / norm_std[..., None]).astype(np.float32)

    model = build_cnn(arch_name, rng_seed=rng_seed)
    model.norm_mean, model.norm_std = norm_mean, norm_std
    net = model.net
    optimizer = Adamax(net.params(), lr=config.learning_rate)
    rng = np.random.default_rng(rng_seed + 1)

    history: list[dict] = []
    best_auc = -1.0
    best_epoch = -1
    best_params: dict[str, np.ndarray] = {}
    n = len(entries)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            net.zero_grads()
            logits = net.forward(x_train[idx], train=True, rng=rng)
            loss, dlogits = bce_with_logits(logits, y_train[idx])
            net.backward(dlogits)
            optimizer.step(net.grads())
            losses.append(loss)
        probs = sigmoid(_predict_logits(net, x_val))
        _, auc = evaluate.roc_and_auc(evaluate.ScoredSet(probs, val_labels))
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_auc": auc})
        if auc > best_auc:
            best_auc = auc
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in net.params().items()}

    net.set_params(best_params)
    return model, {"epochs": history, "best_epoch": best_epoch, "best_val_auc": best_auc}


def predict_cnn(model: CnnModel, sonograph: Sonograph | np.ndarray) -> float:
    """Probability for one sonograph (eval mode, dropout off)."""
    values = sonograph.values if isinstance(sonograph, Sonograph) else np.asarray(sonograph)
    if values.shape != SONOGRAPH_INPUT_SHAPE[:2]:
        raise ValueError(f"sonograph must have shape {SONOGRAPH_INPUT_SHAPE[:2]}")
    x = ((values - model.norm_mean) / model.norm_std).astype(np.float32)
    logit = model.net.forward(x[None, :, :, None], train=False)
    return float(sigmoid(float(logit.reshape(-1)[0])))


def predict_cnn_batch(model: CnnModel, sonographs: np.ndarray) -> np.ndarray:
    """Probabilities for a [n, 64, 256] stack of sonographs."""
    x = ((sonographs - model.norm_mean) / model.norm_std).astype(np.float32)[..., None]
    return np.asarray(sigmoid(_predict_logits(model.net, x)))


def save_cnn(out_dir: str | Path, model: CnnModel, sidecar: dict | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_weights(out_dir / "cnn_weights.bin", model.net.params())
    doc = {
        "kind": "cnn",
        "version": 1,
        "arch": model.arch_name,
        "norm_mean": np.asarray(model.norm_mean).ravel().tolist(),
        "norm_std": np.asarray(model.norm_std).ravel().tolist(),
    }
    doc.update(sidecar or {})
    (out_dir / "cnn_model.json").write_text(json.dumps(doc, indent=2))


def load_cnn(out_dir: str | Path) -> CnnModel:
    out_dir = Path(out_dir)
    doc = json.loads((out_dir / "cnn_model.json").read_text())
    if doc.get("kind") != "cnn":
        raise ValueError(f"not a cnn checkpoint: {out_dir}")
    model = build_cnn(doc["arch"], rng_seed=0)
    model.net.set_params(load_weights(out_dir / "cnn_weights.bin"))
    model.norm_mean = np.array(doc["norm_mean"], dtype=np.float64)[:, None]
    model.norm_std = np.array(doc["norm_std"], dtype=np.float64)[:, None]
    return model
