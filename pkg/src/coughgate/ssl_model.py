"""Masked-spectrogram self-supervised learning.

Upstream: cough-only log spectrograms are masked in time blocks and one
frequency band, fed to a transformer encoder, and a two-layer prediction
head reconstructs the original values; MSE is taken over masked cells of
valid frames only. Downstream: the encoder is frozen and a three-layer
head (linear + layer norm + ReLU, then mean pooling over time and a
classifier) is trained on the representations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from coughgate import evaluate
from coughgate.audio_io import AudioBuffer
from coughgate.corpus import CoughExample
from coughgate.features import (
    Spectrogram,
    StftConfig,
    cough_only_samples,
    stft_log_spectrogram,
)
from coughgate.neural import (
    AdamW,
    Dense,
    LayerNorm,
    ReLU,
    TransformerBlock,
    bce_with_logits,
    load_weights,
    masked_mse,
    save_weights,
    sigmoid,
    warmup_linear_decay,
)
from coughgate.quality import CoughSegment


@dataclass
class MaskSpec:
    time_mask_fraction: float = 0.15
    max_freq_band_fraction: float = 0.20
    noise_probability: float = 0.10
    noise_mean: float = 0.0
    noise_variance: float = 0.2
    time_block_width: int = 7


@dataclass
class EncoderConfig:
    layers: int = 3
    hidden: int = 768
    heads: int = 12
    ffn: int = 3072

    def __post_init__(self) -> None:
        if self.hidden % self.heads:
            raise ValueError("hidden size must be divisible by heads")

    @classmethod
    def toy(cls) -> "EncoderConfig":
        return cls(layers=2, hidden=64, heads=4, ffn=128)


@dataclass
class UpstreamConfig:
    batch_size: int = 64
    max_lr: float = 1e-4
    total_steps: int = 400_000
    warmup_steps: int = 28_000

    def __post_init__(self) -> None:
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup must not exceed total steps")

    @classmethod
    def toy(cls, total_steps: int = 3000) -> "UpstreamConfig":
        # Desk-scale preset: fewer steps need a larger step size to show a
        # learning signal, and a small batch keeps CPU time in budget.
        return cls(batch_size=8, max_lr=2e-3, total_steps=total_steps, warmup_steps=300)


@dataclass
class DownstreamConfig:
    batch_size: int = 8
    lr: float = 1e-4
    steps: int = 6000
    warmup_steps: int = 1000
    eval_interval: int = 300
    upsample_ratio: int = 5
    head_width: int = 512

    @classmethod
    def toy(cls, steps: int = 2000) -> "DownstreamConfig":
        return cls(lr=2e-3, steps=steps, warmup_steps=200, head_width=64)


def cough_only_audio(buffer: AudioBuffer, segments: Sequence[CoughSegment]) -> AudioBuffer:
    """Concatenated cough-segment audio (silence removed)."""
    return AudioBuffer(cough_only_samples(buffer.samples, segments), buffer.sample_rate)


def _mask_values(
    values: np.ndarray, mspec: MaskSpec, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Core masking on a raw [T, n_bins] array; returns (masked, zeroed-cells)."""
    n_frames, n_bins = values.shape
    out = values.copy()
    mask = np.zeros_like(values, dtype=bool)

    if mspec.time_mask_fraction > 0:
        width = mspec.time_block_width
        target = mspec.time_mask_fraction * n_frames
        occupied = np.zeros(n_frames, dtype=bool)
        covered = 0
        attempts = 0
        while covered < target and attempts < 1000:
            attempts += 1
            start = int(rng.integers(0, n_frames - width + 1))
            if occupied[start : start + width].any():
                continue
            occupied[start : start + width] = True
            covered += width
        mask[occupied, :] = True

    if mspec.max_freq_band_fraction > 0:
        max_width = int(mspec.max_freq_band_fraction * n_bins)
        band = int(rng.integers(0, max_width + 1))
        if band > 0:
            start = int(rng.integers(0, n_bins - band + 1))
            mask[:, start : start + band] = True

    if mspec.noise_probability > 0 and rng.random() < mspec.noise_probability:
        out = out + rng.normal(
            mspec.noise_mean, np.sqrt(mspec.noise_variance), values.shape
        )

    out[mask] = 0.0
    return out, mask


def mask_spectrogram(
    spec: Spectrogram, mspec: MaskSpec, rng: np.random.Generator
) -> tuple[Spectrogram, np.ndarray]:
    """Zero random time blocks plus one frequency band; maybe add noise.

    Non-overlapping time blocks of ``time_block_width`` frames are drawn
    until at least ``time_mask_fraction`` of frames are covered. The
    returned boolean mask marks zeroed cells only (noise is unmarked).
    """
    if not spec.is_log:
        raise ValueError("masking operates on log spectrograms")
    if mspec.time_mask_fraction > 0 and spec.n_frames < mspec.time_block_width:
        raise ValueError("spectrogram shorter than one time block")
    masked, mask = _mask_values(spec.values, mspec, rng)
    return (
        Spectrogram(masked, spec.hop_seconds, spec.bin_hz, is_log=True),
        mask,
    )


def sinusoidal_positions(n_frames: int, dim: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(n_frames)[:, None].astype(np.float64)
    idx = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (idx // 2)) / dim)
    enc = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return enc.astype(dtype)


class TransformerEncoder:
    """Input projection + sinusoidal positions + pre-norm encoder blocks."""

    def __init__(
        self,
        config: EncoderConfig,
        n_bins: int = 1025,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ) -> None:
        rng = rng or np.random.default_rng()
        self.config = config
        self.n_bins = n_bins
        self.proj = Dense(n_bins, config.hidden, rng=rng, init="xavier", dtype=dtype)
        self.blocks = [
            TransformerBlock(config.hidden, config.heads, config.ffn, rng=rng, dtype=dtype)
            for _ in range(config.layers)
        ]
        self.final_norm = LayerNorm(config.hidden, dtype=dtype)

    def forward(
        self,
        x: np.ndarray,
        valid: np.ndarray | None = None,
        train: bool = False,
        rng=None,
    ) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.n_bins:
            raise ValueError(f"expected input (B, T, {self.n_bins})")
        h = self.proj.forward(x) + sinusoidal_positions(x.shape[1], self.config.hidden)
        for block in self.blocks:
            h = block.forward(h, train=train, rng=rng, valid=valid)
        return self.final_norm.forward(h)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dy = self.final_norm.backward(dy)
        for block in reversed(self.blocks):
            dy = block.backward(dy)
        return self.proj.backward(dy)

    def _parts(self):
        yield "proj", self.proj
        for i, block in enumerate(self.blocks):
            yield f"block{i}", block
        yield "final", self.final_norm

    def params(self) -> dict[str, np.ndarray]:
        return {f"{tag}/{k}": v for tag, part in self._parts() for k, v in part.params.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {f"{tag}/{k}": v for tag, part in self._parts() for k, v in part.grads.items()}

    def zero_grads(self) -> None:
        for _, part in self._parts():
            part.zero_grads()

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        current = self.params()
        if set(current) != set(values):
            raise ValueError("encoder parameter name mismatch")
        for name, p in current.items():
            p[...] = values[name]


class _PredictionHead:
    """Upstream reconstruction head: two feed-forward layers."""

    def __init__(self, hidden: int, n_bins: int, rng, dtype=np.float32) -> None:
        self.lin1 = Dense(hidden, hidden, rng=rng, init="xavier", dtype=dtype)
        self.act = ReLU()
        self.lin2 = Dense(hidden, n_bins, rng=rng, init="xavier", dtype=dtype)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.lin2.forward(self.act.forward(self.lin1.forward(x)))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.lin1.backward(self.act.backward(self.lin2.backward(dy)))

    def params(self) -> dict[str, np.ndarray]:
        return {f"head1/{k}": v for k, v in self.lin1.params.items()} | {
            f"head2/{k}": v for k, v in self.lin2.params.items()
        }

    def grads(self) -> dict[str, np.ndarray]:
        return {f"head1/{k}": v for k, v in self.lin1.grads.items()} | {
            f"head2/{k}": v for k, v in self.lin2.grads.items()
        }

    def zero_grads(self) -> None:
        self.lin1.zero_grads()
        self.lin2.zero_grads()


def _example_spectrograms(
    examples: Sequence[CoughExample], stft_config: StftConfig
) -> list[np.ndarray]:
    specs = []
    for ex in examples:
        spec = stft_log_spectrogram(AudioBuffer(ex.cough, stft_config.sample_rate), stft_config)
        specs.append(spec.values.astype(np.float32))
    return specs


def pretrain_upstream(
    examples: Sequence[CoughExample],
    uconfig: UpstreamConfig,
    econfig: EncoderConfig,
    mspec: MaskSpec | None = None,
    rng_seed: int = 0,
    stft_config: StftConfig | None = None,
) -> tuple[TransformerEncoder, np.ndarray]:
    """Masked-reconstruction pretraining; returns encoder + per-step loss.

    Uses labeled and unlabeled examples alike. The prediction head is
    discarded. Loss is MSE over masked cells of valid frames only.
    """
    if not examples:
        raise ValueError("no examples for upstream pretraining")
    mspec = mspec or MaskSpec()
    stft_config = stft_config or StftConfig()
    specs = _example_spectrograms(examples, stft_config)
    n_bins = stft_config.n_bins

    rng = np.random.default_rng(rng_seed)
    encoder = TransformerEncoder(econfig, n_bins, rng=rng)
    head = _PredictionHead(econfig.hidden, n_bins, rng)
    all_params = {f"enc/{k}": v for k, v in encoder.params().items()}
    all_params.update(head.params())
    optimizer = AdamW(
        all_params,
        schedule=warmup_linear_decay(uconfig.max_lr, uconfig.warmup_steps, uconfig.total_steps),
    )

    order = rng.permutation(len(examples))
    ptr = 0
    history = np.zeros(uconfig.total_steps)
    for step in range(uconfig.total_steps):
        batch: list[int] = []
        while len(batch) < uconfig.batch_size:
            if ptr == len(order):
                order = rng.permutation(len(examples))
                ptr = 0
            batch.append(int(order[ptr]))
            ptr += 1

        masked_list = []
        mask_list = []
        for i in batch:
            values = specs[i]
            # Short clips: clamp the block width so masking stays legal.
            eff = replace(mspec, time_block_width=min(mspec.time_block_width, len(values)))
            masked, mask = _mask_values(values, eff, rng)
            masked_list.append(masked.astype(np.float32))
            mask_list.append(mask)

        t_max = max(m.shape[0] for m in masked_list)
        b = len(batch)
        x = np.zeros((b, t_max, n_bins), dtype=np.float32)
        target = np.zeros((b, t_max, n_bins), dtype=np.float32)
        cell_mask = np.zeros((b, t_max, n_bins), dtype=bool)
        valid = np.zeros((b, t_max), dtype=bool)
        for j, i in enumerate(batch):
            t = masked_list[j].shape[0]
            x[j, :t] = masked_list[j]
            target[j, :t] = specs[i]
            cell_mask[j, :t] = mask_list[j]
            valid[j, :t] = True

        encoder.zero_grads()
        head.zero_grads()
        reps = encoder.forward(x, valid=valid, train=True, rng=rng)
        pred = head.forward(reps)
        loss, dpred = masked_mse(pred, target, cell_mask)
        encoder.backward(head.backward(dpred))
        all_grads = {f"enc/{k}": v for k, v in encoder.grads().items()}
        all_grads.update(head.grads())
        optimizer.step(all_grads)
        history[step] = loss
    return encoder, history


class DownstreamHead:
    """Three linear+norm+ReLU layers, mean pooling over time, classifier."""

    def __init__(
        self,
        hidden: int,
        width: int = 512,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ) -> None:
        rng = rng or np.random.default_rng()
        self.hidden, self.width = hidden, width
        self.stack = []
        d = hidden
        for _ in range(3):
            self.stack.append(
                (
                    Dense(d, width, rng=rng, init="xavier", dtype=dtype),
                    LayerNorm(width, dtype=dtype),
                    ReLU(),
                )
            )
            d = width
        self.classifier = Dense(width, 1, rng=rng, init="xavier", dtype=dtype)
        self._counts: np.ndarray | None = None

    def forward_batch(
        self, frame_stack: np.ndarray, counts: np.ndarray, train: bool = False, rng=None
    ) -> np.ndarray:
        """frame_stack is all examples' frames concatenated along axis 0;
        counts gives the frames per example (mean pooling boundaries)."""
        h = frame_stack
        for dense, norm, act in self.stack:
            h = act.forward(norm.forward(dense.forward(h)))
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        pooled = np.add.reduceat(h, starts, axis=0) / counts[:, None]
        self._counts = counts
        return self.classifier.forward(pooled).reshape(-1)

    def backward_batch(self, dlogits: np.ndarray) -> None:
        counts = self._counts
        dpooled = self.classifier.backward(dlogits[:, None])
        dframes = np.repeat(dpooled / counts[:, None], counts, axis=0)
        for dense, norm, act in reversed(self.stack):
            dframes = dense.backward(norm.backward(act.backward(dframes)))

    def predict(self, rep: np.ndarray) -> float:
        logit = self.forward_batch(rep, np.array([rep.shape[0]]))
        return float(sigmoid(float(logit[0])))

    def _parts(self):
        for i, (dense, norm, _) in enumerate(self.stack):
            yield f"lin{i}", dense
            yield f"norm{i}", norm
        yield "classifier", self.classifier

    def params(self) -> dict[str, np.ndarray]:
        return {f"{tag}/{k}": v for tag, part in self._parts() for k, v in part.params.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {f"{tag}/{k}": v for tag, part in self._parts() for k, v in part.grads.items()}

    def zero_grads(self) -> None:
        for _, part in self._parts():
            part.zero_grads()

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        current = self.params()
        if set(current) != set(values):
            raise ValueError("head parameter name mismatch")
        for name, p in current.items():
            p[...] = values[name]


def encode_examples(
    encoder: TransformerEncoder,
    examples: Sequence[CoughExample],
    stft_config: StftConfig | None = None,
) -> list[np.ndarray]:
    """Frozen-encoder representations, one [T, hidden] array per example."""
    stft_config = stft_config or StftConfig()
    reps = []
    for values in _example_spectrograms(examples, stft_config):
        valid = np.ones((1, values.shape[0]), dtype=bool)
        reps.append(encoder.forward(values[None], valid=valid)[0])
    return reps


def train_downstream(
    train_examples: Sequence[CoughExample],
    val_examples: Sequence[CoughExample],
    encoder: TransformerEncoder,
    dconfig: DownstreamConfig,
    rng_seed: int = 0,
    stft_config: StftConfig | None = None,
) -> tuple[DownstreamHead, dict]:
    """Train the classification head on frozen-encoder representations.

    Positives are upsampled 5:1 (configurable); every ``eval_interval``
    steps the validation AUC is computed and the parameters of the best
    evaluation are returned.
    """
    if not train_examples or not val_examples:
        raise ValueError("train and validation sets must be non-empty")
    if any(e.label is None for e in list(train_examples) + list(val_examples)):
        raise ValueError("downstream training requires labeled examples")
    val_labels = np.array([e.label for e in val_examples])
    if len(np.unique(val_labels)) < 2:
        raise ValueError("AUC undefined for single-class validation split")

    train_reps = encode_examples(encoder, train_examples, stft_config)
    val_reps = encode_examples(encoder, val_examples, stft_config)

    entries: list[int] = []
    for i, ex in enumerate(train_examples):
        copies = dconfig.upsample_ratio if ex.label == 1 else 1
        entries.extend([i] * copies)
    labels = np.array([train_examples[i].label for i in entries], dtype=np.float32)

    rng = np.random.default_rng(rng_seed)
    head = DownstreamHead(encoder.config.hidden, dconfig.head_width, rng=rng)
    optimizer = AdamW(
        head.params(),
        schedule=warmup_linear_decay(dconfig.lr, dconfig.warmup_steps, dconfig.steps),
    )

    def val_auc() -> float:
        frames = np.concatenate(val_reps, axis=0)
        counts = np.array([r.shape[0] for r in val_reps])
        logits = head.forward_batch(frames, counts)
        probs = np.asarray(sigmoid(logits))
        _, auc = evaluate.roc_and_auc(evaluate.ScoredSet(probs, val_labels))
        return auc

    order = rng.permutation(len(entries))
    ptr = 0
    losses = np.zeros(dconfig.steps)
    evals: list[tuple[int, float]] = []
    best_auc = -1.0
    best_step = -1
    best_params: dict[str, np.ndarray] = {}
    for step in range(dconfig.steps):
        batch: list[int] = []
        while len(batch) < dconfig.batch_size:
            if ptr == len(order):
                order = rng.permutation(len(entries))
                ptr = 0
            batch.append(int(order[ptr]))
            ptr += 1
        reps = [train_reps[entries[j]] for j in batch]
        frames = np.concatenate(reps, axis=0)
        counts = np.array([r.shape[0] for r in reps])

        head.zero_grads()
        logits = head.forward_batch(frames, counts, train=True, rng=rng)
        loss, dlogits = bce_with_logits(logits, labels[batch])
        head.backward_batch(dlogits.reshape(-1))
        optimizer.step(head.grads())
        losses[step] = loss

        if (step + 1) % dconfig.eval_interval == 0:
            auc = val_auc()
            evals.append((step + 1, auc))
            if auc > best_auc:
                best_auc = auc
                best_step = step + 1
                best_params = {k: v.copy() for k, v in head.params().items()}

    if best_params:
        head.set_params(best_params)
    return head, {
        "losses": losses,
        "evals": evals,
        "best_step": best_step,
        "best_val_auc": best_auc,
    }


def predict_ssl(
    encoder: TransformerEncoder,
    head: DownstreamHead,
    buffer: AudioBuffer,
    segments: Sequence[CoughSegment],
    stft_config: StftConfig | None = None,
) -> float:
    """Probability for one recording, gated by its cough segments."""
    stft_config = stft_config or StftConfig()
    cough = cough_only_audio(buffer, segments)
    spec = stft_log_spectrogram(cough, stft_config)
    values = spec.values.astype(np.float32)
    valid = np.ones((1, values.shape[0]), dtype=bool)
    rep = encoder.forward(values[None], valid=valid)[0]
    return head.predict(rep)


def save_ssl(
    out_dir: str | Path,
    encoder: TransformerEncoder,
    head: DownstreamHead | None = None,
    sidecar: dict | None = None,
) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_weights(out_dir / "ssl_encoder.bin", encoder.params())
    doc = {
        "kind": "ssl",
        "version": 1,
        "encoder": {
            "layers": encoder.config.layers,
            "hidden": encoder.config.hidden,
            "heads": encoder.config.heads,
            "ffn": encoder.config.ffn,
            "n_bins": encoder.n_bins,
        },
    }
    if head is not None:
        save_weights(out_dir / "ssl_head.bin", head.params())
        doc["head"] = {"hidden": head.hidden, "width": head.width}
    doc.update(sidecar or {})
    (out_dir / "ssl_model.json").write_text(json.dumps(doc, indent=2))


def load_ssl(out_dir: str | Path) -> tuple[TransformerEncoder, DownstreamHead | None]:
    out_dir = Path(out_dir)
    doc = json.loads((out_dir / "ssl_model.json").read_text())
    if doc.get("kind") != "ssl":
        raise ValueError(f"not an ssl checkpoint: {out_dir}")
    e = doc["encoder"]
    config = EncoderConfig(layers=e["layers"], hidden=e["hidden"], heads=e["heads"], ffn=e["ffn"])
    encoder = TransformerEncoder(config, n_bins=e["n_bins"], rng=np.random.default_rng(0))
    encoder.set_params(load_weights(out_dir / "ssl_encoder.bin"))
    head = None
    if "head" in doc:
        head = DownstreamHead(doc["head"]["hidden"], doc["head"]["width"])
        head.set_params(load_weights(out_dir / "ssl_head.bin"))
    return encoder, head
