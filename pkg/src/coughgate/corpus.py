"""Record preparation and the built-in synthetic corpus.

The synthetic corpus stands in for the (private) clinical datasets: the
"positive" class is band-limited noise bursts centered near 600 Hz, the
"negative" class near 1.8 kHz, both shaped with a sharp-attack /
exponential-decay envelope over a quiet noise floor. Every generated
file passes the default quality gate and the two classes are cleanly
separable in the spectral features all three models consume.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.signal

from coughgate.audio_io import AudioBuffer, load_wav_mono, write_wav
from coughgate.dataset import DatasetManifest, DatasetRecord
from coughgate.quality import GateThresholds, QualityReport, screen

SAMPLE_RATE = 16000
POSITIVE_CENTER_HZ = 600.0
NEGATIVE_CENTER_HZ = 1800.0


@dataclass
class CoughExample:
    """A screened record reduced to its cough-only 16 kHz audio."""

    id: str
    label: int | None  # 1 positive, 0 negative, None unlabeled
    cough: np.ndarray


def label_to_int(label: str) -> int | None:
    return {"positive": 1, "negative": 0, "unlabeled": None}[label]


def stable_rng(*parts: int | str) -> np.random.Generator:
    """Deterministic generator from mixed int/str keys (process-independent)."""
    entropy = [
        zlib.crc32(p.encode("utf-8")) if isinstance(p, str) else int(p) & 0xFFFFFFFF
        for p in parts
    ]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def prepare_examples(
    records: Sequence[DatasetRecord],
    thresholds: GateThresholds | None = None,
    base_dir: str | Path | None = None,
    workers: int = 1,
) -> tuple[list[CoughExample], list[tuple[DatasetRecord, QualityReport]]]:
    """Load, screen, and condense records to cough-only examples.

    Returns the passing examples (manifest order) and (record, report)
    pairs for everything the gate rejected.
    """
    base = Path(base_dir) if base_dir is not None else None

    def process(record: DatasetRecord):
        path = Path(record.audio_path)
        if base is not None and not path.is_absolute():
            path = base / path
        buffer = load_wav_mono(path, target_rate=SAMPLE_RATE)
        report = screen(buffer, thresholds)
        if not report.passed:
            return record, report, None
        pieces = [buffer.samples[s.start : s.end] for s in report.segments]
        return record, report, np.concatenate(pieces)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(process, records))
    else:
        results = [process(r) for r in records]

    examples: list[CoughExample] = []
    failures: list[tuple[DatasetRecord, QualityReport]] = []
    for record, report, cough in results:
        if cough is None:
            failures.append((record, report))
        else:
            examples.append(CoughExample(record.id, label_to_int(record.label), cough))
    return examples, failures


def synth_clip(rng: np.random.Generator, positive: bool) -> np.ndarray:
    """One labeled clip: 1.3-1.9 s of noise floor plus 1-3 cough-like bursts."""
    duration = rng.uniform(1.3, 1.9)
    n = int(duration * SAMPLE_RATE)
    floor = rng.uniform(0.002, 0.004)
    x = rng.normal(0.0, floor, n)

    center = (POSITIVE_CENTER_HZ if positive else NEGATIVE_CENTER_HZ) * rng.uniform(0.92, 1.08)
    sos = scipy.signal.butter(
        4, [0.72 * center, 1.28 * center], "bandpass", fs=SAMPLE_RATE, output="sos"
    )

    n_bursts = int(rng.integers(1, 4))
    cursor = 0.15 + rng.uniform(0.0, 0.1)
    for _ in range(n_bursts):
        burst_len = rng.uniform(0.22, 0.35)
        if cursor + burst_len > duration - 0.15:
            break
        m = int(burst_len * SAMPLE_RATE)
        core = scipy.signal.sosfilt(sos, rng.normal(0.0, 1.0, m))
        core /= np.max(np.abs(core)) + 1e-12
        t = np.arange(m) / SAMPLE_RATE
        envelope = (1.0 - np.exp(-t / 0.008)) * np.exp(-t / (burst_len / 3.0))
        peak = rng.uniform(0.35, 0.55)
        start = int(cursor * SAMPLE_RATE)
        x[start : start + m] += peak * core * envelope
        cursor += burst_len + 0.25 + rng.uniform(0.0, 0.3)
    return np.clip(x, -1.0, 1.0)


def synth_corpus(
    out_dir: str | Path,
    n_per_class: int,
    rng_seed: int,
    split: str = "train",
    source: str = "synthetic",
) -> DatasetManifest:
    """Generate n_per_class positive + negative WAVs for one split.

    Byte-identical for a fixed seed; file names and record ids encode the
    split, class, and index.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for label in ("positive", "negative"):
        for i in range(n_per_class):
            rid = f"{split}_{label[:3]}_{i:04d}"
            rng = stable_rng(rng_seed, split, label, i)
            clip = synth_clip(rng, positive=(label == "positive"))
            name = f"{rid}.wav"
            write_wav(out_dir / name, AudioBuffer(clip, SAMPLE_RATE))
            records.append(DatasetRecord(rid, name, label, split, source))
    return DatasetManifest(records)


def synth_corpus_splits(
    out_dir: str | Path,
    rng_seed: int,
    n_train: int,
    n_validation: int = 0,
    n_test: int = 0,
    n_unlabeled: int = 0,
) -> DatasetManifest:
    """Multi-split corpus (counts are per class; unlabeled ride in train)."""
    out_dir = Path(out_dir)
    records: list[DatasetRecord] = []
    for split, count in (("train", n_train), ("validation", n_validation), ("test", n_test)):
        if count > 0:
            records.extend(synth_corpus(out_dir, count, rng_seed, split=split).records)
    for i in range(n_unlabeled):
        rid = f"train_unl_{i:04d}"
        rng = stable_rng(rng_seed, "unlabeled", i)
        positive = bool(rng.integers(0, 2))
        clip = synth_clip(rng, positive=positive)
        write_wav(out_dir / f"{rid}.wav", AudioBuffer(clip, SAMPLE_RATE))
        records.append(DatasetRecord(rid, f"{rid}.wav", "unlabeled", "train", "synthetic"))
    return DatasetManifest(records)
