"""Feature extraction: STFT spectrograms, MFCC (+deltas), per-frame spectral
descriptors, the 172-dim SVM summary vector, and 64x256 MFCC sonographs.

All spectral math runs on magnitude spectrograms framed as
``n_frames = 1 + floor((N - win_length) / hop_length)`` with a periodic
Hann window and zero-padding of each windowed frame up to the FFT size.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.fft

from coughgate.audio_io import AudioBuffer
from coughgate.quality import CoughSegment

LOG_FLOOR = 1e-10

# Sonograph geometry: cough-only audio is padded/cut to 65,536 samples
# (4.096 s at 16 kHz); with a 512-sample window and 256-sample hop plus one
# trailing hop of zeros, exactly 256 frames emerge.
SONOGRAPH_SAMPLES = 65536
SONOGRAPH_N_FFT = 512
SONOGRAPH_HOP = 256
SONOGRAPH_SHAPE = (64, 256)

CACHE_MAGIC = b"CGFEAT01"


@dataclass
class StftConfig:
    n_freq: int = 2048
    win_length: int = 640
    hop_length: int = 320
    sample_rate: int = 16000
    log_floor: float = LOG_FLOOR

    def __post_init__(self) -> None:
        if not (0 < self.win_length <= self.n_freq):
            raise ValueError("require 0 < win_length <= n_freq")
        if not (0 < self.hop_length <= self.win_length):
            raise ValueError("require 0 < hop_length <= win_length")

    @property
    def n_bins(self) -> int:
        return self.n_freq // 2 + 1


@dataclass
class Spectrogram:
    """Magnitude (or log-magnitude) STFT, frames along axis 0."""

    values: np.ndarray  # [n_frames, n_bins]
    hop_seconds: float
    bin_hz: float  # frequency step between adjacent bins
    is_log: bool

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("spectrogram must be 2-D [n_frames, n_bins]")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]


@dataclass
class MfccConfig:
    n_mfcc: int = 13
    n_mels: int = 40
    fmin: float = 0.0
    fmax: float = 8000.0
    delta_r: int = 2

    def __post_init__(self) -> None:
        if self.n_mfcc > self.n_mels:
            raise ValueError("n_mfcc must not exceed n_mels")
        if self.delta_r not in (2, 3):
            raise ValueError("delta_r must be 2 or 3")


SONOGRAPH_MFCC = MfccConfig(n_mfcc=64, n_mels=64, fmin=0.0, fmax=8000.0)


@dataclass
class FrameDescriptors:
    spectral_centroid: np.ndarray  # Hz
    rolloff_25: np.ndarray  # Hz
    rolloff_75: np.ndarray  # Hz
    rms: np.ndarray


# Channel layout of the SVM vector: 4 spectral descriptors, then 13 MFCC,
# 13 delta, 13 delta-delta = 43 channels; stats are stacked block-wise as
# [mean(43), std(43), max(43), min(43)] = 172 values.
SVM_CHANNELS = 43
SVM_STATS = ("mean", "std", "max", "min")
SVM_VECTOR_LENGTH = SVM_CHANNELS * len(SVM_STATS)


@dataclass
class SvmFeatureVector:
    values: np.ndarray
    record_id: str = ""

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (SVM_VECTOR_LENGTH,):
            raise ValueError(f"SVM vector must have length {SVM_VECTOR_LENGTH}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("SVM vector contains non-finite values")


@dataclass
class Sonograph:
    values: np.ndarray  # [64, 256]
    record_id: str = ""
    copy_index: int = 0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != SONOGRAPH_SHAPE:
            raise ValueError(f"sonograph must have shape {SONOGRAPH_SHAPE}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sonograph contains non-finite values")


@dataclass
class FeatureStats:
    """Training-set per-dimension mean/std used to z-score feature vectors."""

    mean: np.ndarray
    std: np.ndarray


def _frame_signal(samples: np.ndarray, config: StftConfig) -> np.ndarray:
    n = len(samples)
    if n < config.win_length:
        raise ValueError("buffer shorter than one analysis window")
    n_frames = 1 + (n - config.win_length) // config.hop_length
    idx = (
        np.arange(config.win_length)[None, :]
        + config.hop_length * np.arange(n_frames)[:, None]
    )
    return samples[idx]


def _hann_periodic(length: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


def stft_magnitude(buffer: AudioBuffer, config: StftConfig) -> Spectrogram:
    """Linear-magnitude STFT with Hann-windowed frames."""
    if buffer.sample_rate != config.sample_rate:
        raise ValueError(
            f"buffer rate {buffer.sample_rate} != config rate {config.sample_rate}"
        )
    frames = _frame_signal(buffer.samples, config) * _hann_periodic(config.win_length)
    mag = np.abs(np.fft.rfft(frames, n=config.n_freq, axis=1))
    return Spectrogram(
        values=mag,
        hop_seconds=config.hop_length / config.sample_rate,
        bin_hz=config.sample_rate / config.n_freq,
        is_log=False,
    )


def stft_log_spectrogram(buffer: AudioBuffer, config: StftConfig) -> Spectrogram:
    """log(magnitude + log_floor) spectrogram (transformer/SSL input)."""
    spec = stft_magnitude(buffer, config)
    return Spectrogram(
        values=np.log(spec.values + config.log_floor),
        hop_seconds=spec.hop_seconds,
        bin_hz=spec.bin_hz,
        is_log=True,
    )


def _hz_to_mel(f: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: MfccConfig, stft: StftConfig) -> np.ndarray:
    """Triangular mel filters as a [n_mels, n_bins] matrix.

    Centers are mel-spaced between fmin and fmax; each triangle rises from
    the previous center and falls to the next, so every bin in [fmin, fmax]
    is covered by at least one filter.
    """
    nyquist = stft.sample_rate / 2.0
    if not (0 <= config.fmin < config.fmax <= nyquist):
        raise ValueError("require 0 <= fmin < fmax <= Nyquist")
    mel_pts = np.linspace(_hz_to_mel(config.fmin), _hz_to_mel(config.fmax), config.n_mels + 2)
    hz_pts = np.asarray(_mel_to_hz(mel_pts))
    bin_freqs = np.arange(stft.n_bins) * stft.sample_rate / stft.n_freq

    bank = np.zeros((config.n_mels, stft.n_bins))
    for i in range(config.n_mels):
        left, center, right = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (bin_freqs - left) / (center - left)
        down = (right - bin_freqs) / (right - center)
        bank[i] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def mfcc(spectrogram: Spectrogram, config: MfccConfig, stft: StftConfig) -> np.ndarray:
    """MFCCs per frame: mel-projected power spectrum -> log -> orthonormal DCT-II.

    Returns [n_frames, n_mfcc]. Expects a linear-magnitude spectrogram.
    """
    if spectrogram.is_log:
        raise ValueError("mfcc expects a linear-magnitude spectrogram")
    bank = mel_filterbank(config, stft)
    mel_power = spectrogram.values**2 @ bank.T
    log_mel = np.log(mel_power + LOG_FLOOR)
    coeffs = scipy.fft.dct(log_mel, type=2, axis=1, norm="ortho")
    return coeffs[:, : config.n_mfcc]


def delta(coeffs: np.ndarray, r: int) -> np.ndarray:
    """Temporal difference D[n] = C[n+r] - C[n-r] with edge-clamped indices."""
    if r < 1:
        raise ValueError("delta lag r must be >= 1")
    coeffs = np.asarray(coeffs)
    if coeffs.shape[0] < 1:
        raise ValueError("delta needs at least one frame")
    n = coeffs.shape[0]
    ahead = np.clip(np.arange(n) + r, 0, n - 1)
    behind = np.clip(np.arange(n) - r, 0, n - 1)
    return coeffs[ahead] - coeffs[behind]


def frame_descriptors(spectrogram: Spectrogram) -> FrameDescriptors:
    """Spectral centroid, 25%/75% roll-off (Hz), and per-frame RMS."""
    if spectrogram.is_log:
        raise ValueError("frame_descriptors expects a linear-magnitude spectrogram")
    mag = spectrogram.values
    freqs = np.arange(spectrogram.n_bins) * spectrogram.bin_hz
    totals = mag.sum(axis=1)
    nonzero = totals > 0

    centroid = np.zeros(spectrogram.n_frames)
    centroid[nonzero] = (mag[nonzero] @ freqs) / totals[nonzero]

    cum = np.cumsum(mag, axis=1)
    rolloffs = []
    for q in (0.25, 0.75):
        idx = np.argmax(cum >= q * totals[:, None], axis=1)
        rolloffs.append(np.where(nonzero, freqs[idx], 0.0))

    rms = np.sqrt(np.mean(mag**2, axis=1))
    return FrameDescriptors(centroid, rolloffs[0], rolloffs[1], rms)


def cough_only_samples(samples: np.ndarray, segments: Sequence[CoughSegment]) -> np.ndarray:
    """Concatenate cough-segment samples in order.

    Segments must be sorted, non-overlapping, and inside the buffer.
    """
    if not segments:
        raise ValueError("no cough segments")
    prev_end = 0
    parts = []
    for seg in segments:
        if seg.start < prev_end:
            raise ValueError("segments must be sorted and non-overlapping")
        if seg.end > len(samples):
            raise ValueError("segment extends past end of buffer")
        parts.append(samples[seg.start : seg.end])
        prev_end = seg.end
    return np.concatenate(parts)


def svm_feature_vector(
    buffer: AudioBuffer,
    segments: Sequence[CoughSegment],
    stft_config: StftConfig | None = None,
    mfcc_config: MfccConfig | None = None,
    record_id: str = "",
) -> SvmFeatureVector:
    """172-dim handcrafted vector over the concatenated cough segments.

    43 per-frame channels (centroid, roll-off 25/75, RMS, 13 MFCC, 13 delta,
    13 delta-delta) summarized by mean/std/max/min over time.
    """
    stft_config = stft_config or StftConfig()
    mfcc_config = mfcc_config or MfccConfig()
    cough = cough_only_samples(buffer.samples, segments)
    spec = stft_magnitude(AudioBuffer(cough, buffer.sample_rate), stft_config)

    desc = frame_descriptors(spec)
    coeffs = mfcc(spec, mfcc_config, stft_config)
    d1 = delta(coeffs, mfcc_config.delta_r)
    d2 = delta(d1, mfcc_config.delta_r)
    channels = np.column_stack(
        [desc.spectral_centroid, desc.rolloff_25, desc.rolloff_75, desc.rms, coeffs, d1, d2]
    )
    assert channels.shape[1] == SVM_CHANNELS

    stats = np.concatenate(
        [
            channels.mean(axis=0),
            channels.std(axis=0),
            channels.max(axis=0),
            channels.min(axis=0),
        ]
    )
    return SvmFeatureVector(stats, record_id=record_id)


def normalize_features(
    vectors: Sequence[SvmFeatureVector], stats: FeatureStats | None = None
) -> tuple[list[SvmFeatureVector], FeatureStats]:
    """Z-score vectors per dimension; degenerate (std<1e-12) dims map to 0.

    When stats is None the input list is treated as the training set and its
    own statistics are computed and returned for reuse on validation/test.
    """
    if stats is None:
        if not vectors:
            raise ValueError("cannot fit normalization stats on an empty list")
        mat = np.stack([v.values for v in vectors])
        stats = FeatureStats(mean=mat.mean(axis=0), std=mat.std(axis=0))
    safe_std = np.where(stats.std < 1e-12, 1.0, stats.std)
    degenerate = stats.std < 1e-12
    out = []
    for v in vectors:
        z = (v.values - stats.mean) / safe_std
        z[degenerate] = 0.0
        out.append(SvmFeatureVector(z, record_id=v.record_id))
    return out, stats


def condense_cough_audio(
    buffer: AudioBuffer, segments: Sequence[CoughSegment]
) -> np.ndarray:
    """Cough-only audio padded with trailing zeros (or cut) to 65,536 samples."""
    cough = cough_only_samples(buffer.samples, segments)
    if len(cough) >= SONOGRAPH_SAMPLES:
        return cough[:SONOGRAPH_SAMPLES].copy()
    return np.concatenate([cough, np.zeros(SONOGRAPH_SAMPLES - len(cough))])


def sonograph_from_samples(
    samples: np.ndarray, record_id: str = "", copy_index: int = 0
) -> Sonograph:
    """64x256 MFCC image of a condensed 65,536-sample clip."""
    if samples.shape != (SONOGRAPH_SAMPLES,):
        raise ValueError(f"expected exactly {SONOGRAPH_SAMPLES} samples")
    config = StftConfig(
        n_freq=SONOGRAPH_N_FFT,
        win_length=SONOGRAPH_N_FFT,
        hop_length=SONOGRAPH_HOP,
        sample_rate=16000,
    )
    # One extra hop of zeros lands the frame count exactly on 256.
    padded = np.concatenate([samples, np.zeros(SONOGRAPH_HOP)])
    spec = stft_magnitude(AudioBuffer(padded, 16000), config)
    coeffs = mfcc(spec, SONOGRAPH_MFCC, config)  # [256, 64]
    return Sonograph(coeffs.T, record_id=record_id, copy_index=copy_index)


def build_sonograph(
    buffer: AudioBuffer,
    segments: Sequence[CoughSegment],
    augment_fn: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
    record_id: str = "",
    copy_index: int = 0,
) -> Sonograph:
    """Condense cough segments to 4.096 s, optionally augment, extract MFCCs."""
    if buffer.sample_rate != 16000:
        raise ValueError("sonographs are built from 16 kHz audio")
    samples = condense_cough_audio(buffer, segments)
    if augment_fn is not None:
        samples = augment_fn(samples, rng or np.random.default_rng())
    return sonograph_from_samples(samples, record_id=record_id, copy_index=copy_index)


def write_matrix(path: str | Path, matrix: np.ndarray) -> None:
    """Feature-cache writer: 8-byte magic, shape header, little-endian f32."""
    arr = np.asarray(matrix, dtype="<f4")
    with Path(path).open("wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_matrix(path: str | Path) -> np.ndarray:
    with Path(path).open("rb") as fh:
        magic = fh.read(8)
        if magic != CACHE_MAGIC:
            raise ValueError(f"bad feature cache magic in {path}")
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype="<f4")
    return data.reshape(shape).astype(np.float64)
