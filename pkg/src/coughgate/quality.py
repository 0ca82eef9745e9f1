"""Five-check quality gate: volume, clipping, cough detection, cough
segmentation, and background noise, plus the pass/fail verdict used to
drop low-quality recordings before feature extraction.

Segmentation runs on a 44.1 kHz copy of the signal: band-pass filtering
(100 Hz high-pass, 2 kHz low-pass, 4th order each), decimation to
4.41 kHz, then an RMS-envelope hysteresis walk. Segment indices are
reported on the 16 kHz timeline used by the rest of the pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.signal

from coughgate.audio_io import AudioBuffer, resample

SEGMENT_RATE = 44100
ENVELOPE_RATE = 4410
ENVELOPE_WINDOW_S = 0.050
ENVELOPE_HOP_S = 0.010
MIN_SEGMENT_S = 0.100
MERGE_GAP_S = 0.050
BACKGROUND_FRAME_S = 0.025
BACKGROUND_RATIO_CAP = 1e6
FLATNESS_TOL = 1e-4

CHECK_VOLUME = "volume"
CHECK_CLIPPING = "clipping"
CHECK_COUGH = "cough_probability"
CHECK_BACKGROUND = "background"


@dataclass(frozen=True)
class CoughSegment:
    """Half-open sample range [start, end) on the 16 kHz timeline."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise ValueError("require 0 <= start < end")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class GateThresholds:
    min_max_amplitude: float = 0.01
    max_clipping_ratio: float = 0.30
    min_cough_probability: float = 0.5
    min_background_power_ratio: float = 3.16  # 5 dB


@dataclass
class QualityReport:
    max_amplitude: float
    clipping_ratio: float
    cough_probability: float
    segments: list[CoughSegment]
    background_power_ratio: float
    passed: bool
    failed_checks: list[str] = field(default_factory=list)

    def to_json_dict(self, sample_rate: int = 16000) -> dict:
        return {
            "max_amplitude": self.max_amplitude,
            "clipping_ratio": self.clipping_ratio,
            "cough_probability": self.cough_probability,
            "background_power_ratio": self.background_power_ratio,
            "segments_seconds": [
                [s.start / sample_rate, s.end / sample_rate] for s in self.segments
            ],
            "verdict": "pass" if self.passed else "fail",
            "failed_checks": list(self.failed_checks),
        }


CoughDetector = Callable[[AudioBuffer, Sequence[CoughSegment]], float]


def measure_volume(buffer: AudioBuffer) -> float:
    """Maximum absolute amplitude."""
    if len(buffer.samples) == 0:
        raise ValueError("empty buffer")
    return float(np.max(np.abs(buffer.samples)))


def measure_clipping(buffer: AudioBuffer) -> float:
    """Fraction of samples inside flat runs (>= 3 samples) at the peak level.

    A run is flat when successive samples agree within 1e-4 and sit at
    >= 0.99 of the buffer's max amplitude. Silence has no peak to clip at,
    so an all-zero buffer scores 0.
    """
    x = buffer.samples
    if len(x) == 0:
        raise ValueError("empty buffer")
    peak = np.max(np.abs(x))
    if peak == 0.0:
        return 0.0
    if len(x) < 3:
        return 0.0
    at_peak = np.abs(x) >= 0.99 * peak
    flat_step = np.abs(np.diff(x)) <= FLATNESS_TOL
    good_step = flat_step & at_peak[:-1] & at_peak[1:]
    if not good_step.any():
        return 0.0
    edges = np.diff(good_step.astype(np.int8))
    starts = np.flatnonzero(edges == 1) + 1
    ends = np.flatnonzero(edges == -1) + 1
    if good_step[0]:
        starts = np.r_[0, starts]
    if good_step[-1]:
        ends = np.r_[ends, len(good_step)]
    run_steps = ends - starts
    clipped = int(np.sum(run_steps[run_steps >= 2] + 1))
    return clipped / len(x)


def _rms_envelope(x: np.ndarray, window: int, hop: int) -> np.ndarray:
    if len(x) < window:
        return np.zeros(0)
    n_frames = 1 + (len(x) - window) // hop
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.sqrt(np.mean(x[idx] ** 2, axis=1))


def segment_coughs(buffer: AudioBuffer, out_rate: int = 16000) -> list[CoughSegment]:
    """Locate cough bursts; returns segments mapped onto the 16 kHz timeline.

    Hysteresis thresholds: noise floor = 10th percentile of the envelope,
    theta_on = floor + 0.25*(peak - floor), theta_off = floor + 0.10*(peak -
    floor); segments closer than 50 ms are merged and anything under 100 ms
    is dropped.
    """
    if buffer.sample_rate != SEGMENT_RATE:
        raise ValueError(f"segmentation expects {SEGMENT_RATE} Hz input")
    if len(buffer.samples) < int(0.050 * SEGMENT_RATE):
        raise ValueError("buffer shorter than 50 ms")

    sos_hp = scipy.signal.butter(4, 100.0, "highpass", fs=SEGMENT_RATE, output="sos")
    sos_lp = scipy.signal.butter(4, 2000.0, "lowpass", fs=SEGMENT_RATE, output="sos")
    filtered = scipy.signal.sosfiltfilt(sos_lp, scipy.signal.sosfiltfilt(sos_hp, buffer.samples))

    low = resample(AudioBuffer(filtered, SEGMENT_RATE), ENVELOPE_RATE)
    window = int(ENVELOPE_WINDOW_S * ENVELOPE_RATE)
    hop = int(ENVELOPE_HOP_S * ENVELOPE_RATE)
    env = _rms_envelope(low.samples, window, hop)
    if len(env) == 0:
        return []

    floor = float(np.percentile(env, 10))
    peak = float(np.max(env))
    # Require clear activity above the floor; constant noise or silence
    # yields no segments.
    if peak < 1e-5 or peak < 2.0 * floor:
        return []
    theta_on = floor + 0.25 * (peak - floor)
    theta_off = floor + 0.10 * (peak - floor)

    spans: list[list[int]] = []  # [start_frame, end_frame) above hysteresis
    i = 0
    n = len(env)
    while i < n:
        if env[i] >= theta_on:
            start = i
            while start > 0 and env[start - 1] >= theta_off:
                start -= 1
            end = i
            while end < n and env[end] >= theta_off:
                end += 1
            if spans and spans[-1][1] >= start:
                spans[-1][1] = max(spans[-1][1], end)
            else:
                spans.append([start, end])
            i = end
        else:
            i += 1

    # Frame span -> seconds (frames timestamped at their window centers),
    # then merge near neighbors and drop short blips.
    half_w = window / 2.0
    times = [
        (
            max(0.0, (s * hop + half_w - hop / 2.0) / ENVELOPE_RATE),
            ((e - 1) * hop + half_w + hop / 2.0) / ENVELOPE_RATE,
        )
        for s, e in spans
    ]
    merged: list[list[float]] = []
    for t0, t1 in times:
        if merged and t0 - merged[-1][1] < MERGE_GAP_S:
            merged[-1][1] = max(merged[-1][1], t1)
        else:
            merged.append([t0, t1])

    out_len = int(round(len(buffer.samples) * out_rate / SEGMENT_RATE))
    segments = []
    for t0, t1 in merged:
        if t1 - t0 < MIN_SEGMENT_S:
            continue
        a = max(0, int(round(t0 * out_rate)))
        b = min(out_len, int(round(t1 * out_rate)))
        if b > a:
            segments.append(CoughSegment(a, b))
    return segments


def _frame_powers(x: np.ndarray, frame: int) -> np.ndarray:
    n = len(x) // frame
    if n == 0:
        return np.zeros(0)
    return np.mean(x[: n * frame].reshape(n, frame) ** 2, axis=1)


def measure_background(buffer: AudioBuffer, segments: Sequence[CoughSegment]) -> float:
    """Max 25 ms frame power inside segments over max power outside them.

    Ratio is capped at 1e6 (covers an all-zero background). Raises when
    there is no segment or no non-segment region of at least 50 ms.
    """
    if not segments:
        raise ValueError("no cough segments")
    frame = int(BACKGROUND_FRAME_S * buffer.sample_rate)
    mask = np.zeros(len(buffer.samples), dtype=bool)
    for seg in segments:
        mask[seg.start : seg.end] = True

    gaps = _gap_lengths(mask)
    if not gaps or max(gaps) < int(0.050 * buffer.sample_rate):
        raise ValueError("no non-cough region of at least 50 ms")

    inside = _collect_region_powers(buffer.samples, mask, frame, inside=True)
    outside = _collect_region_powers(buffer.samples, mask, frame, inside=False)
    if len(inside) == 0 or len(outside) == 0:
        raise ValueError("not enough audio for 25 ms frames on both sides")
    max_in = float(np.max(inside))
    max_out = float(np.max(outside))
    if max_out <= 0.0:
        return BACKGROUND_RATIO_CAP
    return min(max_in / max_out, BACKGROUND_RATIO_CAP)


def _gap_lengths(mask: np.ndarray) -> list[int]:
    lengths = []
    run = 0
    for inside in mask:
        if inside:
            if run:
                lengths.append(run)
            run = 0
        else:
            run += 1
    if run:
        lengths.append(run)
    return lengths


def _collect_region_powers(
    x: np.ndarray, mask: np.ndarray, frame: int, inside: bool
) -> np.ndarray:
    """Frame powers over maximal runs where mask == inside."""
    want = mask if inside else ~mask
    powers = []
    start = None
    for i, flag in enumerate(np.append(want, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            powers.append(_frame_powers(x[start:i], frame))
            start = None
    if powers:
        return np.concatenate(powers)
    return np.zeros(0)


def heuristic_cough_probability(
    buffer: AudioBuffer, segments: Sequence[CoughSegment]
) -> float:
    """Default detector: logistic((S - 6)/3) with S the segment-to-background
    power ratio in dB; 0 when no segments were found."""
    if not segments:
        return 0.0
    try:
        ratio = measure_background(buffer, segments)
    except ValueError:
        # Coughs wall-to-wall: no background to compare against.
        ratio = BACKGROUND_RATIO_CAP
    s_db = 10.0 * math.log10(max(ratio, 1e-12))
    return 1.0 / (1.0 + math.exp(-(s_db - 6.0) / 3.0))


def detect_cough(
    buffer: AudioBuffer,
    segments: Sequence[CoughSegment],
    detector: CoughDetector | None = None,
) -> float:
    """Cough probability via a pluggable detector (heuristic by default)."""
    return (detector or heuristic_cough_probability)(buffer, segments)


def screen(
    buffer: AudioBuffer,
    thresholds: GateThresholds | None = None,
    detector: CoughDetector | None = None,
) -> QualityReport:
    """Run all five checks on a 16 kHz mono buffer and produce the verdict.

    The background check only applies when segments plus a measurable
    non-cough region exist; silence therefore fails on volume and cough
    probability alone.
    """
    thresholds = thresholds or GateThresholds()
    detector = detector or heuristic_cough_probability
    if len(buffer.samples) == 0:
        raise ValueError("empty buffer")

    failed: list[str] = []
    vol = measure_volume(buffer)
    if vol < thresholds.min_max_amplitude:
        failed.append(CHECK_VOLUME)
    clip = measure_clipping(buffer)
    if clip > thresholds.max_clipping_ratio:
        failed.append(CHECK_CLIPPING)

    try:
        at_441 = buffer if buffer.sample_rate == SEGMENT_RATE else resample(buffer, SEGMENT_RATE)
        segments = segment_coughs(at_441, out_rate=buffer.sample_rate)
    except ValueError:
        segments = []

    prob = detector(buffer, segments)
    if prob < thresholds.min_cough_probability:
        failed.append(CHECK_COUGH)

    background = 0.0
    if segments:
        try:
            background = measure_background(buffer, segments)
        except ValueError:
            background = BACKGROUND_RATIO_CAP
        if background < thresholds.min_background_power_ratio:
            failed.append(CHECK_BACKGROUND)

    return QualityReport(
        max_amplitude=vol,
        clipping_ratio=clip,
        cough_probability=prob,
        segments=list(segments),
        background_power_ratio=background,
        passed=not failed,
        failed_checks=failed,
    )
