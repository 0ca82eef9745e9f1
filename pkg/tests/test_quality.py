"""Quality-gate checks against constructed signals."""

import math

import numpy as np
import pytest

from coughgate.audio_io import AudioBuffer, resample
from coughgate.quality import (
    CoughSegment,
    GateThresholds,
    detect_cough,
    measure_background,
    measure_clipping,
    measure_volume,
    screen,
    segment_coughs,
)

SR = 16000


def rect_burst_signal(
    bursts: list[tuple[float, float]], duration: float, floor_rms=0.01, burst_rms=0.5, seed=0
) -> AudioBuffer:
    """Noise floor with rectangular noise bursts at the given (start, end) times."""
    rng = np.random.default_rng(seed)
    n = int(duration * SR)
    x = rng.normal(0.0, floor_rms, n)
    for t0, t1 in bursts:
        a, b = int(t0 * SR), int(t1 * SR)
        x[a:b] += rng.normal(0.0, burst_rms, b - a)
    return AudioBuffer(np.clip(x, -1, 1), SR)


def clipped_cough_signal() -> AudioBuffer:
    """Loud tonal bursts hard-clipped at +-0.8 (long flat runs at the rails)
    over a quiet floor."""
    rng = np.random.default_rng(3)
    n = int(1.2 * SR)
    x = rng.normal(0.0, 0.003, n)
    t = np.arange(int(0.4 * SR)) / SR
    burst = 3.0 * np.sin(2 * np.pi * 300 * t)
    for t0 in (0.15, 0.7):
        a = int(t0 * SR)
        x[a : a + len(burst)] += burst
    return AudioBuffer(np.clip(x, -0.8, 0.8), SR)


class TestVolume:
    def test_definition(self):
        buf = AudioBuffer(np.array([0.1, -0.5, 0.3]), SR)
        assert measure_volume(buf) == pytest.approx(0.5)

    def test_silence(self):
        assert measure_volume(AudioBuffer(np.zeros(100), SR)) == 0.0

    def test_full_scale_sine(self):
        t = np.arange(SR) / SR
        buf = AudioBuffer(np.sin(2 * np.pi * 100 * t), SR)  # peak lands on a sample
        assert measure_volume(buf) == pytest.approx(1.0, abs=1e-6)

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            measure_volume(AudioBuffer(np.zeros(0), SR))


class TestClipping:
    def test_smooth_sine_no_clipping(self):
        t = np.arange(SR) / SR
        buf = AudioBuffer(0.5 * np.sin(2 * np.pi * 200 * t), SR)
        assert measure_clipping(buf) == 0.0

    def test_square_wave_ratio(self):
        plateau = np.concatenate([np.full(10, 1.0), np.full(10, -1.0)])
        buf = AudioBuffer(np.tile(plateau, 50), SR)
        assert measure_clipping(buf) >= 0.9

    def test_single_plateau_count(self):
        # direct plateau-count oracle: 5 clipped samples out of 100
        x = np.linspace(0.0, 0.9, 95)
        x = np.concatenate([x, np.full(5, 1.0)])
        assert measure_clipping(AudioBuffer(x, SR)) == pytest.approx(0.05)

    def test_all_zero_buffer_scores_zero(self):
        assert measure_clipping(AudioBuffer(np.zeros(50), SR)) == 0.0

    def test_scale_awareness(self):
        x = np.linspace(0.0, 0.9, 95)
        x = np.concatenate([x, np.full(5, 1.0)])
        full = AudioBuffer(x, SR)
        half = AudioBuffer(0.5 * x, SR)
        assert measure_volume(half) == pytest.approx(0.5 * measure_volume(full))
        assert measure_clipping(half) == pytest.approx(measure_clipping(full))


class TestSegmentation:
    def test_silence_yields_no_segments(self):
        buf = AudioBuffer(np.zeros(2 * 44100), 44100)
        assert segment_coughs(buf) == []

    def test_two_bursts_within_tolerance(self):
        sig = rect_burst_signal([(0.4, 0.7), (1.7, 2.0)], duration=2.5)
        at44 = resample(sig, 44100)
        segments = segment_coughs(at44)
        assert len(segments) == 2
        for seg, (t0, t1) in zip(segments, [(0.4, 0.7), (1.7, 2.0)]):
            assert abs(seg.start / SR - t0) <= 0.030
            assert abs(seg.end / SR - t1) <= 0.030

    def test_single_long_burst(self):
        sig = rect_burst_signal([(0.3, 2.3)], duration=3.0)
        segments = segment_coughs(resample(sig, 44100))
        assert len(segments) == 1

    def test_segments_sorted_disjoint_min_length(self):
        sig = rect_burst_signal([(0.2, 0.5), (0.9, 1.2), (1.8, 2.1)], duration=2.6, seed=5)
        segments = segment_coughs(resample(sig, 44100))
        out_len = int(round(len(resample(sig, 44100).samples) * SR / 44100))
        prev_end = 0
        for seg in segments:
            assert seg.start >= prev_end
            assert seg.length >= int(0.1 * SR)
            assert seg.end <= out_len
            prev_end = seg.end

    def test_wrong_rate_rejected(self):
        with pytest.raises(ValueError):
            segment_coughs(AudioBuffer(np.zeros(SR), SR))

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            segment_coughs(AudioBuffer(np.zeros(100), 44100))


def dc_segments_signal(ratio_db: float) -> tuple[AudioBuffer, list[CoughSegment]]:
    """Constant-amplitude 'cough' region over a constant background; the
    frame power ratio is then exact."""
    bg = 0.05
    seg_amp = bg * 10 ** (ratio_db / 20.0)
    x = np.full(SR, bg)
    x[4000:8000] = seg_amp
    return AudioBuffer(x, SR), [CoughSegment(4000, 8000)]


class TestBackground:
    def test_equal_power_ratio_one(self):
        buf, segs = dc_segments_signal(0.0)
        assert measure_background(buf, segs) == pytest.approx(1.0)

    def test_ratio_hundred(self):
        buf, segs = dc_segments_signal(20.0)
        assert measure_background(buf, segs) == pytest.approx(100.0, rel=1e-9)

    def test_zero_background_capped(self):
        x = np.zeros(SR)
        x[4000:8000] = 0.3
        ratio = measure_background(AudioBuffer(x, SR), [CoughSegment(4000, 8000)])
        assert ratio == pytest.approx(1e6)

    def test_scale_invariance(self):
        buf, segs = dc_segments_signal(14.0)
        scaled = AudioBuffer(buf.samples * 0.25, SR)
        assert measure_background(scaled, segs) == pytest.approx(
            measure_background(buf, segs)
        )

    def test_requires_segments(self):
        with pytest.raises(ValueError):
            measure_background(AudioBuffer(np.ones(SR), SR), [])


class TestDetectCough:
    def test_no_segments_zero(self):
        assert detect_cough(AudioBuffer(np.zeros(SR), SR), []) == 0.0

    def test_logistic_midpoint_at_6db(self):
        buf, segs = dc_segments_signal(6.0)
        assert detect_cough(buf, segs) == pytest.approx(0.5, abs=1e-9)

    def test_logistic_at_18db(self):
        buf, segs = dc_segments_signal(18.0)
        assert detect_cough(buf, segs) == pytest.approx(1 / (1 + math.exp(-4)), abs=1e-9)

    def test_pluggable_detector(self):
        buf, segs = dc_segments_signal(18.0)
        assert detect_cough(buf, segs, detector=lambda b, s: 0.123) == 0.123


class TestScreen:
    def test_clean_burst_passes(self):
        sig = rect_burst_signal([(0.5, 0.9)], duration=1.8, burst_rms=0.3, seed=11)
        report = screen(sig)
        assert report.passed, report.failed_checks
        assert len(report.segments) == 1

    def test_silence_fails_volume_and_cough(self):
        report = screen(AudioBuffer(np.zeros(SR), SR))
        assert not report.passed
        assert set(report.failed_checks) == {"volume", "cough_probability"}

    def test_clipped_burst_fails_clipping_only(self):
        report = screen(clipped_cough_signal())
        assert not report.passed
        assert report.failed_checks == ["clipping"]

    def test_deterministic(self):
        sig = rect_burst_signal([(0.4, 0.8)], duration=1.6, seed=2)
        a, b = screen(sig), screen(sig)
        assert a == b

    def test_report_json_fields(self):
        sig = rect_burst_signal([(0.4, 0.8)], duration=1.6, seed=2)
        doc = screen(sig).to_json_dict()
        for key in (
            "max_amplitude",
            "clipping_ratio",
            "cough_probability",
            "background_power_ratio",
            "segments_seconds",
            "verdict",
            "failed_checks",
        ):
            assert key in doc

    def test_custom_thresholds(self):
        sig = rect_burst_signal([(0.4, 0.8)], duration=1.6, seed=2)
        strict = GateThresholds(min_background_power_ratio=1e9)
        report = screen(sig, strict)
        assert "background" in report.failed_checks
