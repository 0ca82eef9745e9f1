"""WAV decode, downmix, and resampler behavior."""

import struct

import numpy as np
import pytest

from coughgate.audio_io import (
    AudioBuffer,
    AudioDecodeError,
    decode_wav,
    downmix_mono,
    load_wav_mono,
    resample,
    write_wav,
)


def wav_bytes(frames: bytes, n_channels=1, rate=16000, bits=16, tag=1) -> bytes:
    block = n_channels * bits // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(frames)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, tag, n_channels, rate, rate * block, block, bits
    )
    header += b"data" + struct.pack("<I", len(frames))
    return header + frames


class TestDecode:
    def test_int16_scaling(self):
        data = wav_bytes(struct.pack("<2h", 16384, -32768))
        (mono,) = decode_wav(data)
        assert np.allclose(mono.samples, [0.5, -1.0])

    def test_header_fidelity(self):
        frames = struct.pack("<8000h", *([0] * 8000))
        (buf,) = decode_wav(wav_bytes(frames, rate=8000))
        assert len(buf.samples) == 8000
        assert buf.sample_rate == 8000

    def test_empty_data_chunk(self):
        with pytest.raises(AudioDecodeError, match="zero-length"):
            decode_wav(wav_bytes(b""))

    def test_unsupported_fmt_tag(self):
        with pytest.raises(AudioDecodeError, match="unsupported codec"):
            decode_wav(wav_bytes(struct.pack("<2h", 0, 0), tag=2))

    def test_not_riff(self):
        with pytest.raises(AudioDecodeError):
            decode_wav(b"OggS" + b"\x00" * 64)

    def test_float32(self):
        frames = struct.pack("<3f", 0.25, -0.75, 1.0)
        (buf,) = decode_wav(wav_bytes(frames, bits=32, tag=3))
        assert np.allclose(buf.samples, [0.25, -0.75, 1.0])

    def test_int24(self):
        frames = (1 << 22).to_bytes(3, "little") + (0).to_bytes(3, "little")
        (buf,) = decode_wav(wav_bytes(frames, bits=24))
        assert np.allclose(buf.samples, [0.5, 0.0])

    def test_stereo_split(self):
        frames = struct.pack("<4h", 1000, -1000, 2000, -2000)
        left, right = decode_wav(wav_bytes(frames, n_channels=2))
        assert np.allclose(left.samples * 32768, [1000, 2000])
        assert np.allclose(right.samples * 32768, [-1000, -2000])

    def test_roundtrip_write_read(self, tmp_path, rng):
        x = rng.uniform(-0.9, 0.9, 500)
        write_wav(tmp_path / "a.wav", AudioBuffer(x, 16000))
        buf = load_wav_mono(tmp_path / "a.wav")
        assert buf.sample_rate == 16000
        assert np.max(np.abs(buf.samples - x)) < 1e-4  # 16-bit quantization


class TestDownmix:
    def test_opposite_channels_cancel(self, rng):
        x = rng.normal(0, 0.4, 256)
        out = downmix_mono([AudioBuffer(x, 16000), AudioBuffer(-x, 16000)])
        assert np.allclose(out.samples, 0.0)

    def test_single_channel_identity(self, rng):
        x = rng.normal(0, 0.4, 64)
        out = downmix_mono([AudioBuffer(x, 8000)])
        assert np.array_equal(out.samples, x)
        assert out.sample_rate == 8000

    def test_mean_of_two(self):
        a = AudioBuffer(np.full(10, 0.2), 16000)
        b = AudioBuffer(np.full(10, 0.6), 16000)
        assert np.allclose(downmix_mono([a, b]).samples, 0.4)

    def test_linearity(self, rng):
        chans = [AudioBuffer(rng.normal(0, 0.2, 128), 16000) for _ in range(3)]
        scaled = [AudioBuffer(2.5 * c.samples, 16000) for c in chans]
        assert np.allclose(
            downmix_mono(scaled).samples, 2.5 * downmix_mono(chans).samples
        )

    def test_mismatched_length(self):
        with pytest.raises(ValueError):
            downmix_mono([AudioBuffer(np.zeros(5), 16000), AudioBuffer(np.zeros(6), 16000)])


class TestResample:
    def test_identity_rate(self, rng):
        buf = AudioBuffer(rng.normal(0, 0.3, 1000), 16000)
        out = resample(buf, 16000)
        assert np.array_equal(out.samples, buf.samples)

    def test_sine_peak_preserved(self):
        t = np.arange(44100) / 44100
        buf = AudioBuffer(np.sin(2 * np.pi * 1000 * t), 44100)
        out = resample(buf, 16000)
        spectrum = np.abs(np.fft.rfft(out.samples))
        peak_hz = np.argmax(spectrum) * 16000 / len(out.samples)
        assert abs(peak_hz - 1000.0) <= 16000 / len(out.samples)

    def test_output_length(self):
        buf = AudioBuffer(np.zeros(44100), 44100)
        assert abs(len(resample(buf, 16000).samples) - 16000) <= 1

    def test_dc_preserved(self):
        buf = AudioBuffer(np.full(8000, 0.7), 16000)
        out = resample(buf, 44100)
        core = out.samples[200:-200]
        assert np.max(np.abs(core - 0.7)) < 1e-6

    def test_up_down_roundtrip_minus_60db(self):
        # band-limited below a quarter of the original rate
        rng = np.random.default_rng(5)
        n = 16000
        freqs = rng.uniform(50, 3200, 12)
        phases = rng.uniform(0, 2 * np.pi, 12)
        t = np.arange(n) / 16000
        x = sum(np.sin(2 * np.pi * f * t + p) for f, p in zip(freqs, phases)) / 12
        buf = AudioBuffer(x, 16000)
        back = resample(resample(buf, 32000), 16000)
        err = back.samples[300:-300] - x[300:-300]
        rms_db = 10 * np.log10(np.mean(err**2) / np.mean(x[300:-300] ** 2))
        assert rms_db < -60.0

    def test_zero_target_rate(self):
        with pytest.raises(ValueError):
            resample(AudioBuffer(np.zeros(10), 16000), 0)
