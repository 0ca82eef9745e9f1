"""WAV decoding, mono downmix, and band-limited resampling.

Only RIFF/WAVE containers are handled (16/24/32-bit integer PCM and
32-bit IEEE float). The resampler is a polyphase windowed-sinc
interpolator (Kaiser window, beta=8, 32 taps per phase), good for the
pipeline's 16 kHz / 44.1 kHz / 4.41 kHz conversions.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RESAMPLE_TAPS = 32
KAISER_BETA = 8.0


class AudioDecodeError(Exception):
    """Raised for malformed or unsupported WAV input."""


@dataclass
class AudioBuffer:
    """Mono signal: float samples in [-1, 1] plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioBuffer expects a 1-D sample array")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def _parse_riff_chunks(data: bytes) -> dict[bytes, bytes]:
    if len(data) < 12:
        raise AudioDecodeError("truncated file: shorter than RIFF header")
    if data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise AudioDecodeError("unsupported codec: not a RIFF/WAVE file")
    chunks: dict[bytes, bytes] = {}
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise AudioDecodeError(f"truncated file: chunk {cid!r} cut short")
        if cid not in chunks:  # keep first occurrence
            chunks[cid] = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    return chunks


def decode_wav(source: bytes | str | Path) -> list[AudioBuffer]:
    """Decode a WAV file (bytes or path) into one AudioBuffer per channel.

    Integer PCM is scaled to [-1, 1] by the type's maximum magnitude
    (e.g. int16 sample 16384 -> 0.5, -32768 -> -1.0).
    """
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    else:
        data = bytes(source)
    chunks = _parse_riff_chunks(data)
    if b"fmt " not in chunks:
        raise AudioDecodeError("truncated file: missing fmt chunk")
    if b"data" not in chunks:
        raise AudioDecodeError("truncated file: missing data chunk")
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise AudioDecodeError("truncated file: fmt chunk too small")
    tag, n_channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag not in (1, 3):  # PCM or IEEE float only
        raise AudioDecodeError(f"unsupported codec: fmt tag {tag}")
    if n_channels < 1:
        raise AudioDecodeError("unsupported codec: zero channels")

    raw = chunks[b"data"]
    if len(raw) == 0:
        raise AudioDecodeError("zero-length stream: empty data chunk")
    if block_align:
        raw = raw[: len(raw) - len(raw) % block_align]

    if tag == 1 and bits == 16:
        flat = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == 1 and bits == 24:
        b3 = np.frombuffer(raw, dtype=np.uint8)
        b3 = b3[: len(b3) - len(b3) % 3].reshape(-1, 3)
        vals = (
            b3[:, 0].astype(np.int32)
            | (b3[:, 1].astype(np.int32) << 8)
            | (b3[:, 2].astype(np.int32) << 16)
        )
        vals = np.where(vals >= 1 << 23, vals - (1 << 24), vals)
        flat = vals.astype(np.float64) / float(1 << 23)
    elif tag == 1 and bits == 32:
        flat = np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    elif tag == 3 and bits == 32:
        flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    else:
        raise AudioDecodeError(f"unsupported codec: {bits}-bit samples with fmt tag {tag}")

    if flat.size == 0:
        raise AudioDecodeError("zero-length stream: no complete frames")
    flat = flat[: len(flat) - len(flat) % n_channels]
    frames = flat.reshape(-1, n_channels)
    return [AudioBuffer(frames[:, c].copy(), rate) for c in range(n_channels)]


def downmix_mono(channels: list[AudioBuffer]) -> AudioBuffer:
    """Average channels sample-wise into a single mono buffer."""
    if not channels:
        raise ValueError("no channels to downmix")
    n = len(channels[0].samples)
    rate = channels[0].sample_rate
    for ch in channels[1:]:
        if len(ch.samples) != n or ch.sample_rate != rate:
            raise ValueError("downmix requires equal channel lengths and rates")
    if len(channels) == 1:
        return AudioBuffer(channels[0].samples.copy(), rate)
    mixed = np.mean(np.stack([ch.samples for ch in channels]), axis=0)
    return AudioBuffer(mixed, rate)


def _polyphase_filter(n_phases: int, cutoff: float) -> np.ndarray:
    """Kaiser-windowed sinc interpolation taps, one row per phase.

    Each row is normalized to unit sum so DC is preserved exactly.
    """
    half = RESAMPLE_TAPS // 2
    j = np.arange(RESAMPLE_TAPS)
    frac = np.arange(n_phases)[:, None] / n_phases
    dist = frac + (half - 1) - j[None, :]  # signal-time distance of each tap
    kernel = cutoff * np.sinc(cutoff * dist)
    arg = 1.0 - (dist / half) ** 2
    window = np.where(arg > 0, np.i0(KAISER_BETA * np.sqrt(np.clip(arg, 0, None))), 0.0)
    window /= np.i0(KAISER_BETA)
    taps = kernel * window
    return taps / taps.sum(axis=1, keepdims=True)


def resample(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Resample with a polyphase windowed-sinc filter.

    Output length is round(n * target / source). Content below the new
    Nyquist is preserved; energy above it is attenuated before decimation.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    src = buffer.sample_rate
    if target_rate == src:
        return AudioBuffer(buffer.samples.copy(), src)
    g = math.gcd(src, target_rate)
    up, down = target_rate // g, src // g

    x = buffer.samples
    n_out = int(round(len(x) * target_rate / src))
    if n_out == 0:
        return AudioBuffer(np.zeros(0), target_rate)

    taps = _polyphase_filter(up, min(1.0, up / down))
    half = RESAMPLE_TAPS // 2
    pad = np.concatenate([np.zeros(half), x, np.zeros(half + RESAMPLE_TAPS)])

    out = np.empty(n_out)
    offsets = np.arange(RESAMPLE_TAPS) - (half - 1)
    for lo in range(0, n_out, 1 << 16):
        hi = min(lo + (1 << 16), n_out)
        n = np.arange(lo, hi, dtype=np.int64)
        pos = n * down
        base = pos // up
        phase = pos - base * up
        idx = base[:, None] + offsets[None, :] + half
        out[lo:hi] = np.einsum("ij,ij->i", taps[phase], pad[idx])
    return AudioBuffer(out, target_rate)


def write_wav(path: str | Path, buffer: AudioBuffer) -> None:
    """Write a mono 16-bit PCM WAV file."""
    samples = np.clip(buffer.samples, -1.0, 1.0)
    pcm = np.round(samples * 32767.0).astype("<i2").tobytes()
    rate = buffer.sample_rate
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(pcm))
    Path(path).write_bytes(header + pcm)


def load_wav_mono(path: str | Path, target_rate: int | None = None) -> AudioBuffer:
    """Decode, downmix to mono, and optionally resample in one call."""
    mono = downmix_mono(decode_wav(path))
    if target_rate is not None and target_rate != mono.sample_rate:
        mono = resample(mono, target_rate)
    return mono
