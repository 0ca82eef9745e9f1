"""Independent reference implementations used as test oracles.

These deliberately avoid the library's own code paths: the DFT is an
explicit complex-exponential matrix product, mel triangles and the DCT-II
are textbook summation loops, and the pairwise AUC is an O(n^2) count.
"""

from __future__ import annotations

import math

import numpy as np

_DFT_CACHE: dict[int, np.ndarray] = {}


def naive_dft_magnitude(frame: np.ndarray, n_fft: int) -> np.ndarray:
    """|X_k| for k = 0..n_fft//2 via an explicit DFT matrix."""
    if n_fft not in _DFT_CACHE:
        n = np.arange(n_fft)
        k = np.arange(n_fft // 2 + 1)
        _DFT_CACHE[n_fft] = np.exp(-2j * np.pi * np.outer(k, n) / n_fft)
    padded = np.zeros(n_fft)
    padded[: len(frame)] = frame
    return np.abs(_DFT_CACHE[n_fft] @ padded)


def naive_full_dft_energy(frame: np.ndarray, n_fft: int) -> float:
    """sum_k |X_k|^2 over all n_fft bins (explicit DFT)."""
    n = np.arange(n_fft)
    padded = np.zeros(n_fft)
    padded[: len(frame)] = frame
    total = 0.0
    for k in range(n_fft):
        total += abs(np.sum(padded * np.exp(-2j * np.pi * k * n / n_fft))) ** 2
    return total


def naive_mel_triangles(
    n_mels: int, n_bins: int, sample_rate: int, n_fft: int, fmin: float, fmax: float
) -> np.ndarray:
    def to_mel(f: float) -> float:
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def to_hz(m: float) -> float:
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    points = [
        to_hz(to_mel(fmin) + (to_mel(fmax) - to_mel(fmin)) * i / (n_mels + 1))
        for i in range(n_mels + 2)
    ]
    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        left, center, right = points[m], points[m + 1], points[m + 2]
        for k in range(n_bins):
            f = k * sample_rate / n_fft
            if left <= f <= center and center > left:
                bank[m, k] = (f - left) / (center - left)
            elif center < f <= right and right > center:
                bank[m, k] = (right - f) / (right - center)
    return bank


def naive_dct2_orthonormal(values: np.ndarray) -> np.ndarray:
    """Textbook DCT-II: C_m = s(m) * sum_j x_j cos(pi m (j + 0.5) / M)."""
    m_count = len(values)
    out = np.zeros(m_count)
    for m in range(m_count):
        acc = 0.0
        for j in range(m_count):
            acc += values[j] * math.cos(math.pi * m * (j + 0.5) / m_count)
        scale = math.sqrt(1.0 / m_count) if m == 0 else math.sqrt(2.0 / m_count)
        out[m] = scale * acc
    return out


def naive_mfcc_frame(
    windowed_frame: np.ndarray,
    n_fft: int,
    sample_rate: int,
    n_mels: int,
    n_mfcc: int,
    fmin: float,
    fmax: float,
    log_floor: float = 1e-10,
) -> np.ndarray:
    """Full per-frame MFCC chain via the naive pieces above."""
    mag = naive_dft_magnitude(windowed_frame, n_fft)
    bank = naive_mel_triangles(n_mels, len(mag), sample_rate, n_fft, fmin, fmax)
    energies = np.zeros(n_mels)
    for m in range(n_mels):
        energies[m] = np.sum(bank[m] * mag**2)
    log_mel = np.log(energies + log_floor)
    return naive_dct2_orthonormal(log_mel)[:n_mfcc]


def pairwise_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """P(score+ > score-) + 0.5 P(tie) by explicit pair enumeration."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    if not pos or not neg:
        raise ValueError("need both classes")
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def logistic(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))
