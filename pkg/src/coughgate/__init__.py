"""Cough-audio screening toolkit.

End-to-end pipeline for COVID-19 screening from cough recordings:
WAV decoding and resampling, five-check quality gating, handcrafted and
spectrogram feature extraction, three classifiers (RBF-SVM with Platt
scaling, a from-scratch CNN on MFCC sonographs, and a masked-spectrogram
self-supervised transformer), plus an evaluation and ablation harness.
"""

__version__ = "0.1.0"

from coughgate.audio_io import AudioBuffer
from coughgate.dataset import DatasetManifest, DatasetRecord
from coughgate.quality import CoughSegment, GateThresholds, QualityReport

__all__ = [
    "AudioBuffer",
    "DatasetManifest",
    "DatasetRecord",
    "CoughSegment",
    "GateThresholds",
    "QualityReport",
    "__version__",
]
