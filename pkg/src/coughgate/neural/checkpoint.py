"""Weight checkpoints: versioned binary, layer-ordered, shape-tagged,
little-endian float32 payloads."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CGWGT001"


def save_weights(path: str | Path, params: dict[str, np.ndarray]) -> None:
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name, arr in params.items():
            encoded = name.encode("utf-8")
            a = np.asarray(arr, dtype="<f4")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with Path(path).open("rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"bad checkpoint magic in {path}")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * n), dtype="<f4")
            out[name] = data.reshape(shape).astype(np.float32)
    return out
