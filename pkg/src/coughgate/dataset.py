"""Manifest-driven dataset handling: parsing, splits, class balancing.

A manifest is a UTF-8 CSV with header ``id,audio_path,label,split,source``
plus optional metadata columns. Labels are ``positive`` / ``negative`` /
``unlabeled`` (unlabeled rows may only live in the train split); splits
are ``train`` / ``validation`` / ``test``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
REQUIRED_COLUMNS = ("id", "audio_path", "label", "split", "source")
VALID_LABELS = frozenset({"positive", "negative", "unlabeled"})
VALID_SPLITS = frozenset({"train", "validation", "test"})


class ManifestError(Exception):
    """Raised for malformed manifests; message carries the row number."""


@dataclass
class DatasetRecord:
    id: str
    audio_path: str
    label: str
    split: str
    source: str
    metadata: dict[str, str] = field(default_factory=dict)
    copy_index: int = 0

    @property
    def is_positive(self) -> bool:
        return self.label == "positive"

    @property
    def is_labeled(self) -> bool:
        return self.label != "unlabeled"


@dataclass
class DatasetManifest:
    records: list[DatasetRecord]
    schema_version: int = SCHEMA_VERSION


def parse_manifest(path: str | Path) -> DatasetManifest:
    """Parse a manifest CSV, preserving row order.

    Raises ManifestError naming the offending row(s) for unknown labels or
    splits, duplicate ids, empty paths, or unlabeled rows outside train.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ManifestError(f"missing required column(s): {', '.join(missing)}")
        extra_cols = [c for c in header if c not in REQUIRED_COLUMNS]

        records: list[DatasetRecord] = []
        seen: dict[str, int] = {}
        for row_no, row in enumerate(reader, start=2):  # row 1 is the header
            rid = (row.get("id") or "").strip()
            if not rid:
                raise ManifestError(f"row {row_no}: empty id")
            if rid in seen:
                raise ManifestError(
                    f"duplicate id {rid!r} on rows {seen[rid]} and {row_no}"
                )
            seen[rid] = row_no
            audio_path = (row.get("audio_path") or "").strip()
            if not audio_path:
                raise ManifestError(f"row {row_no}: empty audio_path")
            label = (row.get("label") or "").strip()
            if label not in VALID_LABELS:
                raise ManifestError(
                    f"row {row_no}: unknown label {label!r} "
                    f"(accepted: positive/negative/unlabeled)"
                )
            split = (row.get("split") or "").strip()
            if split not in VALID_SPLITS:
                raise ManifestError(f"row {row_no}: unknown split {split!r}")
            if label == "unlabeled" and split != "train":
                raise ManifestError(
                    f"row {row_no}: unlabeled records are only allowed in split=train"
                )
            metadata = {c: row[c] for c in extra_cols if (row.get(c) or "").strip()}
            records.append(
                DatasetRecord(rid, audio_path, label, split, row.get("source", ""), metadata)
            )
    return DatasetManifest(records)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Serialize a manifest back to CSV (round-trips through parse_manifest)."""
    meta_cols: list[str] = []
    for rec in manifest.records:
        for key in rec.metadata:
            if key not in meta_cols:
                meta_cols.append(key)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(REQUIRED_COLUMNS) + meta_cols)
        for rec in manifest.records:
            row = [rec.id, rec.audio_path, rec.label, rec.split, rec.source]
            row += [rec.metadata.get(c, "") for c in meta_cols]
            writer.writerow(row)


def select_split(
    manifest: DatasetManifest, split: str, labeled_only: bool = False
) -> list[DatasetRecord]:
    """Records of one split in manifest order; optionally drop unlabeled."""
    if split not in VALID_SPLITS:
        raise ValueError(f"unknown split {split!r}")
    out = [r for r in manifest.records if r.split == split]
    if labeled_only:
        out = [r for r in out if r.is_labeled]
    return out


def balance_upsample(
    records: list[DatasetRecord], ratio: int, rng_seed: int
) -> list[DatasetRecord]:
    """Duplicate every positive record `ratio` times, then shuffle (seeded).

    Duplicates carry distinct copy_index values so downstream augmentation
    can draw per-copy randomness. Negatives appear exactly once.
    """
    if ratio < 1:
        raise ValueError("ratio must be a positive integer")
    for rec in records:
        if not rec.is_labeled:
            raise ValueError(f"unlabeled record {rec.id!r} cannot be balanced")
    out: list[DatasetRecord] = []
    for rec in records:
        copies = ratio if rec.is_positive else 1
        for k in range(copies):
            out.append(replace(rec, copy_index=k))
    order = np.random.default_rng(rng_seed).permutation(len(out))
    return [out[i] for i in order]
