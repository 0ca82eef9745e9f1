"""Metrics and reporting: ROC/AUC, threshold metrics, sample-size ablation,
and JSON/CSV/SVG report emission."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray  # {0, 1}
    ids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels must have equal length")
        if self.scores.size and (self.scores.min() < 0.0 or self.scores.max() > 1.0):
            raise ValueError("scores must lie in [0, 1]")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")


@dataclass
class EvalReport:
    auc: float
    accuracy: float
    sensitivity: float
    specificity: float
    threshold: float
    roc_points: list[tuple[float, float]]  # (FPR, TPR)
    counts: dict[str, int]  # TP / FP / TN / FN

    def to_json_dict(self) -> dict:
        return {
            "auc": self.auc,
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "threshold": self.threshold,
            "counts": dict(self.counts),
            "roc_points": [[fpr, tpr] for fpr, tpr in self.roc_points],
        }


@dataclass
class AblationRow:
    fraction: float
    seed: int
    report: EvalReport


@dataclass
class AblationTable:
    rows: list[AblationRow]
    skipped: list[tuple[float, int, str]] = field(default_factory=list)


def roc_and_auc(scored: ScoredSet) -> tuple[list[tuple[float, float]], float]:
    """ROC by descending-score sweep (ties grouped) plus trapezoidal AUC.

    The trapezoidal value equals the pairwise statistic
    P(score+ > score-) + 0.5 * P(tie).
    """
    n_pos = int(scored.labels.sum())
    n_neg = int(scored.labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined for single class")

    order = np.argsort(-scored.scores, kind="stable")
    scores = scored.scores[order]
    labels = scored.labels[order]

    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and scores[j] == scores[i]:
            j += 1
        tp += int(labels[i:j].sum())
        fp += (j - i) - int(labels[i:j].sum())
        points.append((fp / n_neg, tp / n_pos))
        i = j

    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return points, auc


def metrics_at_threshold(scored: ScoredSet, threshold: float = 0.5) -> dict:
    """Accuracy/sensitivity/specificity with score >= threshold as positive."""
    if scored.scores.size == 0:
        raise ValueError("empty scored set")
    pred = scored.scores >= threshold
    pos = scored.labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    tn = int(np.sum(~pred & ~pos))
    fn = int(np.sum(~pred & pos))
    n_pos, n_neg = tp + fn, tn + fp
    return {
        "accuracy": (tp + tn) / scored.scores.size,
        "sensitivity": tp / n_pos if n_pos else float("nan"),
        "specificity": tn / n_neg if n_neg else float("nan"),
        "counts": {"TP": tp, "FP": fp, "TN": tn, "FN": fn},
    }


def evaluate_scores(scored: ScoredSet, threshold: float = 0.5) -> EvalReport:
    points, auc = roc_and_auc(scored)
    m = metrics_at_threshold(scored, threshold)
    return EvalReport(
        auc=auc,
        accuracy=m["accuracy"],
        sensitivity=m["sensitivity"],
        specificity=m["specificity"],
        threshold=threshold,
        roc_points=points,
        counts=m["counts"],
    )


def stratified_subsample(records: Sequence, fraction: float, seed: int) -> list:
    """Per-label subsample at the given fraction (seeded, order-preserving).

    Items must expose ``.label``; counts are round(fraction * n_label).
    """
    rng = np.random.default_rng(seed)
    chosen: set[int] = set()
    labels = sorted({r.label for r in records})
    for label in labels:
        idx = [i for i, r in enumerate(records) if r.label == label]
        take = int(round(fraction * len(idx)))
        picked = rng.choice(len(idx), size=take, replace=False) if take else []
        chosen.update(idx[int(i)] for i in picked)
    return [r for i, r in enumerate(records) if i in chosen]


def ablate(
    run_fn: Callable[[list, int], EvalReport],
    train_records: Sequence,
    fractions: Sequence[float] = (0.2, 0.4, 0.6, 0.8, 1.0),
    seeds: Sequence[int] = (0,),
) -> AblationTable:
    """Train/evaluate on stratified train subsets of decreasing size.

    ``run_fn(subset, seed)`` trains a model on the subset and returns the
    EvalReport on the fixed validation split. Rows whose subset has no
    positives are skipped and recorded.
    """
    rows: list[AblationRow] = []
    skipped: list[tuple[float, int, str]] = []
    for fraction in sorted(fractions):
        for seed in seeds:
            if fraction >= 1.0:
                subset = list(train_records)
            else:
                subset = stratified_subsample(train_records, fraction, seed)
            n_pos = sum(1 for r in subset if r.label == "positive" or r.label == 1)
            if n_pos == 0:
                skipped.append((fraction, seed, "no positive records in subsample"))
                continue
            rows.append(AblationRow(fraction, seed, run_fn(subset, seed)))
    return AblationTable(rows=rows, skipped=skipped)


def _format_value(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        import json

        return json.dumps(value)
    if isinstance(value, dict):
        inner = ", ".join(f"{_format_value(str(k))}: {_format_value(v)}" for k, v in value.items())
        return "{" + inner + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value)!r}")


def dumps_json(obj) -> str:
    """JSON text with floats at 17 significant digits (exact round-trip)."""
    return _format_value(obj)


def emit_report(
    report: EvalReport | AblationTable, out_dir: str | Path, basename: str
) -> list[Path]:
    """Write JSON + CSV (+ ROC SVG for single reports); returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if isinstance(report, EvalReport):
        jpath = out_dir / f"{basename}.json"
        jpath.write_text(dumps_json(report.to_json_dict()))
        written.append(jpath)

        cpath = out_dir / f"{basename}_roc.csv"
        lines = ["fpr,tpr"] + [f"{fpr:.17g},{tpr:.17g}" for fpr, tpr in report.roc_points]
        cpath.write_text("\n".join(lines) + "\n")
        written.append(cpath)

        written.append(_write_roc_svg(out_dir / f"{basename}_roc.svg", report.roc_points))
        return written

    jpath = out_dir / f"{basename}.json"
    jpath.write_text(
        dumps_json(
            {
                "rows": [
                    {"fraction": r.fraction, "seed": r.seed, **r.report.to_json_dict()}
                    for r in report.rows
                ],
                "skipped": [list(s) for s in report.skipped],
            }
        )
    )
    written.append(jpath)

    cpath = out_dir / f"{basename}.csv"
    lines = ["fraction,seed,auc,accuracy,sensitivity,specificity"]
    for r in report.rows:
        rep = r.report
        lines.append(
            f"{r.fraction:.17g},{r.seed},{rep.auc:.17g},{rep.accuracy:.17g},"
            f"{rep.sensitivity:.17g},{rep.specificity:.17g}"
        )
    cpath.write_text("\n".join(lines) + "\n")
    written.append(cpath)
    return written


def _write_roc_svg(path: Path, points: list[tuple[float, float]], size: int = 400) -> Path:
    margin = 40
    span = size - 2 * margin
    coords = " ".join(
        f"{margin + fpr * span:.2f},{margin + (1.0 - tpr) * span:.2f}" for fpr, tpr in points
    )
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">\n'
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" '
        f'fill="none" stroke="#ccc"/>\n'
        f'<line x1="{margin}" y1="{size - margin}" x2="{size - margin}" y2="{margin}" '
        f'stroke="#ddd" stroke-dasharray="4"/>\n'
        f'<polyline fill="none" stroke="#c0392b" stroke-width="1.5" points="{coords}"/>\n'
        f"</svg>\n"
    )
    path.write_text(svg)
    return path
