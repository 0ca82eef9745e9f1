"""RBF-kernel SVM trained by SMO, with Platt scaling to probabilities.

The trainer is a simplified sequential-minimal-optimization loop: each
epoch walks a seeded shuffle of the training set, pairs every
KKT-violating index with a random partner, and solves the two-variable
subproblem analytically. Training stops once `max_passes` consecutive
epochs make no update.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from coughgate.features import FeatureStats

MODEL_FORMAT_VERSION = 1


@dataclass
class SvmParams:
    C: float = 1.0
    gamma: float | None = None  # None -> 1 / (n_dims * var(features))
    tolerance: float = 1e-3
    max_passes: int = 10
    max_epochs: int = 2000

    def __post_init__(self) -> None:
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class PlattParams:
    A: float
    B: float
    converged: bool = True


@dataclass
class SvmModel:
    support_vectors: np.ndarray  # [n_sv, d]
    coefficients: np.ndarray  # alpha_i * y_i per support vector
    bias: float
    gamma: float
    params: SvmParams
    stats: FeatureStats | None = None
    platt: PlattParams | None = None


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * ||a_i - b_j||^2) for all pairs."""
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.exp(-gamma * np.clip(sq, 0.0, None))


def _resolve_gamma(x: np.ndarray, params: SvmParams) -> float:
    if params.gamma is not None:
        return params.gamma
    var = float(x.var())
    if var <= 0:
        return 1.0 / x.shape[1]
    return 1.0 / (x.shape[1] * var)


def train_svm(
    vectors: np.ndarray, labels: np.ndarray, params: SvmParams | None = None, rng_seed: int = 0
) -> SvmModel:
    """SMO training on +-1 labels; deterministic for a fixed seed."""
    params = params or SvmParams()
    x = np.asarray(vectors, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("vectors must be a 2-D matrix")
    if set(np.unique(y)) - {-1.0, 1.0}:
        raise ValueError("labels must be -1 or +1")
    if len(np.unique(y)) < 2:
        raise ValueError("training needs both classes")
    n = len(y)
    gamma = _resolve_gamma(x, params)
    kernel = rbf_kernel(x, x, gamma)
    rng = np.random.default_rng(rng_seed)

    alphas = np.zeros(n)
    bias = 0.0
    tol, c = params.tolerance, params.C

    def f(i: int) -> float:
        return float((alphas * y) @ kernel[:, i]) + bias

    passes = 0
    epoch = 0
    while passes < params.max_passes and epoch < params.max_epochs:
        epoch += 1
        changed = 0
        for i in rng.permutation(n):
            e_i = f(i) - y[i]
            r = e_i * y[i]
            if not ((r < -tol and alphas[i] < c) or (r > tol and alphas[i] > 0)):
                continue
            j = int(rng.integers(n - 1))
            if j >= i:
                j += 1
            e_j = f(j) - y[j]
            a_i, a_j = alphas[i], alphas[j]
            if y[i] != y[j]:
                lo, hi = max(0.0, a_j - a_i), min(c, c + a_j - a_i)
            else:
                lo, hi = max(0.0, a_i + a_j - c), min(c, a_i + a_j)
            if lo == hi:
                continue
            eta = 2.0 * kernel[i, j] - kernel[i, i] - kernel[j, j]
            if eta >= 0:
                continue
            a_j_new = np.clip(a_j - y[j] * (e_i - e_j) / eta, lo, hi)
            if abs(a_j_new - a_j) < 1e-7:
                continue
            a_i_new = a_i + y[i] * y[j] * (a_j - a_j_new)
            b1 = (
                bias
                - e_i
                - y[i] * (a_i_new - a_i) * kernel[i, i]
                - y[j] * (a_j_new - a_j) * kernel[i, j]
            )
            b2 = (
                bias
                - e_j
                - y[i] * (a_i_new - a_i) * kernel[i, j]
                - y[j] * (a_j_new - a_j) * kernel[j, j]
            )
            alphas[i], alphas[j] = a_i_new, a_j_new
            if 0 < a_i_new < c:
                bias = b1
            elif 0 < a_j_new < c:
                bias = b2
            else:
                bias = (b1 + b2) / 2.0
            changed += 1
        passes = passes + 1 if changed == 0 else 0

    keep = alphas > 1e-12
    return SvmModel(
        support_vectors=x[keep].copy(),
        coefficients=(alphas * y)[keep].copy(),
        bias=float(bias),
        gamma=gamma,
        params=params,
    )


def decision_values(model: SvmModel, vectors: np.ndarray) -> np.ndarray:
    """Kernel expansion sum_i alpha_i y_i K(x, x_i) + b for each row."""
    x = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if x.shape[1] != model.support_vectors.shape[1]:
        raise ValueError("feature dimension mismatch")
    k = rbf_kernel(x, model.support_vectors, model.gamma)
    return k @ model.coefficients + model.bias


def decision_value(model: SvmModel, vector: np.ndarray) -> float:
    return float(decision_values(model, vector)[0])


def fit_platt(
    scores: np.ndarray,
    labels: np.ndarray,
    max_iter: int = 100,
    tol: float = 1e-10,
) -> PlattParams:
    """Fit p = 1 / (1 + exp(A f + B)) by Newton descent with backtracking.

    Targets are Platt's smoothed frequencies t+ = (N+ + 1)/(N+ + 2) and
    t- = 1/(N- + 2).
    """
    f = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pos = y > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("fit_platt needs both classes")
    t = np.where(pos, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def objective(a: float, b: float) -> float:
        z = a * f + b
        # F = sum softplus(z) - (1 - t) z  (cross-entropy in stable form)
        return float(np.sum(np.logaddexp(0.0, z) - (1.0 - t) * z))

    a, b = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    value = objective(a, b)
    converged = False
    for _ in range(max_iter):
        z = a * f + b
        p = 1.0 / (1.0 + np.exp(np.clip(z, -500, 500)))  # P(y=1)
        d = t - p  # dF/dz
        grad = np.array([np.sum(d * f), np.sum(d)])
        w = np.clip(p * (1.0 - p), 1e-12, None)
        hess = np.array(
            [[np.sum(w * f * f), np.sum(w * f)], [np.sum(w * f), np.sum(w)]]
        )
        hess[0, 0] += 1e-12
        hess[1, 1] += 1e-12
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        scale = 1.0
        improved = None
        for _ in range(50):
            cand = objective(a - scale * step[0], b - scale * step[1])
            if cand < value:
                improved = cand
                break
            scale *= 0.5
        if improved is None:
            converged = True  # no descent direction left: at the minimum
            break
        a -= scale * step[0]
        b -= scale * step[1]
        if value - improved < tol:
            value = improved
            converged = True
            break
        value = improved
    return PlattParams(A=float(a), B=float(b), converged=converged)


def predict_proba(
    model: SvmModel, platt: PlattParams, vectors: np.ndarray
) -> np.ndarray:
    """Calibrated positive-class probability for each row."""
    z = platt.A * decision_values(model, vectors) + platt.B
    return 1.0 / (1.0 + np.exp(np.clip(z, -500, 500)))


def kkt_violations(
    model_alphas: np.ndarray,
    labels: np.ndarray,
    kernel: np.ndarray,
    bias: float,
    c: float,
    tolerance: float,
) -> int:
    """Count KKT violations for a full dual vector (test/audit helper)."""
    y = np.asarray(labels, dtype=np.float64)
    margins = y * ((model_alphas * y) @ kernel + bias)
    violations = 0
    for a, m in zip(model_alphas, margins):
        if a < 1e-8 and m < 1.0 - tolerance:
            violations += 1
        elif a > c - 1e-8 and m > 1.0 + tolerance:
            violations += 1
        elif 1e-8 <= a <= c - 1e-8 and abs(m - 1.0) > tolerance:
            violations += 1
    return violations


def save_svm(path: str | Path, model: SvmModel) -> None:
    """Versioned JSON serialization (support vectors, duals, Platt, stats)."""
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "kind": "svm",
        "gamma": model.gamma,
        "bias": model.bias,
        "C": model.params.C,
        "tolerance": model.params.tolerance,
        "max_passes": model.params.max_passes,
        "support_vectors": model.support_vectors.tolist(),
        "coefficients": model.coefficients.tolist(),
        "platt": None
        if model.platt is None
        else {"A": model.platt.A, "B": model.platt.B, "converged": model.platt.converged},
        "stats": None
        if model.stats is None
        else {"mean": model.stats.mean.tolist(), "std": model.stats.std.tolist()},
    }
    Path(path).write_text(json.dumps(doc))


def load_svm(path: str | Path) -> SvmModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != "svm" or doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"not a version-{MODEL_FORMAT_VERSION} svm model: {path}")
    params = SvmParams(
        C=doc["C"], gamma=doc["gamma"], tolerance=doc["tolerance"], max_passes=doc["max_passes"]
    )
    platt = None
    if doc["platt"] is not None:
        platt = PlattParams(doc["platt"]["A"], doc["platt"]["B"], doc["platt"]["converged"])
    stats = None
    if doc["stats"] is not None:
        stats = FeatureStats(
            mean=np.array(doc["stats"]["mean"]), std=np.array(doc["stats"]["std"])
        )
    return SvmModel(
        support_vectors=np.array(doc["support_vectors"], dtype=np.float64),
        coefficients=np.array(doc["coefficients"], dtype=np.float64),
        bias=doc["bias"],
        gamma=doc["gamma"],
        params=params,
        stats=stats,
        platt=platt,
    )
