"""Confidence-based evaluation: mean max confidence, AUROC, Brier score."""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field

import numpy as np

__all__ = ["EvalReport", "mmc", "auroc", "brier"]


def mmc(probabilities: np.ndarray) -> float:
    """Mean over rows of the largest class probability.

    Rows must lie on the probability simplex to within 1e-6.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("probabilities must be a nonempty 2-d array")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(p < -1e-6):
        raise ValueError("rows must lie on the probability simplex")
    return float(np.mean(p.max(axis=1)))


def auroc(in_conf: np.ndarray, out_conf: np.ndarray) -> float:
    """Exact area under the ROC for separating in from out by confidence.

    Equals the Mann-Whitney statistic P(in > out) + 0.5 P(in = out), with
    in-distribution as the positive class. Ties get half credit. The count
    is exact (sums of halves are exact in binary floating point), so the
    result matches brute-force pairwise counting bit for bit.
    """
    a = np.asarray(in_conf, dtype=np.float64).ravel()
    b = np.asarray(out_conf, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both confidence vectors must be nonempty")
    b_sorted = np.sort(b)
    total = 0.0
    blist = b_sorted.tolist()
    for v in a.tolist():
        lo = bisect_left(blist, v)
        hi = bisect_right(blist, v)
        total += lo + 0.5 * (hi - lo)
    return total / (a.size * b.size)


def brier(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Mean squared distance between probability rows and one-hot labels."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64).ravel()
    if p.ndim != 2 or p.shape[0] != y.shape[0]:
        raise ValueError("probabilities and labels must align")
    if np.any(y < 0) or np.any(y >= p.shape[1]):
        raise ValueError("labels out of range")
    onehot = np.zeros_like(p)
    onehot[np.arange(y.shape[0]), y] = 1.0
    return float(np.mean(np.sum((p - onehot) ** 2, axis=1)))


@dataclass
class EvalReport:
    """Per-dataset metric values plus the raw confidence vector."""

    name: str
    mmc: float
    auroc: float | None = None
    brier: float | None = None
    confidences: np.ndarray = field(default_factory=lambda: np.empty(0))
