"""Datasets: synthetic generators, outlier synthesis, splits, standardization.

Every generator is a pure function of its parameters and seed. The toy
generators are shape-matched stand-ins for the usual 1-d regression and
two-moons demonstrations (the regression target is sin(2x) on two disjoint
input clusters); their exact constants live here and nowhere else.
"""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass, replace

import numpy as np

from .numerics import Rng

__all__ = [
    "Dataset",
    "SplitSpec",
    "gen_two_moons",
    "gen_toy_regression",
    "synthesize_ood",
    "gen_uniform_noise",
    "standardize",
    "split",
    "load_csv",
]

# Contrast rescaling draws its factor uniformly from this range; blurring
# applies a width-3 box filter twice with edge replication.
CONTRAST_RANGE = (0.05, 0.3)
BLUR_WIDTH = 3
BLUR_PASSES = 2


@dataclass(frozen=True)
class Stats:
    """Per-column standardization statistics (train split only)."""

    mean: np.ndarray
    std: np.ndarray
    target_mean: np.ndarray | None = None
    target_std: np.ndarray | None = None


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus targets with a role tag.

    Classification targets are an integer label vector; regression targets a
    float column matrix. ``stats`` is set on standardized data and holds the
    train-split statistics used for the transform.
    """

    features: np.ndarray
    targets: np.ndarray
    task: str  # classification | regression
    role: str = "unsplit"
    stats: Stats | None = None

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError("feature and target row counts differ")

    @property
    def num_rows(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        if any(f < 0.0 for f in self.fractions):
            raise ValueError("fractions must be nonnegative")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("fractions must sum to 1")


def gen_two_moons(m: int, noise_std: float, seed: int) -> Dataset:
    """Two interleaved half circles with Gaussian noise, balanced labels.

    Class 0 lies on the unit upper half circle, class 1 on a lower half
    circle shifted by (1, -0.5); rows are shuffled deterministically.
    """
    if m < 2:
        raise ValueError("need at least two points")
    rng = Rng(seed)
    n0 = m // 2 + (m % 2)
    n1 = m - n0
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([upper, lower], axis=0)
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise_std > 0.0:
        x = x + rng.normal(0.0, noise_std, x.shape)
    order = rng.permutation(m)
    return Dataset(x[order], y[order], task="classification")


def gen_toy_regression(
    m: int, x_range: tuple[float, float], noise_std: float, seed: int
) -> Dataset:
    """1-d regression: y = sin(2x) + noise on two disjoint input clusters.

    The clusters cover the lower and upper 35 percent of ``x_range``, leaving
    a central gap.
    """
    if m < 2:
        raise ValueError("need at least two points")
    lo, hi = float(x_range[0]), float(x_range[1])
    if not lo < hi:
        raise ValueError("x_range must be increasing")
    rng = Rng(seed)
    width = hi - lo
    n0 = m // 2 + (m % 2)
    n1 = m - n0
    left = rng.uniform(lo, lo + 0.35 * width, (n0, 1))
    right = rng.uniform(hi - 0.35 * width, hi, (n1, 1))
    x = np.concatenate([left, right], axis=0)
    y = np.sin(2.0 * x)
    if noise_std > 0.0:
        y = y + rng.normal(0.0, noise_std, y.shape)
    order = rng.permutation(m)
    return Dataset(x[order], y[order], task="regression")


def _box_blur_rows(x: np.ndarray) -> np.ndarray:
    padded = np.concatenate([x[:, :1], x, x[:, -1:]], axis=1)
    return (padded[:, :-2] + padded[:, 1:-1] + padded[:, 2:]) / 3.0


def synthesize_ood(in_data: Dataset, kind: str, rng: Rng) -> Dataset:
    """Uninformative outliers built from in-distribution rows.

    permute: an independent random permutation of each row's coordinates.
    blur: a width-3 box filter over the feature sequence, applied twice,
    with replicated edges (requires at least 3 features). contrast: each row
    is pulled toward its own mean by a factor drawn from CONTRAST_RANGE.
    """
    if in_data.num_rows == 0:
        raise ValueError("in_data must be nonempty")
    x = in_data.features
    if kind == "permute":
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            out[i] = x[i, rng.permutation(x.shape[1])]
    elif kind == "blur":
        if x.shape[1] < BLUR_WIDTH:
            raise ValueError("blur requires at least 3 features")
        out = x
        for _ in range(BLUR_PASSES):
            out = _box_blur_rows(out)
    elif kind == "contrast":
        c = rng.uniform(CONTRAST_RANGE[0], CONTRAST_RANGE[1], (x.shape[0], 1))
        row_mean = x.mean(axis=1, keepdims=True)
        out = c * (x - row_mean) + row_mean
    else:
        raise ValueError(f"unknown ood kind {kind!r}")
    return Dataset(out, in_data.targets.copy(), task=in_data.task, role="out")


def gen_uniform_noise(
    m: int, n: int, low: float, high: float, seed: int, scale: float = 1.0
) -> Dataset:
    """Uniform noise inputs; scale large (e.g. 5000) for the asymptotic set."""
    if not low < high:
        raise ValueError("low must be below high")
    rng = Rng(seed)
    x = rng.uniform(low, high, (m, n)) * scale
    targets = np.zeros(m, dtype=np.int64)
    return Dataset(x, targets, task="classification", role="out")


def standardize(
    train: Dataset, others: list[Dataset], include_targets: bool = False
) -> tuple[Dataset, list[Dataset], Stats]:
    """Zero-mean unit-variance features using train statistics only.

    Constant columns get their std clamped to 1 so they map to zero. With
    ``include_targets`` (regression only) targets are standardized the same
    way. Every other dataset is transformed with the train stats, never its
    own.
    """
    if train.num_rows == 0:
        raise ValueError("train split must be nonempty")
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    t_mean = t_std = None
    if include_targets:
        if train.task != "regression":
            raise ValueError("target standardization only applies to regression")
        t_mean = train.targets.mean(axis=0)
        t_std = train.targets.std(axis=0)
        t_std = np.where(t_std < 1e-12, 1.0, t_std)
    stats = Stats(mean, std, t_mean, t_std)

    def transform(ds: Dataset) -> Dataset:
        feats = (ds.features - mean) / std
        targets = ds.targets
        if include_targets:
            targets = (ds.targets - t_mean) / t_std
        return replace(ds, features=feats, targets=targets, stats=stats)

    return transform(train), [transform(d) for d in others], stats


def unstandardize_features(features: np.ndarray, stats: Stats) -> np.ndarray:
    return features * stats.std + stats.mean


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Seed-deterministic shuffle into disjoint train/val/test datasets."""
    m = data.num_rows
    order = Rng(spec.seed).permutation(m)
    f_train, f_val, _ = spec.fractions
    n_train = int(m * f_train)
    n_val = int(m * (f_train + f_val)) - n_train
    idx_train = order[:n_train]
    idx_val = order[n_train : n_train + n_val]
    idx_test = order[n_train + n_val :]

    def take(idx, role):
        return replace(
            data, features=data.features[idx], targets=data.targets[idx], role=role
        )

    return take(idx_train, "train"), take(idx_val, "val"), take(idx_test, "test")


def load_csv(path: str, target_column, header: bool = True) -> Dataset:
    """Rectangular numeric CSV into a regression dataset.

    ``target_column`` is a column name (requires a header row) or a 0-based
    index. Features keep the remaining columns in file order. Parse failures
    report the offending 1-based row and column. Classification use casts
    the target column to labels downstream.
    """
    with open(path, "r", encoding="utf-8", newline="") as handle:
        rows = list(_csv.reader(handle))
    rows = [r for r in rows if r]
    if not rows:
        raise ValueError(f"{path}: empty file")
    names = None
    if header:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            raise ValueError(f"{path}: no data rows")
    width = len(rows[0])
    if isinstance(target_column, str):
        if names is None:
            raise ValueError("column names require header=True")
        if target_column not in names:
            raise ValueError(f"target column {target_column!r} not found")
        target_idx = names.index(target_column)
    else:
        target_idx = int(target_column)
        if not 0 <= target_idx < width:
            raise ValueError(f"target column index {target_idx} out of range")

    parsed = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(
                f"{path}: row {i + 1 + int(header)} has {len(row)} cells, "
                f"expected {width}"
            )
        for j, cell in enumerate(row):
            try:
                parsed[i, j] = float(cell)
            except ValueError:
                raise ValueError(
                    f"{path}: cannot parse {cell!r} at row "
                    f"{i + 1 + int(header)}, column {j + 1}"
                ) from None
    feature_cols = [j for j in range(width) if j != target_idx]
    return Dataset(
        parsed[:, feature_cols],
        parsed[:, [target_idx]],
        task="regression",
    )
