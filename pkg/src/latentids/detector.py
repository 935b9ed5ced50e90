"""Reconstruction-error anomaly detection: per-sample errors, min-max
normalization, strict-threshold classification, F1-optimal threshold
fitting, and confusion/metric reporting.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from latentids.errors import ConfigError, DimensionError
from latentids.vae import VariationalAutoencoder

__all__ = [
    "reconstruction_errors",
    "normalize_errors",
    "ErrorNormalizer",
    "classify",
    "fit_threshold",
    "ThresholdModel",
    "ConfusionCounts",
    "Metrics",
    "confusion_and_metrics",
    "confusion_cells",
    "DetectionResult",
]

CELL_LABELS = ("TP", "FP", "TN", "FN")


def reconstruction_errors(
    model: VariationalAutoencoder, X: np.ndarray
) -> np.ndarray:
    """Per-sample squared L2 norm of (x - decode(latent_embed(x)))."""
    diff = model.reconstruct(X) - X
    return np.einsum("ij,ij->i", diff, diff)


def normalize_errors(re: np.ndarray) -> np.ndarray:
    """Min-max normalize a vector over itself; constant vectors map to 0."""
    re = np.asarray(re, dtype=np.float64).ravel()
    if re.size == 0:
        raise DimensionError("error vector is empty")
    return ErrorNormalizer.fit(re).transform(re)


@dataclass(frozen=True)
class ErrorNormalizer:
    """Min-max constants fitted on one error vector, applicable to others.

    Fitting-set values land in [0, 1]; transformed held-out sets may fall
    outside that range (no clamping).
    """

    lo: float
    hi: float

    @classmethod
    def fit(cls, re: np.ndarray) -> "ErrorNormalizer":
        re = np.asarray(re, dtype=np.float64)
        if re.size == 0:
            raise DimensionError("error vector is empty")
        return cls(lo=float(re.min()), hi=float(re.max()))

    def transform(self, re: np.ndarray) -> np.ndarray:
        re = np.asarray(re, dtype=np.float64)
        span = self.hi - self.lo
        if span <= 0.0:
            return np.zeros_like(re)
        return (re - self.lo) / span


def classify(re_norm: np.ndarray, threshold: float) -> np.ndarray:
    """1 where re_norm > threshold (strict), else 0."""
    return (np.asarray(re_norm) > threshold).astype(np.int64)


@dataclass(frozen=True)
class ThresholdModel:
    """F1-optimal threshold plus the metrics it achieved on the fitting set."""

    threshold: float
    precision: float
    recall: float
    f1: float
    accuracy: float


def fit_threshold(re_norm: np.ndarray, y_true: np.ndarray) -> ThresholdModel:
    """Pick the threshold maximizing F1 on (re_norm, y_true).

    Candidates are midpoints of consecutive sorted distinct error values,
    plus 0 and 1; ties resolve to the smallest threshold. Runs one sorted
    sweep with suffix sums, O(n log n).

    Raises:
        ConfigError: y_true contains a single class only.
    """
    re_norm = np.asarray(re_norm, dtype=np.float64).ravel()
    y_true = np.asarray(y_true).ravel().astype(np.int64)
    if re_norm.shape != y_true.shape:
        raise DimensionError(
            f"length mismatch: {re_norm.shape[0]} vs {y_true.shape[0]}"
        )
    n_pos = int(y_true.sum())
    if n_pos == 0 or n_pos == y_true.size:
        raise ConfigError("threshold fitting needs both classes present")

    order = np.argsort(re_norm, kind="stable")
    values = re_norm[order]
    labels = y_true[order]

    distinct_start = np.flatnonzero(np.r_[True, values[1:] != values[:-1]])
    distinct = values[distinct_start]
    midpoints = 0.5 * (distinct[:-1] + distinct[1:])
    candidates = np.unique(np.r_[0.0, 1.0, midpoints])

    # Suffix positive counts: pos_from[i] = positives among samples with
    # value >= values[i]; predicted positives at T are the suffix with
    # value > T, located by searchsorted.
    suffix_pos = np.cumsum(labels[::-1])[::-1]
    starts = np.searchsorted(values, candidates, side="right")
    pred_pos = values.size - starts
    tp = np.where(starts < values.size, suffix_pos[np.minimum(starts, values.size - 1)], 0)
    tp = np.where(pred_pos > 0, tp, 0)
    fp = pred_pos - tp
    fn = n_pos - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)

    best = int(np.argmax(f1))  # argmax takes the first max: smallest T wins
    threshold = float(candidates[best])
    y_hat = classify(re_norm, threshold)
    _, metrics = confusion_and_metrics(y_true, y_hat)
    return ThresholdModel(
        threshold=threshold,
        precision=metrics.precision,
        recall=metrics.recall,
        f1=metrics.f1,
        accuracy=metrics.accuracy,
    )


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Metrics:
    """Precision/recall/F1/accuracy; degenerate denominators give 0 and
    set the corresponding flag."""

    precision: float
    recall: float
    f1: float
    accuracy: float
    precision_defined: bool = True
    recall_defined: bool = True


def confusion_and_metrics(
    y_true: np.ndarray, y_hat: np.ndarray
) -> tuple[ConfusionCounts, Metrics]:
    y_true = np.asarray(y_true).ravel().astype(np.int64)
    y_hat = np.asarray(y_hat).ravel().astype(np.int64)
    if y_true.shape != y_hat.shape:
        raise DimensionError(
            f"length mismatch: {y_true.shape[0]} vs {y_hat.shape[0]}"
        )
    tp = int(np.count_nonzero((y_true == 1) & (y_hat == 1)))
    fp = int(np.count_nonzero((y_true == 0) & (y_hat == 1)))
    tn = int(np.count_nonzero((y_true == 0) & (y_hat == 0)))
    fn = int(np.count_nonzero((y_true == 1) & (y_hat == 0)))
    counts = ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)

    precision_defined = (tp + fp) > 0
    recall_defined = (tp + fn) > 0
    precision = tp / (tp + fp) if precision_defined else 0.0
    recall = tp / (tp + fn) if recall_defined else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if (precision + recall) > 0
        else 0.0
    )
    accuracy = (tp + tn) / counts.total if counts.total else 0.0
    return counts, Metrics(
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=accuracy,
        precision_defined=precision_defined,
        recall_defined=recall_defined,
    )


def confusion_cells(y_true: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    """Per-sample confusion cell: TP/FP/TN/FN as a string array."""
    y_true = np.asarray(y_true).ravel().astype(np.int64)
    y_hat = np.asarray(y_hat).ravel().astype(np.int64)
    if y_true.shape != y_hat.shape:
        raise DimensionError(
            f"length mismatch: {y_true.shape[0]} vs {y_hat.shape[0]}"
        )
    cells = np.empty(y_true.shape[0], dtype="<U2")
    cells[(y_true == 1) & (y_hat == 1)] = "TP"
    cells[(y_true == 0) & (y_hat == 1)] = "FP"
    cells[(y_true == 0) & (y_hat == 0)] = "TN"
    cells[(y_true == 1) & (y_hat == 0)] = "FN"
    return cells


@dataclass(frozen=True)
class DetectionResult:
    """Per-sample detection outputs for one evaluated set."""

    re: np.ndarray
    re_norm: np.ndarray
    y_hat: np.ndarray
    y_true: np.ndarray | None = None
    cells: np.ndarray | None = None

    def to_csv(self, path: str | Path) -> None:
        lines = ["sample_index,re,re_norm,y_true,y_hat,cell"]
        for i in range(self.re.shape[0]):
            y = "" if self.y_true is None else str(int(self.y_true[i]))
            cell = "" if self.cells is None else self.cells[i]
            lines.append(
                f"{i},{self.re[i]:.17g},{self.re_norm[i]:.17g},{y},"
                f"{int(self.y_hat[i])},{cell}"
            )
        Path(path).write_text("\n".join(lines) + "\n")
