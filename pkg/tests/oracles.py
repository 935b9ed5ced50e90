"""Independent oracles the tests check the implementation against.

Everything here deliberately takes the slow, obvious route (explicit matrix
inverses, O(n^2) scans, per-coordinate finite differences) and never calls
the code paths it verifies.
"""

from __future__ import annotations

import numpy as np


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f at x, coordinate by coordinate."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-based relative error between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def brute_force_nn(ref: np.ndarray, queries: np.ndarray):
    """Per-query direct scan: squared distances summed the obvious way."""
    indices = []
    dists = []
    for q in np.atleast_2d(queries):
        d2 = ((ref - q) ** 2).sum(axis=1)
        indices.append(int(np.argmin(d2)))
        dists.append(float(d2.min()))
    return np.array(indices, dtype=np.int64), np.array(dists)


def brute_force_threshold(re_norm: np.ndarray, y_true: np.ndarray):
    """O(n^2) F1 maximization over midpoint candidates plus {0, 1}.

    Returns (threshold, f1); ties resolve to the smallest threshold.
    """
    re_norm = np.asarray(re_norm, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.int64)
    distinct = np.unique(re_norm)
    candidates = sorted({0.0, 1.0, *(0.5 * (distinct[:-1] + distinct[1:]))})
    best_t, best_f1 = 0.0, -1.0
    for t in candidates:
        y_hat = (re_norm > t).astype(np.int64)
        tp = int(((y_true == 1) & (y_hat == 1)).sum())
        fp = int(((y_true == 0) & (y_hat == 1)).sum())
        fn = int(((y_true == 1) & (y_hat == 0)).sum())
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom else 0.0
        if f1 > best_f1:
            best_t, best_f1 = t, f1
    return best_t, best_f1


def explicit_inverse_mahalanobis(
    points: np.ndarray, sigma_reg: np.ndarray, query: np.ndarray
):
    """Min over training rows of sqrt((q-p)^T inv(Sigma) (q-p)) via an
    explicit matrix inverse. Returns (value, argmin index)."""
    inv = np.linalg.inv(sigma_reg)
    best_val, best_idx = np.inf, 0
    for i, p in enumerate(points):
        d = query - p
        val = float(np.sqrt(d @ inv @ d))
        if val < best_val:
            best_val, best_idx = val, i
    return best_val, best_idx


def choquet_direct(
    whitened_diff: np.ndarray, weights: np.ndarray
) -> float:
    """Sort-and-dot aggregation of squared per-dimension contributions."""
    contributions = sorted((float(v) ** 2 for v in whitened_diff), reverse=True)
    d = len(contributions)
    return float(
        np.sqrt(d * sum(w * c for w, c in zip(weights, contributions)))
    )


def pearson_two_pass(a: np.ndarray, b: np.ndarray) -> float:
    """Textbook two-pass Pearson formula."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    am, bm = a.mean(), b.mean()
    num = float(((a - am) * (b - bm)).sum())
    den = float(np.sqrt(((a - am) ** 2).sum() * ((b - bm) ** 2).sum()))
    return num / den
