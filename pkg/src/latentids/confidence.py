"""Per-sample confidence scores: distance from a query embedding to its
nearest training embedding.

The primary metric is the Mahalanobis distance under the (regularized)
training covariance, computed by whitening everything once with the
covariance's Cholesky factor and running a plain Euclidean nearest-neighbor
scan in whitened space; the two are mathematically identical. Euclidean,
cosine, feature-space, and OWA-weighted (Choquet) variants share the same
machinery. Low score = the query sits close to training data = trustworthy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from latentids import kernels, numcore
from latentids.errors import (
    CompatibilityError,
    ConfigError,
    DimensionError,
    UndefinedAngleError,
)

__all__ = [
    "LatentIndex",
    "ConfidenceScore",
    "build_index",
    "index_from_covariance",
    "whiten",
    "mahalanobis_confidence",
    "mahalanobis_confidence_batch",
    "euclidean_confidence",
    "euclidean_confidence_batch",
    "cosine_confidence",
    "cosine_confidence_batch",
    "feature_space_confidence",
    "score_batch_timed",
    "choquet_confidence",
    "choquet_confidence_batch",
    "validate_owa_weights",
    "save_index",
    "load_index",
    "scores_to_csv",
]

DEFAULT_EPSILON_SCALE = 1e-6
INDEX_FORMAT_VERSION = 1

_COSINE_QUERY_BLOCK = 256
_COSINE_REF_BLOCK = 8192


@dataclass(frozen=True)
class LatentIndex:
    """Immutable search structure over training embeddings.

    Holds the raw points, their mean, the regularized covariance with its
    Cholesky factor, and the whitened copies (rows of L^-1 (z - mean)) the
    nearest-neighbor scan runs on.
    """

    points: np.ndarray
    mean: np.ndarray
    sigma_reg: np.ndarray
    L: np.ndarray
    whitened: np.ndarray
    epsilon_used: float

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class ConfidenceScore:
    """A single query's confidence value and its nearest training row."""

    value: float
    nn_index: int
    metric_kind: str


def index_from_covariance(
    points: np.ndarray,
    sigma_reg: np.ndarray,
    mean: np.ndarray | None = None,
    epsilon_used: float = 0.0,
) -> LatentIndex:
    """Build an index from an explicitly supplied regularized covariance."""
    points = numcore.as_matrix(points, "points")
    sigma_reg = numcore.as_matrix(sigma_reg, "sigma_reg")
    if mean is None:
        mean = points.mean(axis=0)
    L = numcore.cholesky(sigma_reg)
    whitened = np.ascontiguousarray(
        numcore.solve_lower(L, (points - mean).T).T
    )
    return LatentIndex(
        points=points,
        mean=np.asarray(mean, dtype=np.float64),
        sigma_reg=sigma_reg,
        L=L,
        whitened=whitened,
        epsilon_used=epsilon_used,
    )


def build_index(
    points: np.ndarray, epsilon_scale: float = DEFAULT_EPSILON_SCALE
) -> LatentIndex:
    """Covariance + ridge, Cholesky factor, and whitened training rows.

    The ridge is epsilon_scale * trace(Sigma)/d, switching to an absolute
    epsilon_scale when the covariance is exactly zero (identical rows), so
    degenerate inputs still produce a valid index.

    Raises:
        NotPositiveDefiniteError: Cholesky failed even after regularization;
            the message reports the smallest eigenvalue.
    """
    points = numcore.check_finite(
        numcore.as_matrix(points, "points"), "index points"
    )
    if epsilon_scale < 0:
        raise ConfigError(f"epsilon_scale must be >= 0, got {epsilon_scale}")
    sigma = numcore.covariance(points)
    d = sigma.shape[0]
    scale_base = float(np.trace(sigma)) / d
    epsilon = epsilon_scale * (scale_base if scale_base > 0.0 else 1.0)
    sigma_reg = sigma + epsilon * np.eye(d)
    return index_from_covariance(
        points, sigma_reg, mean=points.mean(axis=0), epsilon_used=epsilon
    )


def whiten(index: LatentIndex, Z: np.ndarray) -> np.ndarray:
    """Map rows of Z through L^-1 (z - mean)."""
    Z = numcore.as_matrix(Z, "Z")
    if Z.shape[1] != index.dim:
        raise DimensionError(
            f"queries have dim {Z.shape[1]}, index has dim {index.dim}"
        )
    if Z.shape[0] == 0:
        return Z.copy()
    return np.ascontiguousarray(numcore.solve_lower(index.L, (Z - index.mean).T).T)


def mahalanobis_confidence_batch(
    index: LatentIndex,
    Z_queries: np.ndarray,
    rank_metric: str = "mahalanobis",
) -> tuple[np.ndarray, np.ndarray]:
    """Mahalanobis distance from each query to its nearest training row.

    rank_metric picks how the neighbor is chosen: "mahalanobis" searches in
    whitened space (the reported distance is the minimized quantity);
    "euclidean" picks the plain-Euclidean neighbor first and reports the
    Mahalanobis distance to it. Ties go to the lowest training index.

    Returns:
        (values (q,), nn_indices (q,)).
    """
    W_q = whiten(index, Z_queries)
    if W_q.shape[0] == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    if rank_metric == "mahalanobis":
        idx, d2 = kernels.nearest_neighbor(index.whitened, W_q)
        return np.sqrt(d2), idx
    if rank_metric == "euclidean":
        idx, _ = kernels.nearest_neighbor(
            index.points, numcore.as_matrix(Z_queries, "Z")
        )
        diff = W_q - index.whitened[idx]
        return np.sqrt(np.einsum("ij,ij->i", diff, diff)), idx
    raise ConfigError(
        f"rank_metric must be 'mahalanobis' or 'euclidean', got {rank_metric!r}"
    )


def mahalanobis_confidence(
    index: LatentIndex, z_query: np.ndarray, rank_metric: str = "mahalanobis"
) -> ConfidenceScore:
    values, idx = mahalanobis_confidence_batch(
        index, np.atleast_2d(np.asarray(z_query, dtype=np.float64)), rank_metric
    )
    return ConfidenceScore(
        value=float(values[0]), nn_index=int(idx[0]), metric_kind="mahalanobis"
    )


def euclidean_confidence_batch(
    Z_train: np.ndarray, Z_queries: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Plain Euclidean distance to the nearest training row."""
    Z_train = numcore.as_matrix(Z_train, "Z_train")
    Z_queries = numcore.as_matrix(Z_queries, "Z_queries")
    if Z_queries.shape[0] == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    idx, d2 = kernels.nearest_neighbor(Z_train, Z_queries)
    return np.sqrt(d2), idx


def euclidean_confidence(
    Z_train: np.ndarray, z_query: np.ndarray
) -> ConfidenceScore:
    values, idx = euclidean_confidence_batch(
        Z_train, np.atleast_2d(np.asarray(z_query, dtype=np.float64))
    )
    return ConfidenceScore(
        value=float(values[0]), nn_index=int(idx[0]), metric_kind="euclidean"
    )


def cosine_confidence_batch(
    Z_train: np.ndarray, Z_queries: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """1 - max cosine similarity against the training rows.

    Raises:
        UndefinedAngleError: any compared vector has zero norm.
    """
    Z_train = numcore.as_matrix(Z_train, "Z_train")
    Z_queries = numcore.as_matrix(Z_queries, "Z_queries")
    if Z_queries.shape[1] != Z_train.shape[1]:
        raise DimensionError(
            f"queries have dim {Z_queries.shape[1]}, "
            f"training rows have dim {Z_train.shape[1]}"
        )
    train_norms = np.linalg.norm(Z_train, axis=1)
    if np.any(train_norms == 0.0):
        raise UndefinedAngleError("zero-norm training vector")
    unit_train = Z_train / train_norms[:, None]

    n = Z_train.shape[0]
    q = Z_queries.shape[0]
    values = np.empty(q)
    indices = np.empty(q, dtype=np.int64)
    # Blocked over both sides to bound the similarity matrix; strict '>'
    # updates keep the lowest training index on ties.
    for qs in range(0, q, _COSINE_QUERY_BLOCK):
        qe = min(qs + _COSINE_QUERY_BLOCK, q)
        block = Z_queries[qs:qe]
        norms = np.linalg.norm(block, axis=1)
        if np.any(norms == 0.0):
            raise UndefinedAngleError("zero-norm query vector")
        unit_block = block / norms[:, None]
        best_sim = np.full(qe - qs, -np.inf)
        best_idx = np.zeros(qe - qs, dtype=np.int64)
        for rs in range(0, n, _COSINE_REF_BLOCK):
            re_ = min(rs + _COSINE_REF_BLOCK, n)
            sims = unit_block @ unit_train[rs:re_].T
            local = np.argmax(sims, axis=1)
            local_sim = sims[np.arange(qe - qs), local]
            better = local_sim > best_sim
            best_sim[better] = local_sim[better]
            best_idx[better] = local[better] + rs
        indices[qs:qe] = best_idx
        values[qs:qe] = 1.0 - best_sim
    return values, indices


def cosine_confidence(
    Z_train: np.ndarray, z_query: np.ndarray
) -> ConfidenceScore:
    values, idx = cosine_confidence_batch(
        Z_train, np.atleast_2d(np.asarray(z_query, dtype=np.float64))
    )
    return ConfidenceScore(
        value=float(values[0]), nn_index=int(idx[0]), metric_kind="cosine"
    )


def score_batch_timed(
    index: LatentIndex, queries: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float]:
    """Mahalanobis-score a batch and report the wall-clock seconds spent."""
    t0 = time.perf_counter()
    values, idx = mahalanobis_confidence_batch(index, queries)
    return values, idx, time.perf_counter() - t0


def feature_space_confidence(
    X_train: np.ndarray,
    x_query: np.ndarray,
    epsilon_scale: float = DEFAULT_EPSILON_SCALE,
) -> ConfidenceScore:
    """Mahalanobis NN confidence computed on encoded feature vectors.

    Identical pipeline to the latent-space score, just in the (much wider,
    near-rank-deficient) feature space; the ridge keeps one-hot blocks
    invertible. Building the index per call is wasteful for batches: use
    ``build_index`` once plus ``score_batch_timed`` instead.
    """
    index = build_index(X_train, epsilon_scale)
    values, idx = mahalanobis_confidence_batch(
        index, np.atleast_2d(np.asarray(x_query, dtype=np.float64))
    )
    return ConfidenceScore(
        value=float(values[0]),
        nn_index=int(idx[0]),
        metric_kind="feature_mahalanobis",
    )


def validate_owa_weights(weights: np.ndarray, dim: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.shape[0] != dim:
        raise ConfigError(
            f"owa_weights must have length {dim}, got {weights.shape[0]}"
        )
    if np.any(weights < 0):
        raise ConfigError("owa_weights must be nonnegative")
    if abs(float(weights.sum()) - 1.0) > 1e-9:
        raise ConfigError(f"owa_weights must sum to 1, got {weights.sum()!r}")
    return weights


def choquet_confidence_batch(
    index: LatentIndex, Z_queries: np.ndarray, owa_weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """OWA-weighted aggregation of per-dimension squared whitened
    contributions to the Mahalanobis-nearest neighbor.

    Contributions sort in descending order and aggregate as
    sqrt(d * sum_i w_i * c_(i)): a Choquet integral for the symmetric fuzzy
    measure the weights induce. Uniform weights recover the Mahalanobis
    distance exactly.
    """
    weights = validate_owa_weights(owa_weights, index.dim)
    W_q = whiten(index, Z_queries)
    if W_q.shape[0] == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    idx, _ = kernels.nearest_neighbor(index.whitened, W_q)
    contrib = (W_q - index.whitened[idx]) ** 2
    contrib.sort(axis=1)
    sorted_desc = contrib[:, ::-1]
    values = np.sqrt(index.dim * (sorted_desc @ weights))
    return values, idx


def choquet_confidence(
    index: LatentIndex, z_query: np.ndarray, owa_weights: np.ndarray
) -> ConfidenceScore:
    values, idx = choquet_confidence_batch(
        index, np.atleast_2d(np.asarray(z_query, dtype=np.float64)), owa_weights
    )
    return ConfidenceScore(
        value=float(values[0]), nn_index=int(idx[0]), metric_kind="choquet"
    )


def save_index(index: LatentIndex, path: str | Path) -> None:
    """Versioned .npz artifact; whitened rows are re-derived on load."""
    np.savez(
        path,
        format_version=np.int64(INDEX_FORMAT_VERSION),
        epsilon_used=np.float64(index.epsilon_used),
        mean=index.mean,
        sigma_reg=index.sigma_reg,
        L=index.L,
        points=index.points,
    )


def load_index(path: str | Path) -> LatentIndex:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != INDEX_FORMAT_VERSION:
            raise CompatibilityError(
                f"unsupported index format_version {version}"
            )
        points = data["points"]
        mean = data["mean"]
        L = data["L"]
        whitened = np.ascontiguousarray(
            numcore.solve_lower(L, (points - mean).T).T
        )
        return LatentIndex(
            points=points,
            mean=mean,
            sigma_reg=data["sigma_reg"],
            L=L,
            whitened=whitened,
            epsilon_used=float(data["epsilon_used"]),
        )


def scores_to_csv(
    path: str | Path, scores: dict[str, tuple[np.ndarray, np.ndarray]]
) -> None:
    """Long-form CSV: sample_index, metric_kind, value, nn_index."""
    lines = ["sample_index,metric_kind,value,nn_index"]
    for metric_kind, (values, nn_indices) in scores.items():
        for i in range(values.shape[0]):
            lines.append(
                f"{i},{metric_kind},{values[i]:.17g},{int(nn_indices[i])}"
            )
    Path(path).write_text("\n".join(lines) + "\n")
