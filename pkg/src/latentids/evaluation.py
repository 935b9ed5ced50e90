"""Pipeline evaluation: continuous prediction error, confidence-error
correlation (overall and per confusion cell), the latent-dimension and KL
weight sweeps, the distance-metric comparison, and the latent-vs-feature
space timing study.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from latentids import confidence as conf
from latentids import detector, vae
from latentids.errors import ConfigError, DimensionError, UndefinedCorrelationError
from latentids.ingest import EncodedDataset
from latentids.numcore import pearson_corr
from latentids.vae import VaeConfig, VariationalAutoencoder

logger = logging.getLogger(__name__)

__all__ = [
    "prediction_error",
    "CorrelationReport",
    "correlation_report",
    "EvalOptions",
    "EvalResult",
    "evaluate_model",
    "run_pipeline",
    "SweepRow",
    "latent_dim_sweep",
    "beta_sweep",
    "distance_comparison",
    "timing_comparison",
    "sweep_to_csv",
    "sweep_to_json",
]

KNOWN_METRICS = ("mahalanobis", "euclidean", "cosine", "choquet", "feature_mahalanobis")


def prediction_error(y_true: np.ndarray, re_norm: np.ndarray) -> np.ndarray:
    """Continuous prediction error |y_true - re_norm|.

    re_norm values outside [0, 1] (held-out sets under train-fitted
    normalization) are taken as-is, so the error may exceed 1.
    """
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    re_norm = np.asarray(re_norm, dtype=np.float64).ravel()
    if y_true.shape != re_norm.shape:
        raise DimensionError(
            f"length mismatch: {y_true.shape[0]} vs {re_norm.shape[0]}"
        )
    return np.abs(y_true - re_norm)


@dataclass(frozen=True)
class CorrelationReport:
    """Correlation of confidence with prediction error, overall and per
    confusion cell. ``None`` marks an undefined correlation (fewer than two
    samples or zero variance in the cell)."""

    general_r: float | None
    r_tp: float | None
    r_fp: float | None
    r_tn: float | None
    r_fn: float | None
    counts: dict[str, int]
    latent_dim: int
    beta: float
    metric_kind: str
    seed: int
    method: str = "pearson"

    def cell_r(self, cell: str) -> float | None:
        return getattr(self, f"r_{cell.lower()}")


def _corr_or_none(a: np.ndarray, b: np.ndarray, method: str) -> float | None:
    if a.size < 2:
        return None
    if method == "spearman":
        a, b = rankdata(a), rankdata(b)
    try:
        return pearson_corr(a, b)
    except UndefinedCorrelationError:
        return None


def correlation_report(
    confidences: np.ndarray,
    errors: np.ndarray,
    cells: np.ndarray,
    *,
    latent_dim: int = 0,
    beta: float = 0.0,
    metric_kind: str = "",
    seed: int = 0,
    method: str = "pearson",
) -> CorrelationReport:
    """General and confusion-cell-conditioned correlations."""
    confidences = np.asarray(confidences, dtype=np.float64).ravel()
    errors = np.asarray(errors, dtype=np.float64).ravel()
    cells = np.asarray(cells).ravel()
    if not (confidences.shape == errors.shape == cells.shape):
        raise DimensionError("confidences, errors, cells must be equal length")
    if method not in ("pearson", "spearman"):
        raise ConfigError(f"unknown correlation method {method!r}")

    per_cell: dict[str, float | None] = {}
    counts: dict[str, int] = {}
    for cell in detector.CELL_LABELS:
        mask = cells == cell
        counts[cell] = int(mask.sum())
        per_cell[cell] = _corr_or_none(confidences[mask], errors[mask], method)
    return CorrelationReport(
        general_r=_corr_or_none(confidences, errors, method),
        r_tp=per_cell["TP"],
        r_fp=per_cell["FP"],
        r_tn=per_cell["TN"],
        r_fn=per_cell["FN"],
        counts=counts,
        latent_dim=latent_dim,
        beta=beta,
        metric_kind=metric_kind,
        seed=seed,
        method=method,
    )


@dataclass(frozen=True)
class EvalOptions:
    """Detector and confidence options shared by CLI and sweeps."""

    metrics: tuple[str, ...] = ("mahalanobis",)
    epsilon_scale: float = conf.DEFAULT_EPSILON_SCALE
    owa_weights: tuple[float, ...] | None = None
    rank_metric: str = "mahalanobis"
    normalization_scope: str = "train"
    threshold_override: float | None = None
    correlation_method: str = "pearson"

    def validate(self) -> "EvalOptions":
        for metric in self.metrics:
            if metric not in KNOWN_METRICS:
                raise ConfigError(
                    f"unknown confidence metric {metric!r}; "
                    f"choose from {KNOWN_METRICS}"
                )
        if self.normalization_scope not in ("train", "self"):
            raise ConfigError(
                f"normalization_scope must be 'train' or 'self', "
                f"got {self.normalization_scope!r}"
            )
        if self.threshold_override is not None and not (
            0.0 <= self.threshold_override <= 1.0
        ):
            raise ConfigError(
                f"threshold_override must lie in [0, 1], "
                f"got {self.threshold_override}"
            )
        if self.rank_metric not in ("mahalanobis", "euclidean"):
            raise ConfigError(f"unknown rank_metric {self.rank_metric!r}")
        if self.correlation_method not in ("pearson", "spearman"):
            raise ConfigError(
                f"unknown correlation_method {self.correlation_method!r}"
            )
        return self


@dataclass
class EvalResult:
    """Everything produced by evaluating one trained model on one test set."""

    model: VariationalAutoencoder
    z_train: np.ndarray
    z_test: np.ndarray
    index: conf.LatentIndex
    threshold: detector.ThresholdModel
    detection: detector.DetectionResult
    counts: detector.ConfusionCounts
    metrics: detector.Metrics
    pred_errors: np.ndarray
    confidences: dict[str, tuple[np.ndarray, np.ndarray]]
    reports: dict[str, CorrelationReport]
    wall_seconds: dict[str, float] = field(default_factory=dict)
    train_report: vae.TrainReport | None = None

    def report(self, metric_kind: str) -> CorrelationReport:
        return self.reports[metric_kind]


def _score_metric(
    metric: str,
    index: conf.LatentIndex,
    z_train: np.ndarray,
    z_test: np.ndarray,
    X_train: np.ndarray,
    X_test: np.ndarray,
    options: EvalOptions,
) -> tuple[np.ndarray, np.ndarray, float]:
    t0 = time.perf_counter()
    if metric == "mahalanobis":
        values, idx = conf.mahalanobis_confidence_batch(
            index, z_test, rank_metric=options.rank_metric
        )
    elif metric == "euclidean":
        values, idx = conf.euclidean_confidence_batch(z_train, z_test)
    elif metric == "cosine":
        values, idx = conf.cosine_confidence_batch(z_train, z_test)
    elif metric == "choquet":
        weights = options.owa_weights
        if weights is None:
            weights = np.full(index.dim, 1.0 / index.dim)
        values, idx = conf.choquet_confidence_batch(index, z_test, weights)
    elif metric == "feature_mahalanobis":
        fs_index = conf.build_index(X_train, options.epsilon_scale)
        t0 = time.perf_counter()  # exclude the build from scoring time
        values, idx = conf.mahalanobis_confidence_batch(fs_index, X_test)
    else:
        raise ConfigError(f"unknown confidence metric {metric!r}")
    return values, idx, time.perf_counter() - t0


def evaluate_model(
    model: VariationalAutoencoder,
    train_ds: EncodedDataset,
    test_ds: EncodedDataset,
    options: EvalOptions = EvalOptions(),
) -> EvalResult:
    """Detection + confidence + correlation for an already-trained model.

    The detection threshold is fitted on training errors (F1-optimal) unless
    overridden; with normalization_scope='train' the training min/max also
    scale the test errors, so one threshold applies to both sets.
    """
    options.validate()
    z_train = model.latent_embed(train_ds.X)
    z_test = model.latent_embed(test_ds.X)

    re_train = detector.reconstruction_errors(model, train_ds.X)
    re_test = detector.reconstruction_errors(model, test_ds.X)
    normalizer = detector.ErrorNormalizer.fit(re_train)
    re_train_norm = normalizer.transform(re_train)
    if options.normalization_scope == "train":
        re_test_norm = normalizer.transform(re_test)
    else:
        re_test_norm = detector.normalize_errors(re_test)

    if options.threshold_override is not None:
        threshold = detector.ThresholdModel(
            threshold=options.threshold_override,
            precision=float("nan"),
            recall=float("nan"),
            f1=float("nan"),
            accuracy=float("nan"),
        )
    else:
        threshold = detector.fit_threshold(re_train_norm, train_ds.y)

    y_hat = detector.classify(re_test_norm, threshold.threshold)
    cells = detector.confusion_cells(test_ds.y, y_hat)
    counts, metrics = detector.confusion_and_metrics(test_ds.y, y_hat)
    detection = detector.DetectionResult(
        re=re_test,
        re_norm=re_test_norm,
        y_hat=y_hat,
        y_true=test_ds.y,
        cells=cells,
    )
    pred_errors = prediction_error(test_ds.y, re_test_norm)

    index = conf.build_index(z_train, options.epsilon_scale)
    confidences: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    reports: dict[str, CorrelationReport] = {}
    wall_seconds: dict[str, float] = {}
    for metric in options.metrics:
        values, idx, seconds = _score_metric(
            metric, index, z_train, z_test, train_ds.X, test_ds.X, options
        )
        confidences[metric] = (values, idx)
        wall_seconds[metric] = seconds
        reports[metric] = correlation_report(
            values,
            pred_errors,
            cells,
            latent_dim=model.config.latent_dim,
            beta=model.config.beta,
            metric_kind=metric,
            seed=model.config.seed,
            method=options.correlation_method,
        )
        logger.info(
            "metric %s: general r=%s (%.2fs)",
            metric,
            reports[metric].general_r,
            seconds,
        )
    return EvalResult(
        model=model,
        z_train=z_train,
        z_test=z_test,
        index=index,
        threshold=threshold,
        detection=detection,
        counts=counts,
        metrics=metrics,
        pred_errors=pred_errors,
        confidences=confidences,
        reports=reports,
        wall_seconds=wall_seconds,
    )


def run_pipeline(
    train_ds: EncodedDataset,
    test_ds: EncodedDataset,
    config: VaeConfig,
    options: EvalOptions = EvalOptions(),
) -> EvalResult:
    """Train on ``train_ds`` and evaluate on ``test_ds``."""
    model, train_report = vae.train(train_ds, config)
    result = evaluate_model(model, train_ds, test_ds, options)
    result.train_report = train_report
    return result


# -- sweeps ------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    """One sweep configuration's summary (or its failure)."""

    latent_dim: int
    beta: float
    metric_kind: str
    seed: int
    general_r: float | None = None
    r_fp: float | None = None
    r_fn: float | None = None
    r_tp: float | None = None
    r_tn: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    accuracy: float | None = None
    threshold: float | None = None
    wall_seconds: float | None = None
    error: str | None = None

    @classmethod
    def from_result(
        cls, result: EvalResult, metric_kind: str
    ) -> "SweepRow":
        report = result.reports[metric_kind]
        return cls(
            latent_dim=result.model.config.latent_dim,
            beta=result.model.config.beta,
            metric_kind=metric_kind,
            seed=result.model.config.seed,
            general_r=report.general_r,
            r_fp=report.r_fp,
            r_fn=report.r_fn,
            r_tp=report.r_tp,
            r_tn=report.r_tn,
            precision=result.metrics.precision,
            recall=result.metrics.recall,
            f1=result.metrics.f1,
            accuracy=result.metrics.accuracy,
            threshold=result.threshold.threshold,
            wall_seconds=result.wall_seconds.get(metric_kind),
        )


def _derive_seed(master_seed: int, key: int, policy: str) -> int:
    if policy == "shared":
        return master_seed
    if policy == "per_row":
        return int(
            np.random.SeedSequence([master_seed, key]).generate_state(1)[0]
        )
    raise ConfigError(f"unknown seed_policy {policy!r}")


def _sweep(
    train_ds: EncodedDataset,
    test_ds: EncodedDataset,
    configs: list[VaeConfig],
    options: EvalOptions,
    metric_kind: str,
    threads: int = 1,
) -> list[SweepRow]:
    def one(config: VaeConfig) -> SweepRow:
        try:
            result = run_pipeline(train_ds, test_ds, config, options)
            return SweepRow.from_result(result, metric_kind)
        except Exception as exc:  # keep other rows alive
            logger.warning("sweep row failed: %s", exc)
            return SweepRow(
                latent_dim=config.latent_dim,
                beta=config.beta,
                metric_kind=metric_kind,
                seed=config.seed,
                error=f"{type(exc).__name__}: {exc}",
            )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, configs))
    return [one(config) for config in configs]


def latent_dim_sweep(
    train_ds: EncodedDataset,
    test_ds: EncodedDataset,
    dims: list[int],
    beta: float,
    base_config: VaeConfig,
    options: EvalOptions = EvalOptions(),
    seed_policy: str = "shared",
    threads: int = 1,
) -> list[SweepRow]:
    """Full pipeline per latent dimension at a fixed KL weight.

    Rows keep the swept order; a failed row records its error and the sweep
    continues.
    """
    if not dims:
        raise ConfigError("latent-dim sweep needs a non-empty dim list")
    metric = options.metrics[0]
    configs = [
        _row_config(base_config, latent_dim=dim, beta=beta,
                    seed=_derive_seed(base_config.seed, i, seed_policy))
        for i, dim in enumerate(dims)
    ]
    return _sweep(train_ds, test_ds, configs, options, metric, threads)


def beta_sweep(
    train_ds: EncodedDataset,
    test_ds: EncodedDataset,
    betas: list[float],
    latent_dim: int,
    base_config: VaeConfig,
    options: EvalOptions = EvalOptions(),
    seed_policy: str = "shared",
    threads: int = 1,
) -> list[SweepRow]:
    """Full pipeline per KL weight at a fixed latent dimension."""
    if not betas:
        raise ConfigError("beta sweep needs a non-empty beta list")
    metric = options.metrics[0]
    configs = [
        _row_config(base_config, latent_dim=latent_dim, beta=beta,
                    seed=_derive_seed(base_config.seed, i, seed_policy))
        for i, beta in enumerate(betas)
    ]
    return _sweep(train_ds, test_ds, configs, options, metric, threads)


def _row_config(
    base: VaeConfig, latent_dim: int, beta: float, seed: int
) -> VaeConfig:
    # Not validated here: a bad row must fail inside the sweep and be
    # recorded on its own row, not abort the whole table.
    doc = dict(base.__dict__)
    doc.update(latent_dim=latent_dim, beta=beta, seed=seed)
    return VaeConfig(**doc)


def distance_comparison(
    result: EvalResult,
    metrics: tuple[str, ...] = ("mahalanobis", "euclidean", "cosine"),
    options: EvalOptions = EvalOptions(),
) -> list[SweepRow]:
    """One correlation report per distance metric on the same trained model
    and embeddings."""
    rows = []
    for metric in metrics:
        if metric == "feature_mahalanobis" and metric not in result.confidences:
            raise ConfigError(
                "feature_mahalanobis needs the encoded matrices; request it "
                "via EvalOptions.metrics in evaluate_model instead"
            )
        if metric not in result.confidences:
            values, idx, seconds = _score_metric(
                metric,
                result.index,
                result.z_train,
                result.z_test,
                np.empty((0, 0)),
                np.empty((0, 0)),
                options,
            )
            result.confidences[metric] = (values, idx)
            result.wall_seconds[metric] = seconds
            result.reports[metric] = correlation_report(
                values,
                result.pred_errors,
                result.detection.cells,
                latent_dim=result.model.config.latent_dim,
                beta=result.model.config.beta,
                metric_kind=metric,
                seed=result.model.config.seed,
                method=options.correlation_method,
            )
        rows.append(SweepRow.from_result(result, metric))
    return rows


def timing_comparison(
    X_train: np.ndarray,
    X_test: np.ndarray,
    z_train: np.ndarray,
    z_test: np.ndarray,
    epsilon_scale: float = conf.DEFAULT_EPSILON_SCALE,
) -> tuple[float, float]:
    """Wall-clock seconds to Mahalanobis-score the test set in latent space
    versus feature space on the same hardware. Index builds are excluded:
    this times scoring."""
    ls_index = conf.build_index(z_train, epsilon_scale)
    fs_index = conf.build_index(X_train, epsilon_scale)
    _, _, ls_seconds = conf.score_batch_timed(ls_index, z_test)
    _, _, fs_seconds = conf.score_batch_timed(fs_index, X_test)
    return ls_seconds, fs_seconds


# -- report serialization ----------------------------------------------------


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.17g}"


def sweep_to_csv(rows: list[SweepRow], path: str | Path) -> None:
    lines = [
        "dim,beta,metric,general_r,r_fp,r_fn,r_tp,r_tn,"
        "precision,recall,f1,accuracy,threshold,wall_seconds,error"
    ]
    for row in rows:
        lines.append(
            ",".join(
                [
                    str(row.latent_dim),
                    f"{row.beta:.17g}",
                    row.metric_kind,
                    _fmt(row.general_r),
                    _fmt(row.r_fp),
                    _fmt(row.r_fn),
                    _fmt(row.r_tp),
                    _fmt(row.r_tn),
                    _fmt(row.precision),
                    _fmt(row.recall),
                    _fmt(row.f1),
                    _fmt(row.accuracy),
                    _fmt(row.threshold),
                    _fmt(row.wall_seconds),
                    row.error or "",
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def sweep_to_json(
    rows: list[SweepRow], path: str | Path, config_doc: dict | None = None
) -> None:
    doc = {
        "config": config_doc or {},
        "rows": [dict(row.__dict__) for row in rows],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
