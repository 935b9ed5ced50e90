"""Command-line entry point: train / evaluate / sweep.

Configuration is a JSON document mirroring RunConfig; unknown keys are
rejected so typos fail loudly. Every command writes ``run_config.json``
(the exact resolved config plus seed) beside its artifacts. Data paths
resolve against the IDS_DATA_DIR environment variable when not found as
given. Errors exit nonzero after printing a one-line JSON error record to
stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from latentids import confidence as conf
from latentids import evaluation, ingest, vae
from latentids.errors import ConfigError, LatentIdsError
from latentids.evaluation import EvalOptions
from latentids.vae import VaeConfig

logger = logging.getLogger(__name__)

__all__ = ["RunConfig", "main", "cmd_train", "cmd_evaluate", "cmd_sweep"]


@dataclass
class RunConfig:
    """Full run configuration; serialized into every output directory."""

    train_file: str = "KDDTrain+.txt"
    test_file: str = "KDDTest+.txt"
    output_dir: str = "out"
    checkpoint_file: str | None = None  # default: <output_dir>/checkpoint.npz
    preprocessor_file: str | None = None  # default: <output_dir>/preprocessor.json

    # model / training
    latent_dim: int = 20
    beta: float = 0.25
    hidden_dims: list[int] = field(default_factory=lambda: [512, 384, 256, 128])
    epochs: int = 30
    base_lr: float = 0.001
    batch_size: int = 128
    seed: int = 0
    lr_step_size: int = 10
    lr_gamma: float = 0.1
    train_scope: str = "all"

    # detector
    normalization_scope: str = "train"
    threshold_override: float | None = None

    # confidence
    metrics: list[str] = field(default_factory=lambda: ["mahalanobis"])
    epsilon_scale: float = conf.DEFAULT_EPSILON_SCALE
    owa_weights: list[float] | None = None
    rank_metric: str = "mahalanobis"
    correlation_method: str = "pearson"

    # sweeps
    latent_dim_grid: list[int] = field(default_factory=list)
    beta_grid: list[float] = field(default_factory=list)
    sweep_fixed_beta: float = 1.0
    sweep_fixed_latent_dim: int = 20
    seed_policy: str = "shared"

    @classmethod
    def from_json_file(cls, path: str | Path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        known = set(cls().__dict__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(
                f"unknown config keys: {sorted(unknown)}; known keys are "
                f"{sorted(known)}"
            )
        return cls(**doc)

    def vae_config(self, input_dim: int) -> VaeConfig:
        return VaeConfig(
            input_dim=input_dim,
            latent_dim=self.latent_dim,
            beta=self.beta,
            hidden_dims=tuple(self.hidden_dims),
            epochs=self.epochs,
            base_lr=self.base_lr,
            batch_size=self.batch_size,
            seed=self.seed,
            lr_step_size=self.lr_step_size,
            lr_gamma=self.lr_gamma,
            train_scope=self.train_scope,
        ).validate()

    def eval_options(self) -> EvalOptions:
        return EvalOptions(
            metrics=tuple(self.metrics),
            epsilon_scale=self.epsilon_scale,
            owa_weights=tuple(self.owa_weights) if self.owa_weights else None,
            rank_metric=self.rank_metric,
            normalization_scope=self.normalization_scope,
            threshold_override=self.threshold_override,
            correlation_method=self.correlation_method,
        ).validate()

    def resolved_checkpoint(self) -> Path:
        return Path(self.checkpoint_file or Path(self.output_dir) / "checkpoint.npz")

    def resolved_preprocessor(self) -> Path:
        return Path(
            self.preprocessor_file or Path(self.output_dir) / "preprocessor.json"
        )


def _resolve_data_path(path_str: str) -> Path:
    """A path as given, else under IDS_DATA_DIR, else error naming it."""
    path = Path(path_str)
    if path.exists():
        return path
    data_dir = os.environ.get("IDS_DATA_DIR")
    if data_dir:
        candidate = Path(data_dir) / path_str
        if candidate.exists():
            return candidate
    raise ConfigError(
        f"data file not found: {path_str}"
        + (f" (also tried under IDS_DATA_DIR={data_dir})" if data_dir else "")
    )


def _load_dataset(
    path_str: str, state: ingest.PreprocessorState
) -> ingest.EncodedDataset:
    records = ingest.load_records(_resolve_data_path(path_str))
    return ingest.transform(records, state)


def _write_run_config(config: RunConfig, out_dir: Path) -> None:
    (out_dir / "run_config.json").write_text(
        json.dumps(asdict(config), indent=2) + "\n"
    )


def _verify_written(*paths: Path) -> None:
    """Exit-code contract: success means every artifact exists, non-empty."""
    for path in paths:
        if not path.exists() or path.stat().st_size == 0:
            raise LatentIdsError(f"artifact missing or empty: {path}")


def cmd_train(config: RunConfig) -> int:
    """Fit the preprocessor, train the model, write the three artifacts:
    checkpoint.npz, preprocessor.json, train_losses.csv."""
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = ingest.load_records(_resolve_data_path(config.train_file))
    state = ingest.fit_preprocessor(records)
    train_ds = ingest.transform(records, state)
    logger.info(
        "training on %d records, %d encoded columns",
        train_ds.n_samples,
        train_ds.X.shape[1],
    )
    model, report = vae.train(train_ds, config.vae_config(train_ds.X.shape[1]))

    vae.save_checkpoint(model, config.resolved_checkpoint())
    state.save(config.resolved_preprocessor())
    report.to_csv(out_dir / "train_losses.csv")
    _write_run_config(config, out_dir)
    _verify_written(
        config.resolved_checkpoint(),
        config.resolved_preprocessor(),
        out_dir / "train_losses.csv",
    )
    return 0


def _report_doc(report: evaluation.CorrelationReport) -> dict:
    return dict(report.__dict__)


def cmd_evaluate(config: RunConfig) -> int:
    """Score the test set with a trained checkpoint and emit per-sample
    artifacts: detection.csv, confidence.csv, correlations.json, and
    latent_coords.csv (raw embeddings of both sets, for external plotting).
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = ingest.PreprocessorState.load(config.resolved_preprocessor())
    model = vae.load_checkpoint(config.resolved_checkpoint(), preprocessor=state)
    train_ds = _load_dataset(config.train_file, state)
    test_ds = _load_dataset(config.test_file, state)

    result = evaluation.evaluate_model(
        model, train_ds, test_ds, config.eval_options()
    )

    result.detection.to_csv(out_dir / "detection.csv")
    conf.scores_to_csv(out_dir / "confidence.csv", result.confidences)
    _write_latent_coords(out_dir / "latent_coords.csv", result)

    summary = {
        "threshold": result.threshold.threshold,
        "precision": result.metrics.precision,
        "recall": result.metrics.recall,
        "f1": result.metrics.f1,
        "accuracy": result.metrics.accuracy,
        "confusion": {
            "tp": result.counts.tp,
            "fp": result.counts.fp,
            "tn": result.counts.tn,
            "fn": result.counts.fn,
        },
        "correlations": {
            metric: _report_doc(report)
            for metric, report in result.reports.items()
        },
        "scoring_wall_seconds": result.wall_seconds,
        "config": asdict(config),
    }
    (out_dir / "correlations.json").write_text(
        json.dumps(summary, indent=2) + "\n"
    )
    _write_run_config(config, out_dir)
    _verify_written(
        out_dir / "detection.csv",
        out_dir / "confidence.csv",
        out_dir / "correlations.json",
        out_dir / "latent_coords.csv",
    )
    return 0


def _write_latent_coords(path: Path, result: evaluation.EvalResult) -> None:
    dim = result.z_train.shape[1]
    header = "set,sample_index," + ",".join(f"z{i}" for i in range(dim))
    lines = [header]
    for name, Z in (("train", result.z_train), ("test", result.z_test)):
        for i in range(Z.shape[0]):
            coords = ",".join(f"{v:.17g}" for v in Z[i])
            lines.append(f"{name},{i},{coords}")
    path.write_text("\n".join(lines) + "\n")


def _row_cache_key(kind: str, value: int | float) -> str:
    return f"{kind}_{value:.17g}" if isinstance(value, float) else f"{kind}_{value}"


def _sweep_with_cache(
    kind: str,
    values: list,
    run_row,
    cache_dir: Path,
    resume: bool,
    threads: int = 1,
) -> list[evaluation.SweepRow]:
    """Run one pipeline per grid value, reusing cached rows under --resume.

    Uncached rows may run concurrently (each owns its model); the returned
    list always follows the grid order.
    """
    done: dict[int, evaluation.SweepRow] = {}
    pending: list[tuple[int, object, Path]] = []
    for pos, value in enumerate(values):
        cache_file = cache_dir / (_row_cache_key(kind, value) + ".json")
        if resume and cache_file.exists():
            logger.info("sweep row %s: loaded from cache", cache_file.stem)
            done[pos] = evaluation.SweepRow(**json.loads(cache_file.read_text()))
        else:
            pending.append((pos, value, cache_file))

    def compute(job):
        pos, value, cache_file = job
        row = run_row(value)
        cache_file.write_text(json.dumps(dict(row.__dict__)) + "\n")
        return pos, row

    if threads > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for pos, row in pool.map(compute, pending):
                done[pos] = row
    else:
        for job in pending:
            pos, row = compute(job)
            done[pos] = row
    return [done[pos] for pos in range(len(values))]


def cmd_sweep(config: RunConfig, threads: int = 1, resume: bool = False) -> int:
    """Run the configured latent-dim and/or beta grids, one pipeline per
    row; completed rows are cached and reused with --resume."""
    if not config.latent_dim_grid and not config.beta_grid:
        raise ConfigError(
            "sweep needs a non-empty latent_dim_grid or beta_grid"
        )
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = out_dir / "sweep_cache"
    cache_dir.mkdir(exist_ok=True)

    records = ingest.load_records(_resolve_data_path(config.train_file))
    state = ingest.fit_preprocessor(records)
    train_ds = ingest.transform(records, state)
    test_ds = _load_dataset(config.test_file, state)
    base = config.vae_config(train_ds.X.shape[1])
    options = config.eval_options()

    if config.latent_dim_grid:
        def run_dim_row(dim: int) -> evaluation.SweepRow:
            return evaluation.latent_dim_sweep(
                train_ds, test_ds, [dim], config.sweep_fixed_beta, base,
                options, config.seed_policy,
            )[0]

        rows = _sweep_with_cache(
            "dim", config.latent_dim_grid, run_dim_row, cache_dir, resume,
            threads,
        )
        evaluation.sweep_to_csv(rows, out_dir / "sweep_latent.csv")
        evaluation.sweep_to_json(
            rows, out_dir / "sweep_latent.json", asdict(config)
        )

    if config.beta_grid:
        def run_beta_row(beta: float) -> evaluation.SweepRow:
            return evaluation.beta_sweep(
                train_ds, test_ds, [beta], config.sweep_fixed_latent_dim, base,
                options, config.seed_policy,
            )[0]

        rows = _sweep_with_cache(
            "beta", config.beta_grid, run_beta_row, cache_dir, resume,
            threads,
        )
        evaluation.sweep_to_csv(rows, out_dir / "sweep_beta.csv")
        evaluation.sweep_to_json(
            rows, out_dir / "sweep_beta.json", asdict(config)
        )

    _write_run_config(config, out_dir)
    expected = []
    if config.latent_dim_grid:
        expected += [out_dir / "sweep_latent.csv", out_dir / "sweep_latent.json"]
    if config.beta_grid:
        expected += [out_dir / "sweep_beta.csv", out_dir / "sweep_beta.json"]
    _verify_written(*expected)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentids",
        description=(
            "VAE-based intrusion detection on NSL-KDD with latent-space "
            "confidence scoring"
        ),
    )
    parser.add_argument("--config", type=str, help="path to a JSON run config")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", type=str, help="override the output directory")
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="worker parallelism cap for sweep rows (default 1)",
    )
    parser.add_argument(
        "--resume",
        action="store_true",
        help="reuse completed sweep rows from the cache",
    )
    parser.add_argument(
        "command", choices=["train", "evaluate", "sweep"], help="what to run"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(name)s %(message)s"
    )
    args = _build_parser().parse_args(argv)
    try:
        config = (
            RunConfig.from_json_file(args.config) if args.config else RunConfig()
        )
        if args.seed is not None:
            config.seed = args.seed
        if args.out is not None:
            config.output_dir = args.out
        if args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")

        if args.command == "train":
            return cmd_train(config)
        if args.command == "evaluate":
            return cmd_evaluate(config)
        return cmd_sweep(config, threads=args.threads, resume=args.resume)
    except (LatentIdsError, OSError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
