"""Variational autoencoder: five-layer encoder/decoder MLPs, the
beta-weighted training objective, the mini-batch training loop, and
deterministic latent embedding for downstream scoring.

Encoder: input -> 512 -> 384 -> 256 -> 128 (ReLU each) -> linear head of
width 2*latent_dim, split into mu | logvar. Decoder mirrors it:
latent -> 128 -> 256 -> 384 -> 512 (ReLU each) -> linear output of input
width (no output activation; inputs are scaled but not strictly bounded on
held-out data). Hidden widths are configurable for small test models but
always four entries.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from latentids import numcore
from latentids.errors import (
    CompatibilityError,
    ConfigError,
    DimensionError,
    TrainingDivergedError,
)
from latentids.ingest import EncodedDataset, PreprocessorState
from latentids.numcore import (
    Adam,
    LinearLayer,
    LrSchedule,
    Relu,
    RngStream,
    gaussian_kl,
    mse_loss,
    reparameterize_backward,
)

logger = logging.getLogger(__name__)

__all__ = [
    "VaeConfig",
    "VariationalAutoencoder",
    "TrainReport",
    "loss_components",
    "train",
    "expected_param_count",
    "save_checkpoint",
    "load_checkpoint",
]

DEFAULT_HIDDEN_DIMS = (512, 384, 256, 128)
CHECKPOINT_FORMAT_VERSION = 1

# Derivation keys for per-epoch child RNG streams.
_SHUFFLE_KEY = 1
_NOISE_KEY = 2

_EMBED_BLOCK = 4096


@dataclass(frozen=True)
class VaeConfig:
    """Architecture and training hyperparameters.

    ``train_scope`` selects which records train the model: "all" uses the
    full (unlabeled) training set, "normal_only" filters to label-0 rows.
    """

    input_dim: int
    latent_dim: int
    beta: float = 0.25
    hidden_dims: tuple[int, int, int, int] = DEFAULT_HIDDEN_DIMS
    epochs: int = 30
    base_lr: float = 0.001
    batch_size: int = 128
    seed: int = 0
    lr_step_size: int = 10
    lr_gamma: float = 0.1
    train_scope: str = "all"

    def validate(self) -> "VaeConfig":
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if len(self.hidden_dims) != 4:
            raise ConfigError(
                f"hidden_dims must have exactly 4 entries, got {self.hidden_dims}"
            )
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden_dims must be positive: {self.hidden_dims}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_step_size < 1:
            raise ConfigError(
                f"lr_step_size must be >= 1, got {self.lr_step_size}"
            )
        if self.lr_gamma <= 0:
            raise ConfigError(f"lr_gamma must be > 0, got {self.lr_gamma}")
        if self.train_scope not in ("all", "normal_only"):
            raise ConfigError(
                f"train_scope must be 'all' or 'normal_only', "
                f"got {self.train_scope!r}"
            )
        return self

    def to_json(self) -> str:
        doc = dict(self.__dict__)
        doc["hidden_dims"] = list(self.hidden_dims)
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "VaeConfig":
        doc = json.loads(text)
        doc["hidden_dims"] = tuple(doc["hidden_dims"])
        return cls(**doc).validate()


def expected_param_count(
    input_dim: int,
    latent_dim: int,
    hidden_dims: tuple[int, int, int, int] = DEFAULT_HIDDEN_DIMS,
) -> int:
    """Exact number of trainable scalars for a given architecture."""
    h1, h2, h3, h4 = hidden_dims
    enc_dims = [input_dim, h1, h2, h3, h4, 2 * latent_dim]
    dec_dims = [latent_dim, h4, h3, h2, h1, input_dim]
    count = 0
    for dims in (enc_dims, dec_dims):
        for a, b in zip(dims, dims[1:]):
            count += a * b + b
    return count


class VariationalAutoencoder:
    """Model parameters plus forward/backward plumbing.

    The caching ``_*_train`` paths are used by the training loop only and
    mutate per-layer caches; ``encode``/``decode``/``latent_embed`` use the
    pure apply paths and are safe to call concurrently on a trained model.
    """

    def __init__(self, config: VaeConfig) -> None:
        config.validate()
        self.config = config
        rng = RngStream(config.seed)
        dims = [config.input_dim, *config.hidden_dims]
        self.enc_layers = [
            LinearLayer(a, b, rng) for a, b in zip(dims, dims[1:])
        ]
        self.enc_acts = [Relu() for _ in self.enc_layers]
        self.enc_head = LinearLayer(dims[-1], 2 * config.latent_dim, rng)
        dec_dims = [config.latent_dim, *reversed(config.hidden_dims)]
        self.dec_layers = [
            LinearLayer(a, b, rng) for a, b in zip(dec_dims, dec_dims[1:])
        ]
        self.dec_acts = [Relu() for _ in self.dec_layers]
        self.dec_out = LinearLayer(dec_dims[-1], config.input_dim, rng)
        self._logvar_mask: np.ndarray | None = None

    # -- parameter access ------------------------------------------------

    def _layers(self) -> list[LinearLayer]:
        return [*self.enc_layers, self.enc_head, *self.dec_layers, self.dec_out]

    def params(self) -> list[np.ndarray]:
        return [p for layer in self._layers() for p in layer.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self._layers() for g in layer.grads()]

    def zero_grad(self) -> None:
        for layer in self._layers():
            layer.zero_grad()

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    # -- pure inference paths ---------------------------------------------

    def encode(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior parameters (mu, logvar); logvar clamped to +-20."""
        h = numcore.as_matrix(x, "x")
        if h.shape[1] != self.config.input_dim:
            raise DimensionError(
                f"input has {h.shape[1]} columns, model expects "
                f"{self.config.input_dim}"
            )
        for layer in self.enc_layers:
            h = Relu.apply(layer.apply(h))
        head = self.enc_head.apply(h)
        d = self.config.latent_dim
        mu = head[:, :d]
        logvar = np.clip(head[:, d:], numcore.LOGVAR_MIN, numcore.LOGVAR_MAX)
        return mu, logvar

    def decode(self, z: np.ndarray) -> np.ndarray:
        h = numcore.as_matrix(z, "z")
        if h.shape[1] != self.config.latent_dim:
            raise DimensionError(
                f"latent input has {h.shape[1]} columns, model expects "
                f"{self.config.latent_dim}"
            )
        for layer in self.dec_layers:
            h = Relu.apply(layer.apply(h))
        return self.dec_out.apply(h)

    def latent_embed(self, x: np.ndarray) -> np.ndarray:
        """Deterministic embedding: the posterior mean, no sampling.

        Processes rows in blocks to bound peak memory on large inputs.
        """
        x = numcore.as_matrix(x, "x")
        out = np.empty((x.shape[0], self.config.latent_dim))
        for start in range(0, x.shape[0], _EMBED_BLOCK):
            stop = min(start + _EMBED_BLOCK, x.shape[0])
            out[start:stop] = self.encode(x[start:stop])[0]
        return out

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        """decode(latent_embed(x)), blocked like latent_embed."""
        x = numcore.as_matrix(x, "x")
        out = np.empty_like(x)
        for start in range(0, x.shape[0], _EMBED_BLOCK):
            stop = min(start + _EMBED_BLOCK, x.shape[0])
            mu, _ = self.encode(x[start:stop])
            out[start:stop] = self.decode(mu)
        return out

    # -- caching training paths --------------------------------------------

    def _encode_train(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = x
        for layer, act in zip(self.enc_layers, self.enc_acts):
            h = act.forward(layer.forward(h))
        head = self.enc_head.forward(h)
        d = self.config.latent_dim
        mu = head[:, :d]
        raw_logvar = head[:, d:]
        self._logvar_mask = (raw_logvar > numcore.LOGVAR_MIN) & (
            raw_logvar < numcore.LOGVAR_MAX
        )
        logvar = np.clip(raw_logvar, numcore.LOGVAR_MIN, numcore.LOGVAR_MAX)
        return mu, logvar

    def _encode_backward(self, d_mu: np.ndarray, d_logvar: np.ndarray) -> None:
        assert self._logvar_mask is not None
        d_head = np.concatenate([d_mu, d_logvar * self._logvar_mask], axis=1)
        g = self.enc_head.backward(d_head)
        for layer, act in zip(
            reversed(self.enc_layers), reversed(self.enc_acts)
        ):
            g = layer.backward(act.backward(g))

    def _decode_train(self, z: np.ndarray) -> np.ndarray:
        h = z
        for layer, act in zip(self.dec_layers, self.dec_acts):
            h = act.forward(layer.forward(h))
        return self.dec_out.forward(h)

    def _decode_backward(self, d_xhat: np.ndarray) -> np.ndarray:
        g = self.dec_out.backward(d_xhat)
        for layer, act in zip(
            reversed(self.dec_layers), reversed(self.dec_acts)
        ):
            g = layer.backward(act.backward(g))
        return g

    def loss_with_noise(
        self, x: np.ndarray, eps: np.ndarray, beta: float
    ) -> tuple[float, float, float]:
        """Training objective (total, reconstruction, kl) for a fixed noise
        draw, with the reconstruction term summed over features.

        Pure (no caches). Lets tests finite-difference the exact quantity
        the training loop optimizes.
        """
        mu, logvar = self.encode(x)
        z = mu + np.exp(0.5 * logvar) * eps
        x_hat = self.decode(z)
        re_mean, _ = mse_loss(x, x_hat)
        kl, _, _ = gaussian_kl(mu, logvar)
        re = re_mean * self.config.input_dim
        return re + beta * kl, re, kl


def loss_components(
    x: np.ndarray,
    x_hat: np.ndarray,
    mu: np.ndarray,
    logvar: np.ndarray,
    beta: float,
) -> tuple[float, float, float]:
    """(total, reconstruction, kl) with total = re + beta * kl."""
    re, _ = mse_loss(x, x_hat)
    kl, _, _ = gaussian_kl(mu, logvar)
    return re + beta * kl, re, kl


@dataclass
class TrainReport:
    """Per-epoch training trace.

    Wall-clock stays out of ``to_csv``: the loss CSV must be byte-identical
    across reruns with the same seed, and timing never is.
    """

    total_loss: list[float] = field(default_factory=list)
    recon_loss: list[float] = field(default_factory=list)
    kl_loss: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        lines = ["epoch,total_loss,recon_loss,kl_loss,learning_rate"]
        for e in range(len(self.total_loss)):
            lines.append(
                f"{e},{self.total_loss[e]:.17g},{self.recon_loss[e]:.17g},"
                f"{self.kl_loss[e]:.17g},{self.learning_rate[e]:.17g}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


def train(
    ds: EncodedDataset, config: VaeConfig
) -> tuple[VariationalAutoencoder, TrainReport]:
    """Mini-batch Adam training of the full objective.

    The optimized per-sample loss is the squared reconstruction error
    summed over features plus beta times the KL term (summed over latent
    dimensions), batch-averaged. Summing rather than feature-averaging the
    reconstruction keeps the two terms on comparable scales for inputs
    ~100 columns wide: moderate beta values then trade reconstruction
    fidelity against latent regularization instead of collapsing the
    posterior onto the prior outright, which would leave every sample with
    the same embedding and no usable confidence geometry.

    Shuffle order and sampling noise derive from the config seed, reseeded
    per epoch, so a run is reproducible bit-for-bit on one platform. Labels
    never enter the objective; ``train_scope='normal_only'`` only filters
    the training rows.

    Raises:
        TrainingDivergedError: a batch produced a non-finite loss.
    """
    config.validate()
    X = numcore.check_finite(numcore.as_matrix(ds.X, "X"), "training data")
    if config.train_scope == "normal_only":
        X = X[ds.y == 0]
    n = X.shape[0]
    if n == 0:
        raise ConfigError("training set is empty")
    if X.shape[1] != config.input_dim:
        raise DimensionError(
            f"dataset has {X.shape[1]} columns but config.input_dim is "
            f"{config.input_dim}"
        )

    model = VariationalAutoencoder(config)
    adam = Adam()
    schedule = LrSchedule(config.base_lr, config.lr_step_size, config.lr_gamma)
    master = RngStream(config.seed)
    report = TrainReport()
    beta = config.beta

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = schedule.lr_at(epoch)
        perm = master.derive(_SHUFFLE_KEY, epoch).permutation(n)
        noise_rng = master.derive(_NOISE_KEY, epoch)
        sum_total = sum_re = sum_kl = 0.0

        for batch_no, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start : start + config.batch_size]
            x = np.ascontiguousarray(X[idx])

            mu, logvar = model._encode_train(x)
            z, eps = numcore.reparameterize(mu, logvar, noise_rng)
            x_hat = model._decode_train(z)

            re_mean, d_xhat_mean = mse_loss(x, x_hat)
            kl, d_mu_kl, d_logvar_kl = gaussian_kl(mu, logvar)
            re = re_mean * config.input_dim
            total = re + beta * kl
            if not np.isfinite(total):
                raise TrainingDivergedError(
                    "training loss is non-finite", epoch=epoch, batch=batch_no
                )

            model.zero_grad()
            dz = model._decode_backward(d_xhat_mean * config.input_dim)
            d_mu, d_logvar = reparameterize_backward(dz, logvar, eps)
            d_mu += beta * d_mu_kl
            d_logvar += beta * d_logvar_kl
            model._encode_backward(d_mu, d_logvar)
            adam.step(model.params(), model.grads(), lr)

            weight = x.shape[0]
            sum_total += total * weight
            sum_re += re * weight
            sum_kl += kl * weight

        report.total_loss.append(sum_total / n)
        report.recon_loss.append(sum_re / n)
        report.kl_loss.append(sum_kl / n)
        report.learning_rate.append(lr)
        report.seconds.append(time.perf_counter() - t0)
        logger.info(
            "epoch %d/%d: total=%.6f re=%.6f kl=%.6f lr=%.2e (%.1fs)",
            epoch + 1,
            config.epochs,
            report.total_loss[-1],
            report.recon_loss[-1],
            report.kl_loss[-1],
            lr,
            report.seconds[-1],
        )
    return model, report


# -- checkpointing ----------------------------------------------------------


def _weight_arrays(model: VariationalAutoencoder) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for i, layer in enumerate(model.enc_layers):
        arrays[f"enc{i}_W"], arrays[f"enc{i}_b"] = layer.W, layer.b
    arrays["head_W"], arrays["head_b"] = model.enc_head.W, model.enc_head.b
    for i, layer in enumerate(model.dec_layers):
        arrays[f"dec{i}_W"], arrays[f"dec{i}_b"] = layer.W, layer.b
    arrays["out_W"], arrays["out_b"] = model.dec_out.W, model.dec_out.b
    return arrays


def save_checkpoint(model: VariationalAutoencoder, path: str | Path) -> None:
    """Self-describing .npz: format version, config JSON, all weights."""
    np.savez(
        path,
        format_version=np.int64(CHECKPOINT_FORMAT_VERSION),
        config_json=np.bytes_(model.config.to_json().encode("utf-8")),
        **_weight_arrays(model),
    )


def load_checkpoint(
    path: str | Path, preprocessor: PreprocessorState | None = None
) -> VariationalAutoencoder:
    """Load a checkpoint; optionally verify it matches a preprocessor.

    Raises:
        CompatibilityError: format version unknown, or the model input
            width differs from the preprocessor's encoded column count.
    """
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise CompatibilityError(
                f"unsupported checkpoint format_version {version}"
            )
        config = VaeConfig.from_json(bytes(data["config_json"]).decode("utf-8"))
        if preprocessor is not None and preprocessor.n_columns != config.input_dim:
            raise CompatibilityError(
                f"checkpoint input_dim {config.input_dim} does not match "
                f"preprocessor column count {preprocessor.n_columns}"
            )
        model = VariationalAutoencoder(config)
        for name, layer in _named_layers(model):
            layer.W[...] = data[f"{name}_W"]
            layer.b[...] = data[f"{name}_b"]
    return model


def _named_layers(model: VariationalAutoencoder):
    for i, layer in enumerate(model.enc_layers):
        yield f"enc{i}", layer
    yield "head", model.enc_head
    for i, layer in enumerate(model.dec_layers):
        yield f"dec{i}", layer
    yield "out", model.dec_out
