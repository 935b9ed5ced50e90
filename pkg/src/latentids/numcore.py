"""Dense numeric core: feed-forward layers with hand-written backward passes,
the losses used for training, Adam with step decay, covariance/Cholesky
helpers, and Pearson correlation.

Matrices are C-contiguous float64 ``numpy`` arrays throughout (row-major,
rows = samples). All gradients are analytic; the test suite checks every one
of them against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from latentids.errors import (
    DimensionError,
    NotPositiveDefiniteError,
    NumericError,
    StateError,
    UndefinedCorrelationError,
)

__all__ = [
    "RngStream",
    "LinearLayer",
    "Relu",
    "mse_loss",
    "gaussian_kl",
    "reparameterize",
    "reparameterize_backward",
    "Adam",
    "LrSchedule",
    "covariance",
    "cholesky",
    "solve_lower",
    "pearson_corr",
    "as_matrix",
    "check_finite",
]

LOGVAR_MIN = -20.0
LOGVAR_MAX = 20.0


def as_matrix(a: np.ndarray, name: str = "array") -> np.ndarray:
    """Validate and normalize ``a`` to a 2-D C-contiguous float64 array."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def check_finite(a: np.ndarray, name: str = "array") -> np.ndarray:
    """Raise NumericError if ``a`` contains NaN or Inf."""
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite values")
    return a


class RngStream:
    """Deterministic random stream keyed by a 64-bit seed.

    Same seed produces the identical sample sequence across runs (numpy's
    PCG64 stream is stable for a fixed numpy version). ``derive`` builds a
    child stream from the parent seed plus integer keys, so per-epoch
    shuffling and noise can be reseeded reproducibly from one master seed.
    """

    def __init__(self, seed: int, _keys: tuple[int, ...] = ()) -> None:
        # Negative seeds reduce to their unsigned 64-bit representation
        # (SeedSequence rejects negatives).
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._keys = _keys
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, *_keys]))
        )

    def derive(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self._keys + tuple(int(k) for k in keys))

    def normal(self, shape: tuple[int, ...]) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=np.float64)

    def uniform(self, low: float, high: float, shape: tuple[int, ...]) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


class LinearLayer:
    """Affine layer ``y = x @ W.T + b`` with gradient accumulation.

    ``W`` has shape (out_dim, in_dim). ``forward`` caches its input for the
    matching ``backward``; ``apply`` is the cache-free (pure) variant for
    inference. Gradients accumulate into ``grad_W``/``grad_b`` until
    ``zero_grad``.
    """

    def __init__(self, in_dim: int, out_dim: int, rng: RngStream) -> None:
        if in_dim < 1 or out_dim < 1:
            raise DimensionError(
                f"layer dims must be >= 1, got in={in_dim} out={out_dim}"
            )
        self.in_dim = in_dim
        self.out_dim = out_dim
        # Uniform +-sqrt(6/(fan_in+fan_out)): keeps early ReLU-stack losses finite.
        bound = np.sqrt(6.0 / (in_dim + out_dim))
        self.W = rng.uniform(-bound, bound, (out_dim, in_dim))
        self.b = np.zeros(out_dim)
        self.grad_W = np.zeros_like(self.W)
        self.grad_b = np.zeros_like(self.b)
        self._cached_x: np.ndarray | None = None

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = as_matrix(x, "input")
        if x.shape[1] != self.in_dim:
            raise DimensionError(
                f"input has {x.shape[1]} columns, layer expects {self.in_dim}"
            )
        return x @ self.W.T + self.b

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = self.apply(x)
        self._cached_x = np.ascontiguousarray(x, dtype=np.float64)
        return y

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._cached_x is None:
            raise StateError("backward called before forward")
        x = self._cached_x
        upstream = as_matrix(upstream, "upstream")
        if upstream.shape != (x.shape[0], self.out_dim):
            raise DimensionError(
                f"upstream shape {upstream.shape} does not match "
                f"forward output ({x.shape[0]}, {self.out_dim})"
            )
        self.grad_W += upstream.T @ x
        self.grad_b += upstream.sum(axis=0)
        return upstream @ self.W

    def zero_grad(self) -> None:
        self.grad_W.fill(0.0)
        self.grad_b.fill(0.0)

    def params(self) -> list[np.ndarray]:
        return [self.W, self.b]

    def grads(self) -> list[np.ndarray]:
        return [self.grad_W, self.grad_b]


class Relu:
    """Elementwise max(0, x); backward masks upstream where x <= 0."""

    def __init__(self) -> None:
        self._mask: np.ndarray | None = None

    @staticmethod
    def apply(x: np.ndarray) -> np.ndarray:
        return np.maximum(x, 0.0)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0.0
        return np.maximum(x, 0.0)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise StateError("backward called before forward")
        return upstream * self._mask


def mse_loss(x: np.ndarray, x_hat: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all entries and its gradient wrt ``x_hat``.

    Returns:
        (loss, grad) with loss = mean((x - x_hat)**2) and
        grad = 2 * (x_hat - x) / x.size.
    """
    if x.shape != x_hat.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    diff = x_hat - x
    loss = float(np.mean(diff * diff))
    grad = (2.0 / x.size) * diff
    return loss, grad


def gaussian_kl(
    mu: np.ndarray, logvar: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """KL divergence of N(mu, exp(logvar)) from N(0, I), batch-averaged.

    kl = -0.5 * mean_batch( sum_dims(1 + logvar - mu^2 - exp(logvar)) ).
    Summed over latent dimensions, averaged over the batch (rows).

    Returns:
        (kl, d_kl/d_mu, d_kl/d_logvar).
    """
    if mu.shape != logvar.shape:
        raise DimensionError(f"shape mismatch: {mu.shape} vs {logvar.shape}")
    mu = as_matrix(mu, "mu")
    logvar = as_matrix(logvar, "logvar")
    with np.errstate(over="raise"):
        try:
            var = np.exp(logvar)
        except FloatingPointError:
            raise NumericError(
                "exp(logvar) overflowed; clamp logvar upstream"
            ) from None
    if not np.all(np.isfinite(var)):
        raise NumericError("exp(logvar) produced non-finite values")
    n = mu.shape[0]
    kl = float(-0.5 * np.sum(1.0 + logvar - mu * mu - var) / n)
    d_mu = mu / n
    d_logvar = -0.5 * (1.0 - var) / n
    return kl, d_mu, d_logvar


def reparameterize(
    mu: np.ndarray, logvar: np.ndarray, rng: RngStream
) -> tuple[np.ndarray, np.ndarray]:
    """Sample z = mu + exp(0.5*logvar) * eps with eps ~ N(0, I) from ``rng``.

    Returns (z, eps); keep eps to run ``reparameterize_backward``.
    """
    if mu.shape != logvar.shape:
        raise DimensionError(f"shape mismatch: {mu.shape} vs {logvar.shape}")
    eps = rng.normal(mu.shape)
    z = mu + np.exp(0.5 * logvar) * eps
    return z, eps


def reparameterize_backward(
    upstream: np.ndarray, logvar: np.ndarray, eps: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the reparameterized sample wrt mu and logvar.

    dz/dmu = 1, dz/dlogvar = 0.5 * exp(0.5*logvar) * eps.
    """
    d_mu = upstream.copy()
    d_logvar = upstream * (0.5 * np.exp(0.5 * logvar) * eps)
    return d_mu, d_logvar


class Adam:
    """Adam with bias correction over a fixed list of parameter arrays.

    Moment accumulators are allocated on first ``step`` to match the
    parameter shapes; ``t`` increases by exactly 1 per step.
    """

    def __init__(
        self,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(
        self, params: list[np.ndarray], grads: list[np.ndarray], lr: float
    ) -> None:
        if len(params) != len(grads):
            raise DimensionError(
                f"{len(params)} params but {len(grads)} gradients"
            )
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            if p.shape != g.shape:
                raise DimensionError(
                    f"gradient shape {g.shape} does not match param {p.shape}"
                )
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass(frozen=True)
class LrSchedule:
    """Step decay: lr(epoch) = base_lr * gamma ** floor(epoch / step_size)."""

    base_lr: float
    step_size: int = 10
    gamma: float = 0.1

    def lr_at(self, epoch: int) -> float:
        return self.base_lr * self.gamma ** (epoch // self.step_size)


def covariance(Z: np.ndarray) -> np.ndarray:
    """Sample covariance (1/(n-1)) * (Z - mean).T @ (Z - mean)."""
    Z = as_matrix(Z, "Z")
    n = Z.shape[0]
    if n < 2:
        raise DimensionError(f"covariance needs >= 2 rows, got {n}")
    centered = Z - Z.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    # Exact symmetry; matmul round-off can break it in the last ulp.
    return 0.5 * (cov + cov.T)


def cholesky(sigma: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T = sigma.

    Raises:
        NotPositiveDefiniteError: if sigma is not positive definite; the
            message reports the smallest eigenvalue.
    """
    sigma = as_matrix(sigma, "sigma")
    if sigma.shape[0] != sigma.shape[1]:
        raise DimensionError(f"matrix is not square: {sigma.shape}")
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        smallest = float(np.linalg.eigvalsh(sigma)[0])
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (smallest eigenvalue "
            f"{smallest:.6e})"
        ) from exc


def solve_lower(L: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Solve L @ x = v for lower-triangular L (v may hold multiple columns)."""
    return solve_triangular(L, v, lower=True)


def pearson_corr(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson product-moment correlation of two equal-length vectors.

    Raises:
        UndefinedCorrelationError: fewer than 2 points, or zero variance
            in either argument.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 2:
        raise UndefinedCorrelationError("correlation needs >= 2 points")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0.0:
        raise UndefinedCorrelationError("zero variance in an argument")
    return float((da * db).sum() / denom)
