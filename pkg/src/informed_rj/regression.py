"""Normal and LPTN linear regression: data, densities, gradients, closed forms.

Parameters of model ``k`` are stored as one flat vector ``x = (beta, eta)``
of length ``d_k + 1`` with ``eta = log(sigma)``.
"""

from __future__ import annotations

import csv
import hashlib
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import special, stats

from . import _kernels
from .model_space import DegenerateDesignError, design_columns, format_model, log_model_prior

MODEL_KINDS = ("normal", "lptn")
RHO_MIN = 2.0 * stats.norm.cdf(1.0) - 1.0
# the admissible bound as published to four decimals; values between it and RHO_MIN
# give tau - 1 < 2e-5, where the tail exponent collapses toward zero
RHO_FLOOR = round(RHO_MIN, 4)


class DataError(ValueError):
    """Malformed input data."""


class ThresholdWarning(RuntimeWarning):
    """A standardized residual sits exactly on the LPTN threshold."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response ``y`` and full design ``C`` (first column all ones)."""

    y: np.ndarray
    C: np.ndarray
    standardized: bool = False
    names: tuple = ()
    x_mean: np.ndarray | None = field(default=None, repr=False)
    x_scale: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float)
        C = np.ascontiguousarray(self.C, dtype=float)
        if y.ndim != 1 or C.ndim != 2 or C.shape[0] != y.shape[0]:
            raise DataError(f"shape mismatch: y {y.shape}, C {C.shape}")
        n, p = C.shape
        if not n > p >= 1:
            raise DataError(f"need n > p >= 1, got n={n}, p={p}")
        if not np.all(C[:, 0] == 1.0):
            raise DataError("first design column must be all ones")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(C))):
            raise DataError("non-finite values in data")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "C", C)

    @classmethod
    def from_arrays(cls, X, y, standardize=True, names=None) -> "Dataset":
        """Prepend the intercept to predictors ``X``; standardize with divisor ``n``."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        if standardize:
            if np.any(scale == 0):
                bad = [int(j) + 1 for j in np.flatnonzero(scale == 0)]
                raise DataError(f"constant predictor column(s) {bad}")
            X = (X - mean) / scale
        C = np.column_stack([np.ones(X.shape[0]), X])
        names = tuple(names) if names is not None else tuple(f"x{j + 1}" for j in range(X.shape[1]))
        return cls(y=y, C=C, standardized=standardize, names=names,
                   x_mean=mean if standardize else None,
                   x_scale=scale if standardize else None)

    @property
    def n(self) -> int:
        return self.C.shape[0]

    @property
    def p_pred(self) -> int:
        return self.C.shape[1] - 1

    def design(self, k) -> np.ndarray:
        return np.ascontiguousarray(self.C[:, design_columns(k)])

    @cached_property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.y.tobytes())
        h.update(self.C.tobytes())
        return h.hexdigest()


def load_csv(path, delimiter=None, standardize=True) -> Dataset:
    """Read a delimited file with a header: response first, then predictors."""
    with open(path, newline="") as fh:
        text = fh.read()
    if delimiter is None:
        try:
            delimiter = csv.Sniffer().sniff(text.splitlines()[0], delimiters=",;\t ").delimiter
        except (csv.Error, IndexError):
            delimiter = ","
    rows = list(csv.reader(text.splitlines(), delimiter=delimiter))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise DataError(f"{path}: need a response column and at least one predictor")
    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric value {cell!r} at row {i}, column {j + 1} ({header[j]})"
                ) from None
    return Dataset.from_arrays(values[:, 1:], values[:, 0], standardize=standardize,
                               names=header[1:])


@dataclass(frozen=True)
class LptnConstants:
    rho: float
    tau: float
    lam: float

    @property
    def log_tail_const(self) -> float:
        return stats.norm.logpdf(self.tau) + math.log(self.tau)

    @property
    def log_log_tau(self) -> float:
        return math.log(math.log(self.tau))


def lptn_constants(rho: float) -> LptnConstants:
    """Threshold ``tau`` and tail exponent ``lam`` of the LPTN with core mass ``rho``."""
    if not max(RHO_MIN, RHO_FLOOR) < rho < 1.0:
        raise ValueError(f"rho={rho} outside the admissible range (2Φ(1)−1, 1) ≈ ({RHO_MIN:.4f}, 1)")
    tau = float(stats.norm.ppf(0.5 * (1.0 + rho)))
    lam = 2.0 / (1.0 - rho) * stats.norm.pdf(tau) * tau * math.log(tau)
    return LptnConstants(rho=rho, tau=tau, lam=float(lam))


def lptn_logpdf(x, c: LptnConstants):
    """Log density of the log-Pareto-tailed normal; vectorized over ``x``."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    core = stats.norm.logpdf(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        lx = np.log(np.where(ax > c.tau, ax, np.e))
        tail = c.log_tail_const - lx + (c.lam + 1.0) * (c.log_log_tau - np.log(lx))
    out = np.where(ax <= c.tau, core, tail)
    return out[()] if out.ndim == 0 else out


def kernel_args(model_kind: str, rho: float = 0.95) -> tuple:
    """Constants passed to the compiled kernels for an error model."""
    if model_kind == "normal":
        return (math.inf, 0.0, 0.0, 0.0)
    if model_kind == "lptn":
        c = lptn_constants(rho)
        return (c.tau, c.lam, c.log_tail_const, c.log_log_tau)
    raise ValueError(f"unknown model kind {model_kind!r}; expected one of {MODEL_KINDS}")


def _check_dims(k, x, data):
    d = len(design_columns(k))
    x = np.asarray(x, dtype=float)
    if x.shape != (d + 1,):
        raise ValueError(f"parameter vector of length {x.shape} does not match d_k + 1 = {d + 1} "
                         f"for model {format_model(k)}")
    return x


def log_unnorm_posterior(model_kind, k, x, data: Dataset, rho=0.95) -> float:
    """``log pi(k, beta, eta | data)`` up to a constant shared by all models."""
    x = _check_dims(k, x, data)
    lp, _ = _kernels.logpost_grad(x, data.design(k), data.y, *kernel_args(model_kind, rho))
    return log_model_prior(k, data) + lp


def grad_log_posterior(model_kind, k, x, data: Dataset, rho=0.95) -> np.ndarray:
    x = _check_dims(k, x, data)
    Ck = data.design(k)
    args = kernel_args(model_kind, rho)
    if model_kind == "lptn":
        z = np.abs(data.y - Ck @ x[:-1]) * math.exp(-x[-1])
        if np.any(z == args[0]):
            warnings.warn("standardized residual on the LPTN threshold; using the core branch",
                          ThresholdWarning, stacklevel=2)
    return _kernels.logpost_grad(x, Ck, data.y, *args)[1]


def grad_log_posterior_lptn(k, x, data: Dataset, c: LptnConstants) -> np.ndarray:
    return grad_log_posterior("lptn", k, x, data, c.rho)


def _ols(k, data):
    Ck = data.design(k)
    G = Ck.T @ Ck
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise DegenerateDesignError(f"singular Gram matrix for model {format_model(k)}") from None
    beta = np.linalg.solve(G, Ck.T @ data.y)
    rss = float(np.sum((data.y - Ck @ beta) ** 2))
    return Ck, G, L, beta, rss


def normal_log_evidence(k, data: Dataset) -> float:
    """Exact log marginal ``log pi(k) + log ∫ pi(beta, eta | k) L dbeta deta`` (normal errors)."""
    Ck, G, L, beta, rss = _ols(k, data)
    n, d = Ck.shape
    if not n > d:
        raise DegenerateDesignError(f"need n > d_k for model {format_model(k)}")
    if rss <= 0.0:
        raise DegenerateDesignError(f"perfect fit (zero residual norm): infinite evidence for {format_model(k)}")
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    log_prior = 0.5 * logdet - 0.5 * d * math.log(n)
    return (log_prior + special.gammaln(0.5 * (n - d)) + 0.5 * d * math.log(math.pi)
            - 0.5 * (n - d) * math.log(rss) - 0.5 * logdet
            - 0.5 * n * math.log(math.pi) - math.log(2.0))


@dataclass(frozen=True)
class NormalConditionals:
    """Posterior of model ``k`` under normal errors.

    ``beta | eta ~ N(beta_hat, exp(2 eta) gram_inv)`` and
    ``sigma^2 ~ InvGamma(shape, scale)``.
    """

    beta_hat: np.ndarray
    gram_inv: np.ndarray
    shape: float
    scale: float

    @property
    def eta_mode(self) -> float:
        """Joint maximizer in ``eta``: ``log sqrt(RSS / n)``."""
        n = 2.0 * self.shape + len(self.beta_hat)
        return 0.5 * math.log(2.0 * self.scale / n)

    def mean(self) -> np.ndarray:
        eta = 0.5 * (math.log(self.scale) - special.digamma(self.shape))
        return np.append(self.beta_hat, eta)

    def log_eta_density(self, eta):
        """Normalized marginal density of ``eta``."""
        eta = np.asarray(eta, dtype=float)
        a, b = self.shape, self.scale
        return a * math.log(b) - special.gammaln(a) + math.log(2.0) - 2 * a * eta - b * np.exp(-2 * eta)

    def sample(self, rng, size) -> np.ndarray:
        sigma2 = self.scale / rng.gamma(self.shape, 1.0, size=size)
        L = np.linalg.cholesky(self.gram_inv)
        z = rng.standard_normal((size, len(self.beta_hat)))
        beta = self.beta_hat + np.sqrt(sigma2)[:, None] * (z @ L.T)
        return np.column_stack([beta, 0.5 * np.log(sigma2)])


def normal_conditionals(k, data: Dataset) -> NormalConditionals:
    Ck, G, _, beta, rss = _ols(k, data)
    n, d = Ck.shape
    return NormalConditionals(beta_hat=beta, gram_inv=np.linalg.inv(G),
                              shape=0.5 * (n - d), scale=0.5 * rss)
