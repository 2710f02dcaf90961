"""MAP estimation, observed information, Laplace evidence and informed model proposals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from . import _kernels
from .model_space import format_model, log_model_prior, neighborhood
from .regression import Dataset, kernel_args, normal_conditionals

LOG_2PI = math.log(2.0 * math.pi)
BALANCING_KINDS = ("sqrt", "barker", "identity")
# log-scale values beyond this overflow exp(); treated as zero density by the mode search
_ETA_LIMIT = 700.0


class MapConvergenceError(RuntimeError):
    """The posterior mode search did not reach the gradient tolerance."""

    def __init__(self, message, x, grad_norm):
        super().__init__(f"{message} (gradient norm {grad_norm:.3e})")
        self.x = x
        self.grad_norm = grad_norm


@dataclass(frozen=True, eq=False)
class ModelInfo:
    """Path-independent quantities for one model, computed once and cached.

    ``inv_chol`` is lower triangular with ``inv_chol @ inv_chol.T`` equal to the
    inverse observed information.
    """

    k: int
    map: np.ndarray
    obs_info: np.ndarray
    inv_chol: np.ndarray
    log_laplace: float
    log_prior: float
    log_det_info: float
    design: np.ndarray
    y: np.ndarray
    kargs: tuple

    @property
    def dim(self) -> int:
        return self.map.shape[0]

    def logpost_grad(self, x):
        lp, g = _kernels.logpost_grad(x, self.design, self.y, *self.kargs)
        return lp + self.log_prior, g

    def logpost_grad_batch(self, X):
        lp, g = _kernels.logpost_grad_batch(X, self.design, self.y, *self.kargs)
        return lp + self.log_prior, g

    def logpost(self, x) -> float:
        return self.logpost_grad(x)[0]

    @property
    def log_q_const(self) -> float:
        """Log normalizing constant of the Laplace Gaussian ``N(map, obs_info^-1)``."""
        return -0.5 * self.dim * LOG_2PI + 0.5 * self.log_det_info

    def log_proposal_density(self, X):
        """Log density of ``N(map, obs_info^-1)``; accepts one point or a batch."""
        diff = np.asarray(X) - self.map
        quad = np.einsum("...i,ij,...j->...", diff, self.obs_info, diff)
        return self.log_q_const - 0.5 * quad

    def proposal_grad(self, X):
        return -(np.asarray(X) - self.map) @ self.obs_info

    def draw_proposal(self, z):
        """Map standard-normal draws ``z`` to ``N(map, obs_info^-1)``."""
        return self.map + z @ self.inv_chol.T


def map_estimate(model_kind, k, data: Dataset, rho=0.95, gtol=1e-7, max_rounds=None) -> np.ndarray:
    """Posterior mode of ``(beta, eta)`` under model ``k``.

    Normal errors have a closed form. Under LPTN errors the log density has a
    kink wherever a standardized residual crosses the threshold, and the mode
    frequently sits on one or more kinks. The search is an active-set method:
    residuals pinned to the threshold are eliminated through a null-space
    parametrization, BFGS maximizes the remaining smooth problem, and a
    subgradient certificate (see :func:`map_certificate`) decides whether to add
    or release a kink.
    """
    cond = normal_conditionals(k, data)
    start = np.append(cond.beta_hat, cond.eta_mode)
    if model_kind == "normal":
        return start
    Ck = data.design(k)
    y = data.y
    args = kernel_args(model_kind, rho)
    tau = args[0]
    d = Ck.shape[1]
    if max_rounds is None:
        max_rounds = 4 * (d + 1) + 10

    x = _continuation(start, Ck, y, args, gtol)
    z = np.abs(y - Ck @ x[:-1]) * math.exp(-x[-1])
    active = [int(i) for i in np.flatnonzero(np.abs(z - tau) < 1e-4)]
    x = _maximize_on_kinks(x, Ck, y, args, active, gtol)
    cert = map_certificate(x, Ck, y, args, active)
    for _ in range(max_rounds):
        if cert.ok(gtol):
            return x
        z = np.abs(y - Ck @ x[:-1]) * math.exp(-x[-1])
        if cert.active.size and cert.worst_violation > 0:
            # leaving this kink increases the density; release residuals tied with it
            r = y - Ck @ x[:-1]
            rows = np.column_stack([np.sign(r)[:, None] * Ck, np.abs(r)])
            worst = rows[int(cert.active[cert.worst_index])]
            active = [i for i in active if not np.allclose(rows[i], worst, rtol=0, atol=1e-12)]
        else:
            gap = np.abs(z - tau)
            gap[active] = np.inf
            if not np.isfinite(gap.min()):
                break
            active = sorted(active + [int(i) for i in np.flatnonzero(gap <= gap.min() + 1e-9)])
        x = _maximize_on_kinks(x, Ck, y, args, active, gtol)
        cert = map_certificate(x, Ck, y, args, active)
    if cert.ok(gtol):
        return x
    raise MapConvergenceError(f"MAP search failed for model {format_model(k)}", x, cert.residual)


@lru_cache(maxsize=None)
def _smoothing_window(tau, lam, log_tail_const, log_log_tau):
    """Interval around ``tau`` on which the LPTN log density equals min(core, tail)."""

    def gap(a):
        core = -0.5 * a * a - _kernels.HALF_LOG_2PI
        tail = log_tail_const - math.log(a) + (lam + 1.0) * (log_log_tau - math.log(math.log(a)))
        return core - tail

    upper_cross = optimize.brentq(gap, tau * (1.0 + 1e-6), 1e3)
    half = 0.5 * min(upper_cross - tau, tau - 1.0)
    return tau - half, tau + half


def _continuation(x, Ck, y, args, gtol):
    """Track the mode of the smoothed density as the smoothing width shrinks."""
    lo, hi = _smoothing_window(*args)
    for width in 10.0 ** -np.arange(1, 10):
        x = _bfgs(lambda v: _kernels.logpost_grad_smooth(v, Ck, y, *args, lo, hi, width), x, gtol)
    return x


def _bfgs(fun_grad, x0, gtol):
    def neg(v):
        lp, g = fun_grad(v)
        if not np.isfinite(lp):
            return math.inf, np.zeros_like(v)
        return -lp, -g

    res = optimize.minimize(neg, x0, jac=True, method="BFGS",
                            options={"gtol": gtol * 1e-2, "maxiter": 2000})
    return res.x


def _newton_polish(fun_grad, hess, x, gtol, max_iter=50):
    """Damped Newton ascent; ``hess`` is the analytic Hessian."""
    f, g = fun_grad(x)
    for _ in range(max_iter):
        if np.linalg.norm(g) < gtol * 1e-2:
            break
        evals, evecs = np.linalg.eigh(hess(x))
        # force an ascent direction when the Hessian is not negative definite
        evals = np.minimum(evals, -1e-8 * max(1.0, np.abs(evals).max()))
        step = -evecs @ ((evecs.T @ g) / evals)
        t = 1.0
        while t > 1e-10:
            f_new, g_new = fun_grad(x + t * step)
            if f_new > f or (f_new == f and np.linalg.norm(g_new) < np.linalg.norm(g)):
                break
            t *= 0.5
        else:
            break
        x, f, g = x + t * step, f_new, g_new
    return x


def _maximize_on_kinks(x, Ck, y, args, active, gtol):
    """Maximize with residuals ``active`` held on the threshold ``|z_i| = tau``."""
    tau = args[0]
    if not active:
        def fun_grad(v):
            if not abs(v[-1]) < _ETA_LIMIT:
                return -math.inf, np.zeros_like(v)
            return _kernels.logpost_grad(v, Ck, y, *args)

        def hess(v):
            return _kernels.logpost_hessian(v, Ck, y, *args)

        return _newton_polish(fun_grad, hess, _bfgs(fun_grad, x, gtol), gtol)
    CA = Ck[active]
    signs = np.sign(y[active] - CA @ x[:-1])
    signs[signs == 0] = 1.0
    pinv = np.linalg.pinv(CA)
    _, sv, vt = np.linalg.svd(CA)
    rank = int(np.sum(sv > sv[0] * 1e-12))
    null = vt[rank:].T
    pull = pinv @ (signs * tau)
    offset = pinv @ y[active]
    d = Ck.shape[1]

    # beta = offset - pull * exp(eta) + null @ gamma
    def to_full(v):
        return np.append(offset - pull * math.exp(v[-1]) + null @ v[:-1], v[-1])

    def jacobian(v):
        T = np.zeros((d + 1, v.shape[0]))
        T[:d, :-1] = null
        T[:d, -1] = -pull * math.exp(v[-1])
        T[d, -1] = 1.0
        return T

    def fun_grad(v):
        if not abs(v[-1]) < _ETA_LIMIT:
            return -math.inf, np.zeros_like(v)
        lp, g = _kernels.logpost_grad(to_full(v), Ck, y, *args)
        return lp, g @ jacobian(v)

    def hess(v):
        full = to_full(v)
        T = jacobian(v)
        Hr = T.T @ _kernels.logpost_hessian(full, Ck, y, *args) @ T
        g = _kernels.logpost_grad(full, Ck, y, *args)[1]
        Hr[-1, -1] -= (g[:-1] @ pull) * math.exp(v[-1])
        return Hr

    v0 = np.append(null.T @ x[:-1], x[-1])
    return to_full(_newton_polish(fun_grad, hess, _bfgs(fun_grad, v0, gtol), gtol))


@dataclass(frozen=True)
class MapCertificate:
    """First-order optimality check for a mode that may sit on kinks.

    At a kink the one-sided slopes of the log density in ``|z|`` are ``-tau``
    (core side) and ``-tail_slope`` (tail side). The point is stationary when
    the gradient of the smooth part equals ``sum_i w_i grad|z_i|`` with every
    ``w_i`` in ``[tau, tail_slope]``.
    """

    active: np.ndarray
    weights: np.ndarray
    residual: float
    lower: float
    upper: float

    @property
    def violations(self) -> np.ndarray:
        return np.maximum(self.lower - self.weights, self.weights - self.upper)

    @property
    def worst_index(self) -> int:
        return int(np.argmax(self.violations))

    @property
    def worst_violation(self) -> float:
        return float(self.violations.max()) if self.active.size else -math.inf

    def ok(self, gtol, wtol=1e-6) -> bool:
        return self.residual < max(gtol, 1e-12) * 10 and self.worst_violation <= wtol


def map_certificate(x, Ck, y, args, active) -> MapCertificate:
    tau, lam = args[0], args[1]
    active = np.asarray(sorted(active), dtype=np.int64)
    keep = np.ones(len(y), dtype=bool)
    keep[active] = False
    _, g_rest = _kernels.logpost_grad(x, Ck[keep], y[keep], *args)
    if math.isinf(tau):
        return MapCertificate(active, np.empty(0), float(np.linalg.norm(g_rest)), 0.0, 0.0)
    # the excluded rows change the -n eta term; restore it
    g_rest[-1] -= active.size
    upper = 1.0 / tau + (lam + 1.0) / (tau * math.log(tau))
    if active.size == 0:
        return MapCertificate(active, np.empty(0), float(np.linalg.norm(g_rest)), tau, upper)
    eta = x[-1]
    r = y[active] - Ck[active] @ x[:-1]
    s = math.exp(-eta)
    J = np.column_stack([-(np.sign(r) * s)[:, None] * Ck[active], -np.abs(r) * s])
    w, *_ = np.linalg.lstsq(J.T, g_rest, rcond=None)
    resid = float(np.linalg.norm(g_rest - J.T @ w))
    return MapCertificate(active, w, resid, tau, upper)


def observed_info(model_kind, k, data: Dataset, map_x) -> np.ndarray:
    """Block-diagonal ``[[C_k'C_k / exp(2 eta), 0], [0, 2n]]`` at the mode.

    For LPTN errors the normal-model information is used, evaluated at the
    robust mode's ``eta``.
    """
    Ck = data.design(k)
    d = Ck.shape[1]
    info = np.zeros((d + 1, d + 1))
    info[:d, :d] = (Ck.T @ Ck) * math.exp(-2.0 * map_x[-1])
    info[d, d] = 2.0 * data.n
    return info


def log_laplace_evidence(model_kind, k, data: Dataset, info: ModelInfo) -> float:
    """Laplace approximation of ``log pi(k | data)`` up to a shared constant."""
    lp_un = info.logpost(info.map) - info.log_prior
    return info.log_prior + 0.5 * info.dim * LOG_2PI + lp_un - 0.5 * info.log_det_info


def build_model_info(model_kind, k, data: Dataset, rho=0.95) -> ModelInfo:
    x = map_estimate(model_kind, k, data, rho)
    I = observed_info(model_kind, k, data, x)
    inv_chol = np.linalg.cholesky(np.linalg.inv(I))
    sign, logdet = np.linalg.slogdet(I)
    info = ModelInfo(k=k, map=x, obs_info=I, inv_chol=inv_chol, log_laplace=math.nan,
                     log_prior=log_model_prior(k, data), log_det_info=float(logdet),
                     design=data.design(k), y=data.y, kargs=kernel_args(model_kind, rho))
    object.__setattr__(info, "log_laplace", log_laplace_evidence(model_kind, k, data, info))
    return info


def log_balancing(h: str, log_x):
    """``log h(exp(log_x))`` evaluated without overflow."""
    log_x = np.asarray(log_x, dtype=float)
    if h == "sqrt":
        return 0.5 * log_x
    if h == "identity":
        return log_x
    if h == "barker":
        return -np.logaddexp(0.0, -log_x)
    raise ValueError(f"unknown balancing function {h!r}; expected one of {BALANCING_KINDS}")


def balancing(h: str, x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("balancing functions take nonnegative arguments")
    if h == "sqrt":
        return np.sqrt(x)
    if h == "identity":
        return x * 1.0
    if h == "barker":
        return x / (1.0 + x)
    raise ValueError(f"unknown balancing function {h!r}; expected one of {BALANCING_KINDS}")


@dataclass(frozen=True, eq=False)
class ProposalPmf:
    """Model proposal over a neighbourhood; ``log_c`` is the log normalizing constant."""

    k: int
    members: np.ndarray
    log_probs: np.ndarray
    log_c: float

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def log_prob(self, k) -> float:
        i = np.searchsorted(self.members, k)
        if i >= len(self.members) or self.members[i] != k:
            return -math.inf
        return float(self.log_probs[i])

    def sample(self, u: float) -> int:
        cdf = np.cumsum(self.probs)
        i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
        return int(self.members[min(i, len(self.members) - 1)])


def proposal_from_log_ratios(k, members, log_ratios, h) -> ProposalPmf:
    """Normalize ``h(ratio)`` over ``members``; ``h=None`` gives the uniform PMF."""
    members = np.asarray(members, dtype=np.int64)
    if h is None or h == "uniform":
        lw = np.zeros(len(members))
    else:
        lw = log_balancing(h, log_ratios)
    log_c = float(logsumexp(np.sort(lw)))
    if not np.isfinite(log_c):
        raise FloatingPointError(f"all proposal weights vanish at model {format_model(k)}")
    return ProposalPmf(k=k, members=members, log_probs=lw - log_c, log_c=log_c)


def model_proposal_pmf(k, h, cache) -> ProposalPmf:
    """Informed proposal ``g(k, .) ∝ h(pi_hat(k') / pi_hat(k))`` over the neighbourhood."""
    members = neighborhood(k, cache.p_pred)
    base = cache.get(k).log_laplace
    log_ratios = np.array([cache.get(m).log_laplace - base for m in members])
    return proposal_from_log_ratios(k, members, log_ratios, h)
