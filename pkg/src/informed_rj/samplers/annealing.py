"""Annealed bridges between two models and the ratio estimators built on them.

A bridge from model ``k`` (state ``x``) to model ``k'`` runs on pairs
``(x, y)``. Its intermediate targets interpolate geometrically between
``pi(k, x) q_k'(y)`` and ``pi(k', y) q_k(x)``, where ``q`` is the Laplace
Gaussian of each model. MALA moves act in coordinates whitened by the Laplace
covariance, so the kernel used at step ``t`` of ``k -> k'`` is the kernel at
step ``T - t`` of ``k' -> k``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .. import _kernels
from ..laplace import ModelInfo
from ..rng import Purpose, scratch_stream

COMBINERS = ("median", "simple_average", "average_of_two")


@dataclass(frozen=True)
class AnnealConfig:
    T: int = 1
    ell: float = 2.0
    N: int = 1
    combiner: str = "median"

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        if not (self.ell > 0 and math.isfinite(self.ell)):
            raise ValueError(f"ell must be positive and finite, got {self.ell}")
        if self.combiner not in COMBINERS:
            raise ValueError(f"unknown combiner {self.combiner!r}; expected one of {COMBINERS}")

    def gamma(self, t: int) -> float:
        return t / self.T

    def step_size(self, dim_x: int, dim_y: int) -> float:
        """MALA step ``ell / D^(1/6)`` with ``D`` the total parameter count of the pair."""
        return self.ell / (dim_x + dim_y) ** (1.0 / 6.0)


def _endpoint_terms(x, y, src: ModelInfo, dst: ModelInfo):
    lp_x, g_x = src.logpost_grad(x)
    lp_y, g_y = dst.logpost_grad(y)
    A = lp_x + dst.log_proposal_density(y)
    B = lp_y + src.log_proposal_density(x)
    return A, B, (g_x, g_y)


def annealed_log_density(t, T, x, y, src: ModelInfo, dst: ModelInfo) -> float:
    """``(1 - t/T) [log pi(k, x) + log q_k'(y)] + (t/T) [log pi(k', y) + log q_k(x)]``."""
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    A, B, _ = _endpoint_terms(x, y, src, dst)
    g = t / T
    return (1.0 - g) * A + g * B


def annealed_grad(t, T, x, y, src: ModelInfo, dst: ModelInfo):
    """Gradient of :func:`annealed_log_density` with respect to ``x`` and ``y``."""
    g = t / T
    _, _, (g_x, g_y) = _endpoint_terms(x, y, src, dst)
    grad_x = (1.0 - g) * g_x + g * src.proposal_grad(x)
    grad_y = (1.0 - g) * dst.proposal_grad(y) + g * g_y
    return grad_x, grad_y


def whiten(info: ModelInfo, x):
    return solve_triangular(info.inv_chol, np.asarray(x) - info.map, lower=True)


def mala_annealed_kernel(t, x, y, src: ModelInfo, dst: ModelInfo, cfg: AnnealConfig, rng):
    """One MALA step leaving the ``t``-th bridge density invariant.

    Returns ``(x, y, accepted)``. Reference implementation of the move used by
    the compiled batch in :func:`ais_paths`.
    """
    if not 1 <= t <= cfg.T - 1:
        raise ValueError(f"MALA kernels exist for t in 1..T-1, got t={t}")
    step = cfg.step_size(src.dim, dst.dim)
    a, b = whiten(src, x), whiten(dst, y)
    xi = rng.standard_normal(src.dim + dst.dim)
    u = rng.random()
    return _mala_move(t, cfg.T, a, b, xi, u, step, src, dst)


def _whitened_state(t, T, a, b, src, dst):
    x = src.map + src.inv_chol @ a
    y = dst.map + dst.inv_chol @ b
    A, B, (g_x, g_y) = _endpoint_terms(x, y, src, dst)
    g = t / T
    da = (1.0 - g) * (src.inv_chol.T @ g_x) - g * a
    db = g * (dst.inv_chol.T @ g_y) - (1.0 - g) * b
    return (1.0 - g) * A + g * B, np.concatenate([da, db])


def _mala_move(t, T, a, b, xi, u, step, src, dst):
    cur = np.concatenate([a, b])
    lp, grad = _whitened_state(t, T, a, b, src, dst)
    h2 = 0.5 * step * step
    prop = cur + h2 * grad + step * xi
    pa, pb = prop[: src.dim], prop[src.dim:]
    lp2, grad2 = _whitened_state(t, T, pa, pb, src, dst)
    if not np.isfinite(lp2) or not np.all(np.isfinite(grad2)):
        warnings.warn("non-finite annealed density or gradient; MALA move rejected",
                      RuntimeWarning, stacklevel=3)
        accepted = False
    else:
        fwd = np.sum((prop - cur - h2 * grad) ** 2)
        bwd = np.sum((cur - prop - h2 * grad2) ** 2)
        log_alpha = lp2 - lp + (fwd - bwd) / (2.0 * step * step)
        accepted = bool(math.log(u) < log_alpha) if u > 0 else True
    if accepted:
        a, b = pa, pb
    x = src.map + src.inv_chol @ a
    y = dst.map + dst.inv_chol @ b
    return x, y, accepted


@dataclass(frozen=True)
class PathBatch:
    """Endpoints and log ratio estimates of a batch of bridges ``src -> dst``.

    ``log_r[j]`` estimates ``log pi(dst | D) - log pi(src | D)``; ``y[j]`` is the
    proposed state in ``dst`` and ``x[j]`` the end state of the ``src`` side.
    """

    x: np.ndarray
    y: np.ndarray
    log_r: np.ndarray
    mala_accepted: int


def draw_path_noise(rng, dim_dst, dim_pair, T):
    """Per-replicate draws in a fixed order: start point, MALA noise, MALA uniforms."""
    z0 = rng.standard_normal(dim_dst)
    xi = rng.standard_normal((max(T - 1, 0), dim_pair))
    u = rng.random(max(T - 1, 0))
    return z0, xi, u


def ais_paths(src: ModelInfo, x, dst: ModelInfo, cfg: AnnealConfig, noise) -> PathBatch:
    """Run one bridge per entry of ``noise`` (a list of ``draw_path_noise`` outputs).

    All replicates start from ``x`` in ``src``, or from row ``j`` of ``x`` when
    it holds one start point per replicate.
    """
    R = len(noise)
    T = cfg.T
    D = src.dim + dst.dim
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        if x.shape[0] != R:
            raise ValueError(f"{x.shape[0]} start points for {R} replicates")
        a0 = np.ascontiguousarray(solve_triangular(src.inv_chol, (x - src.map).T, lower=True).T)
    else:
        a0 = np.repeat(whiten(src, x)[None, :], R, axis=0)
    b0 = np.stack([n[0] for n in noise])
    xi = np.stack([n[1] for n in noise]).reshape(R, max(T - 1, 0), D)
    u = np.stack([n[2] for n in noise]).reshape(R, max(T - 1, 0))
    y_resp = src.y
    tau, lam, ltc, llt = src.kargs
    a, b, log_r, n_acc = _kernels.ais_paths(
        a0, b0, xi, u, T, cfg.step_size(src.dim, dst.dim),
        src.map, src.inv_chol, src.design, src.log_prior, src.log_q_const,
        dst.map, dst.inv_chol, dst.design, dst.log_prior, dst.log_q_const,
        y_resp, tau, lam, ltc, llt)
    xs = src.map + a @ src.inv_chol.T
    ys = dst.map + b @ dst.inv_chol.T
    return PathBatch(x=xs, y=ys, log_r=log_r, mala_accepted=int(n_acc))


def seeded_paths(src: ModelInfo, x, dst: ModelInfo, cfg: AnnealConfig, *, seed, chain,
                 iteration, purpose: Purpose, slot: int, replicates) -> PathBatch:
    """Bridges whose randomness comes from per-replicate counter streams."""
    noise = [draw_path_noise(scratch_stream(seed, chain, iteration, purpose, r, slot),
                             dst.dim, src.dim + dst.dim, cfg.T) for r in replicates]
    return ais_paths(src, x, dst, cfg, noise)


def ais_switch(x, src: ModelInfo, dst: ModelInfo, cfg: AnnealConfig, rng):
    """One bridge from ``(k, x)`` to ``k'``; returns the proposed state and ``log r_RJ2``."""
    if src.k == dst.k:
        raise ValueError("ais_switch needs two distinct models")
    batch = ais_paths(src, x, dst, cfg, [draw_path_noise(rng, dst.dim, src.dim + dst.dim, cfg.T)])
    return batch.y[0], float(batch.log_r[0])


def log_mean(log_values) -> float:
    """``log(mean(exp(v)))`` with a sorted, order-insensitive reduction."""
    v = np.sort(np.asarray(log_values, dtype=float))
    return float(logsumexp(v) - math.log(len(v)))


def combine_log_ratio(combiner: str, log_laplace_ratio: float, log_r) -> float:
    """Log-space version of :func:`combine_ratio`."""
    log_r = np.asarray(log_r, dtype=float)
    if combiner == "median":
        v = np.sort(np.append(log_r, log_laplace_ratio))
        m = len(v)
        if m % 2:
            return float(v[m // 2])
        lo, hi = v[m // 2 - 1], v[m // 2]
        return float(np.logaddexp(lo, hi) - math.log(2.0))
    if combiner == "simple_average":
        return log_mean(np.append(log_r, log_laplace_ratio))
    if combiner == "average_of_two":
        if log_r.size == 0:
            return float(log_laplace_ratio)
        return float(np.logaddexp(log_laplace_ratio, log_mean(log_r)) - math.log(2.0))
    raise ValueError(f"unknown combiner {combiner!r}; expected one of {COMBINERS}")


def combine_ratio(combiner: str, laplace_ratio: float, r_samples) -> float:
    """Merge the Laplace ratio with bridge estimates of the same posterior ratio."""
    r = np.asarray(r_samples, dtype=float)
    if laplace_ratio <= 0 or np.any(r <= 0):
        raise ValueError("ratios must be positive")
    with np.errstate(divide="ignore"):
        return math.exp(combine_log_ratio(combiner, math.log(laplace_ratio), np.log(r)))
