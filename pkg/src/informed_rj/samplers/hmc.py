"""Vanilla HMC for within-model parameter updates, and its path-independent tuner."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .. import _kernels
from ..diagnostics import ess_scalar
from ..laplace import ModelInfo

TRAJ_GRID = (5, 10, 20, 40)


@dataclass(frozen=True, eq=False)
class HmcTuning:
    """Step size, leapfrog count and diagonal mass matrix (momentum ~ N(0, diag(mass_diag)))."""

    step_size: float
    traj_len: int
    mass_diag: np.ndarray
    fallback: bool = field(default=False, compare=False)

    def __post_init__(self):
        m = np.ascontiguousarray(self.mass_diag, dtype=float)
        if not (self.step_size > 0 and math.isfinite(self.step_size)):
            raise ValueError(f"step_size must be positive and finite, got {self.step_size}")
        if int(self.traj_len) != self.traj_len or self.traj_len < 1:
            raise ValueError(f"traj_len must be a positive integer, got {self.traj_len}")
        if m.ndim != 1 or not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise ValueError("mass_diag must be a positive finite vector")
        object.__setattr__(self, "mass_diag", m)
        object.__setattr__(self, "traj_len", int(self.traj_len))

    def __eq__(self, other):
        return (isinstance(other, HmcTuning) and self.step_size == other.step_size
                and self.traj_len == other.traj_len
                and np.array_equal(self.mass_diag, other.mass_diag))


class GaussianTarget:
    """Multivariate normal log density; handy for checking the integrator."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        self.prec = np.linalg.inv(np.atleast_2d(cov))

    @property
    def dim(self):
        return self.mean.shape[0]

    def logpost_grad(self, x):
        d = x - self.mean
        g = -self.prec @ d
        return 0.5 * float(d @ g), g


def leapfrog(target, q, p, step, n_steps, inv_mass):
    """Integrate Hamilton's equations; returns ``(q, p, log density, gradient)``."""
    if isinstance(target, ModelInfo):
        lp, g = target.logpost_grad(q)
        q, p, lp, g = _kernels.leapfrog(q, p, lp - target.log_prior, g, step, n_steps, inv_mass,
                                        target.design, target.y, *target.kargs)
        return q, p, lp + target.log_prior, g
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    lp, g = target.logpost_grad(q)
    for _ in range(n_steps):
        p = p + 0.5 * step * g
        q = q + step * inv_mass * p
        lp, g = target.logpost_grad(q)
        p = p + 0.5 * step * g
    return q, p, lp, g


def hmc_propose(target, x, tuning: HmcTuning, rng):
    """Leapfrog proposal from ``x`` with fresh momentum.

    Draw order: momentum (``dim`` normals), then one uniform. Returns
    ``(proposal, log_alpha, u)`` where ``log_alpha = -dH`` (``-inf`` when the
    trajectory produced non-finite values).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != tuning.mass_diag.shape:
        raise ValueError(f"tuning has {tuning.mass_diag.size} dims, state has {x.size}")
    mass = tuning.mass_diag
    inv_mass = 1.0 / mass
    p0 = rng.standard_normal(x.shape[0]) * np.sqrt(mass)
    u = rng.random()
    lp0, _ = target.logpost_grad(x)
    q1, p1, lp1, _ = leapfrog(target, x, p0, tuning.step_size, tuning.traj_len, inv_mass)
    h0 = -lp0 + 0.5 * np.sum(p0 * p0 * inv_mass)
    h1 = -lp1 + 0.5 * np.sum(p1 * p1 * inv_mass)
    dh = h1 - h0
    if not (np.isfinite(dh) and np.all(np.isfinite(q1))):
        warnings.warn("non-finite Hamiltonian; HMC proposal rejected", RuntimeWarning, stacklevel=3)
        return x, -math.inf, u
    return q1, float(-dh), u


def accept_log(u: float, log_alpha: float) -> bool:
    """``u <= min(1, exp(log_alpha))`` evaluated without overflow; NaN rejects."""
    if math.isnan(log_alpha):
        return False
    if log_alpha >= 0.0 or u == 0.0:
        return True
    return math.log(u) <= log_alpha


def hmc_update(target, x, tuning: HmcTuning, rng, return_energy_error=False):
    """One HMC transition; momentum is drawn fresh on every call.

    Returns ``(x, accepted)``, plus ``|dH|`` when ``return_energy_error``.
    """
    q1, log_alpha, u = hmc_propose(target, x, tuning, rng)
    accepted = accept_log(u, log_alpha)
    out = q1 if accepted else np.asarray(x, dtype=float)
    if return_energy_error:
        return out, accepted, abs(log_alpha)
    return out, accepted


class _DualAveraging:
    """Step-size adaptation toward a target acceptance (Nesterov dual averaging)."""

    def __init__(self, step0, target=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * step0)
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.h_bar = 0.0
        self.log_step = math.log(step0)
        self.log_step_bar = 0.0
        self.m = 0

    def update(self, accept_prob):
        self.m += 1
        m = self.m
        w = 1.0 / (m + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept_prob)
        self.log_step = self.mu - math.sqrt(m) / self.gamma * self.h_bar
        eta = m ** -self.kappa
        self.log_step_bar = eta * self.log_step + (1 - eta) * self.log_step_bar

    @property
    def step(self):
        return math.exp(self.log_step)

    @property
    def final_step(self):
        return math.exp(self.log_step_bar)


def _accept_prob(target, x, tuning, rng):
    mass = tuning.mass_diag
    inv_mass = 1.0 / mass
    p0 = rng.standard_normal(x.shape[0]) * np.sqrt(mass)
    u = rng.random()
    lp0, _ = target.logpost_grad(x)
    q1, p1, lp1, _ = leapfrog(target, x, p0, tuning.step_size, tuning.traj_len, inv_mass)
    dh = (-lp1 + 0.5 * np.sum(p1 * p1 * inv_mass)) - (-lp0 + 0.5 * np.sum(p0 * p0 * inv_mass))
    if not (np.isfinite(dh) and np.all(np.isfinite(q1))):
        return x, 0.0
    prob = math.exp(min(0.0, -dh))
    return (q1 if u < prob else x), prob


def fallback_tuning(start_var) -> HmcTuning:
    d = len(start_var)
    return HmcTuning(step_size=0.1 / math.sqrt(d), traj_len=10,
                     mass_diag=1.0 / np.asarray(start_var, dtype=float), fallback=True)


def hmc_autotune(target, start, start_var, rng, traj_grid=TRAJ_GRID, warmup=400,
                 eval_iters=200, target_accept=0.8) -> HmcTuning:
    """Tune HMC from a pilot chain started at ``start``.

    ``start_var`` is the initial inverse mass (the diagonal of the inverse
    observed information for model posteriors). The first warmup half adapts
    the step with that mass. The mass is then reset to the inverse pilot
    marginal variances and the step is adapted again. Finally each trajectory
    length in ``traj_grid`` is scored by the minimum marginal ESS of an
    evaluation run.
    """
    start = np.asarray(start, dtype=float)
    var0 = np.asarray(start_var, dtype=float)
    d = start.shape[0]
    try:
        x = start.copy()
        mass = 1.0 / var0
        base_len = 10
        da = _DualAveraging(0.5 / math.sqrt(d), target_accept)
        half = warmup // 2
        draws = []
        for i in range(half):
            x, prob = _accept_prob(target, x, HmcTuning(da.step, base_len, mass), rng)
            da.update(prob)
            if i >= half // 2:
                draws.append(x)
        sd = np.std(np.asarray(draws), axis=0)
        if np.all(sd > 0) and np.all(np.isfinite(sd)):
            mass = 1.0 / sd ** 2
        da = _DualAveraging(da.final_step, target_accept)
        for _ in range(warmup - half):
            x, prob = _accept_prob(target, x, HmcTuning(da.step, base_len, mass), rng)
            da.update(prob)
        step = da.final_step
        if not (math.isfinite(step) and step > 1e-8):
            raise FloatingPointError("step size collapsed")
        best, best_ess = None, -math.inf
        for L in traj_grid:
            tuning = HmcTuning(step, L, mass)
            xe = x.copy()
            chain = np.empty((eval_iters, d))
            acc = 0
            for i in range(eval_iters):
                xe, ok = hmc_update(target, xe, tuning, rng)
                acc += ok
                chain[i] = xe
            if acc < 0.1 * eval_iters:
                continue
            score = min(ess_scalar(chain[:, j]) for j in range(d))
            if score > best_ess:
                best, best_ess = tuning, score
        if best is None:
            raise FloatingPointError("every trajectory length rejected almost all proposals")
        return best
    except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        warnings.warn(f"HMC tuning failed ({exc}); using the fallback tuning",
                      RuntimeWarning, stacklevel=2)
        return fallback_tuning(var0)
