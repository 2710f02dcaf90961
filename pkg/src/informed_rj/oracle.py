"""Reference answers: exact and importance-sampled model PMFs, ideal model chains, quadrature."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .laplace import build_model_info, log_balancing
from .model_space import all_models, design_columns, format_model, log_model_prior
from .regression import Dataset, kernel_args, normal_conditionals, normal_log_evidence
from .rng import Purpose, stream

ENUMERATION_LIMIT = 20
PMF_SOURCES = ("exact_normal", "golden_lptn", "golden_normal", "empirical")


class EnumerationLimitError(ValueError):
    """The model space is too large to enumerate."""


class LowEssError(RuntimeError):
    """Importance sampling was too degenerate for some models."""

    def __init__(self, models, ess):
        self.models = list(models)
        self.ess = list(ess)
        listing = ", ".join(f"{format_model(k)} (ESS {e:.1f})" for k, e in zip(models, ess))
        super().__init__(f"importance-sampling ESS below threshold for: {listing}")


@dataclass(frozen=True, eq=False)
class ModelPmf:
    """Probabilities over models, stored sorted by model bits."""

    models: np.ndarray
    probs: np.ndarray
    source: str = "empirical"

    def __post_init__(self):
        models = np.asarray(self.models, dtype=np.int64)
        probs = np.asarray(self.probs, dtype=float)
        if models.shape != probs.shape or models.ndim != 1:
            raise ValueError("models and probs must be 1-D arrays of equal length")
        order = np.argsort(models, kind="stable")
        models, probs = models[order], probs[order]
        if np.any(np.diff(models) == 0):
            raise ValueError("duplicate models in PMF")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-10:
            raise ValueError(f"probabilities must be nonnegative and sum to 1 (sum={probs.sum()!r})")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_log_weights(cls, models, log_w, source):
        log_w = np.asarray(log_w, dtype=float)
        log_z = logsumexp(np.sort(log_w))
        return cls(np.asarray(models), np.exp(log_w - log_z), source)

    @classmethod
    def from_dict(cls, mapping, source="empirical"):
        keys = sorted(mapping)
        return cls(np.array(keys, dtype=np.int64), np.array([mapping[k] for k in keys]), source)

    def prob(self, k) -> float:
        i = np.searchsorted(self.models, k)
        if i < len(self.models) and self.models[i] == k:
            return float(self.probs[i])
        return 0.0

    def as_dict(self) -> dict:
        return {int(k): float(p) for k, p in zip(self.models, self.probs)}

    def top(self, count=5):
        order = np.argsort(-self.probs, kind="stable")[:count]
        return [(int(self.models[i]), float(self.probs[i])) for i in order]

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(f"# source={self.source}\n")
            for k, p in zip(self.models, self.probs):
                fh.write(f"{int(k)}\t{float(p):.17g}\n")

    @classmethod
    def read(cls, path) -> "ModelPmf":
        models, probs, source = [], [], "empirical"
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    if line[1:].strip().startswith("source="):
                        source = line.split("=", 1)[1].strip()
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 'bits probability'")
                models.append(int(parts[0]))
                probs.append(float(parts[1]))
        probs = np.array(probs)
        return cls(np.array(models, dtype=np.int64), probs / probs.sum(), source)


def tv_distance(p: ModelPmf, q: ModelPmf) -> float:
    """Half the L1 distance over the union of both supports."""
    support = np.union1d(p.models, q.models)
    pv = np.zeros(len(support))
    qv = np.zeros(len(support))
    pv[np.searchsorted(support, p.models)] = p.probs
    qv[np.searchsorted(support, q.models)] = q.probs
    return float(min(1.0, 0.5 * np.abs(pv - qv).sum()))


def _check_enumerable(data: Dataset):
    if data.p_pred > ENUMERATION_LIMIT:
        raise EnumerationLimitError(
            f"p_pred={data.p_pred} exceeds the enumeration bound of {ENUMERATION_LIMIT}")


def exact_model_pmf_normal(data: Dataset) -> ModelPmf:
    """Normalized closed-form posterior model probabilities under normal errors."""
    _check_enumerable(data)
    models = np.fromiter(all_models(data.p_pred), dtype=np.int64)
    log_ev = np.array([normal_log_evidence(int(k), data) for k in models])
    return ModelPmf.from_log_weights(models, log_ev, "exact_normal")


@dataclass(frozen=True)
class GoldenResult:
    pmf: ModelPmf
    log_evidence: np.ndarray
    ess: np.ndarray


def importance_log_evidence(info, budget, rng):
    """Self-normalized IS with the Laplace Gaussian; returns ``(log evidence, ESS)``."""
    z = rng.standard_normal((budget, info.dim))
    X = info.draw_proposal(z)
    lp, _ = info.logpost_grad_batch(X)
    log_q = info.log_q_const - 0.5 * np.einsum("ij,ij->i", z, z)
    log_w = lp - log_q
    log_w = np.where(np.isfinite(log_w), log_w, -np.inf)
    log_sum = logsumexp(np.sort(log_w))
    ess = math.exp(2 * log_sum - logsumexp(np.sort(2 * log_w)))
    return float(log_sum - math.log(budget)), ess


def golden_model_pmf(data: Dataset, model_kind="lptn", budget=100_000, seed=0, rho=0.95,
                     min_ess=100.0) -> GoldenResult:
    """Model PMF from per-model importance sampling (independent of the samplers)."""
    _check_enumerable(data)
    if budget < 10_000:
        raise ValueError(f"budget must be at least 1e4 draws per model, got {budget}")
    models = np.fromiter(all_models(data.p_pred), dtype=np.int64)
    log_ev = np.empty(len(models))
    ess = np.empty(len(models))
    for i, k in enumerate(models):
        info = build_model_info(model_kind, int(k), data, rho)
        rng = stream(seed, 0, 0, Purpose.ORACLE, 0, int(k))
        log_ev[i], ess[i] = importance_log_evidence(info, budget, rng)
    bad = ess < min_ess
    if np.any(bad):
        raise LowEssError(models[bad].tolist(), ess[bad].tolist())
    source = "golden_lptn" if model_kind == "lptn" else "golden_normal"
    return GoldenResult(ModelPmf.from_log_weights(models, log_ev, source), log_ev, ess)


def golden_model_pmf_lptn(data: Dataset, budget=100_000, seed=0, rho=0.95) -> ModelPmf:
    return golden_model_pmf(data, "lptn", budget, seed, rho).pmf


def _log_dense_pmf(pmf: ModelPmf, p_pred):
    out = np.full(1 << p_pred, -np.inf)
    with np.errstate(divide="ignore"):
        out[pmf.models] = np.log(pmf.probs)
    return out


def _neighbors_table(p_pred):
    ks = np.arange(1 << p_pred, dtype=np.int64)
    flips = ks[:, None] ^ (np.int64(1) << np.arange(p_pred, dtype=np.int64))[None, :]
    return np.sort(np.column_stack([flips, ks]), axis=1)


def ideal_proposal_tables(pmf: ModelPmf, h, p_pred):
    """Neighbour table, log proposal probabilities and ``log c(k)`` for every model."""
    logp = _log_dense_pmf(pmf, p_pred)
    nb = _neighbors_table(p_pred)
    with np.errstate(invalid="ignore"):
        log_ratio = logp[nb] - logp[:, None]
        lw = log_balancing(h, log_ratio)
    lw = np.where(np.isnan(lw), -np.inf, lw)
    log_c = logsumexp(np.sort(lw, axis=1), axis=1)
    return nb, lw - log_c[:, None], log_c


def ideal_switch_acceptance(pmf: ModelPmf, h: str, p_pred: int) -> float:
    """Stationary switch acceptance rate of the ideal model-space MH sampler (no simulation)."""
    logp = _log_dense_pmf(pmf, p_pred)
    nb, log_g, _ = ideal_proposal_tables(pmf, h, p_pred)
    log_g_back = _reverse_log_g(nb, log_g)
    with np.errstate(invalid="ignore"):
        log_alpha = np.minimum(0.0, logp[nb] + log_g_back - logp[:, None] - log_g)
    switch = nb != np.arange(len(nb))[:, None]
    w = np.exp(logp)[:, None] * np.exp(log_g) * switch
    alpha = np.exp(np.where(np.isfinite(log_alpha), log_alpha, -np.inf))
    return float(np.sum(w * alpha) / np.sum(w))


def _reverse_log_g(nb, log_g):
    """``log g(k', k)`` laid out like ``log_g`` (row k, column of k')."""
    out = np.empty_like(log_g)
    for k in range(len(nb)):
        for j, kp in enumerate(nb[k]):
            out[k, j] = log_g[kp, np.searchsorted(nb[kp], k)]
    return out


@dataclass(frozen=True)
class IdealChain:
    models: np.ndarray
    proposed: np.ndarray
    accepted: np.ndarray
    log_alpha: np.ndarray

    @property
    def switch_acceptance_rate(self):
        switch = self.proposed != np.concatenate([[self.models[0]], self.models[:-1]])
        return float(self.accepted[switch].mean()) if switch.any() else math.nan


def ideal_mh_model_chain(pmf: ModelPmf, h: str, iters: int, seed: int, p_pred: int,
                         start=None) -> IdealChain:
    """Metropolis-Hastings on models with the exact PMF inside a balanced proposal."""
    logp = _log_dense_pmf(pmf, p_pred)
    nb, log_g, _ = ideal_proposal_tables(pmf, h, p_pred)
    rng = stream(seed, 0, 0, Purpose.ORACLE, 1)
    k = int(pmf.models[np.argmax(pmf.probs)]) if start is None else int(start)
    models = np.empty(iters, dtype=np.int64)
    proposed = np.empty(iters, dtype=np.int64)
    accepted = np.zeros(iters, dtype=bool)
    log_alpha = np.zeros(iters)
    cdfs = np.cumsum(np.exp(log_g), axis=1)
    u_model = rng.random(iters)
    u_acc = rng.random(iters)
    for i in range(iters):
        row = cdfs[k]
        j = min(int(np.searchsorted(row, u_model[i] * row[-1], side="right")), row.size - 1)
        kp = int(nb[k, j])
        proposed[i] = kp
        if kp != k:
            back = log_g[kp, np.searchsorted(nb[kp], k)]
            la = min(0.0, logp[kp] + back - logp[k] - log_g[k, j])
            log_alpha[i] = la
            if u_acc[i] < math.exp(la):
                k = kp
                accepted[i] = True
        else:
            accepted[i] = True
        models[i] = k
    return IdealChain(models, proposed, accepted, log_alpha)


def _gauss_legendre_panels(lo, hi, panels, nodes):
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    return pts, wts


def _log_integral(k, data, args, log_prior, eta_range, u_half, eta_rule, u_nodes):
    Ck = data.design(k)
    n, d = Ck.shape
    G = Ck.T @ Ck
    beta0 = np.linalg.solve(G, Ck.T @ data.y)
    # beta = beta0 + exp(eta) * R u with R R' = G^-1, so the box in u does not depend on eta
    R = np.linalg.cholesky(np.linalg.inv(G))
    log_det_R = float(np.sum(np.log(np.diag(R))))
    eta_pts, eta_wts = _gauss_legendre_panels(*eta_range, *eta_rule)
    u1, w1 = _gauss_legendre_panels(-u_half, u_half, 1, u_nodes)
    grids = np.meshgrid(*([u1] * d), indexing="ij")
    U = np.column_stack([g.ravel() for g in grids])
    logW = np.sum(np.log(np.stack(np.meshgrid(*([w1] * d), indexing="ij"))).reshape(d, -1), axis=0)
    tau, lam, ltc, llt = args
    terms = np.empty(len(eta_pts))
    for i, eta in enumerate(eta_pts):
        B = beta0 + math.exp(eta) * (U @ R.T)
        X = np.column_stack([B, np.full(len(B), eta)])
        lp, _ = _kernels.logpost_grad_batch(X, Ck, data.y, tau, lam, ltc, llt)
        terms[i] = logsumexp(lp + logW) + d * eta + log_det_R + math.log(eta_wts[i])
    return float(logsumexp(np.sort(terms)) + log_prior)


def brute_force_evidence(model_kind, k, data: Dataset, rho=0.95, include_model_prior=True,
                         u_half=10.0, resolution=1):
    """Tensor Gauss-Legendre quadrature of the unnormalized posterior over ``(beta, eta)``.

    Returns ``(log integral, error estimate)``; the estimate is the change
    between two rule resolutions. Supports ``d_k <= 3`` (up to 4 dimensions).
    """
    d = len(design_columns(k))
    if d > 3:
        raise ValueError(f"brute-force quadrature supports d_k <= 3, model {format_model(k)} has {d}")
    args = kernel_args(model_kind, rho)
    cond = normal_conditionals(k, data)
    eta_hat = cond.eta_mode
    Ck = data.design(k)
    beta_hat = cond.beta_hat

    # eta range: where the profile along eta (beta held at its OLS value) is within 60 nats
    def profile(eta):
        return _kernels.logpost_grad(np.append(beta_hat, eta), Ck, data.y, *args)[0]

    top = profile(eta_hat)
    lo = hi = eta_hat
    while profile(lo) > top - 60.0:
        lo -= 0.25
    while profile(hi) > top - 60.0:
        hi += 0.25
    log_prior = log_model_prior(k, data) if include_model_prior else 0.0
    base = (8 * resolution, 12), 24 * resolution
    fine = (12 * resolution, 12), 32 * resolution
    coarse = _log_integral(k, data, args, log_prior, (lo, hi), u_half, *base)
    value = _log_integral(k, data, args, log_prior, (lo, hi), u_half, *fine)
    return value, abs(math.expm1(coarse - value))

