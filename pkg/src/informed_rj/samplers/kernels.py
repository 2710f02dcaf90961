"""Reversible-jump transition kernels and the chain driver.

Every step consumes randomness only through an :class:`IterationStreams`
object, so replaying the same ``(seed, chain, iteration)`` reproduces a step
bit for bit. Per iteration the CONTROL stream yields four uniforms in a fixed
order: model draw, acceptance, branch coin, replicate selection. A proposed
parameter vector for model ``k'`` always starts from the FORWARD stream of
slot ``k'``, replicate 0, which makes the informed step, the annealed step
with ``T = 1`` and the multi-estimate step with ``N = 1`` consume identical
numbers.

The model switch maps ``(x_k, u_k')`` to ``(y_k', u_k)`` by swapping the two
blocks, so its Jacobian is 1 and no Jacobian term appears below.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..diagnostics import ModelInfoCache, Trace, TraceRecord, switch_acceptance_rate
from ..laplace import BALANCING_KINDS, ProposalPmf, proposal_from_log_ratios
from ..model_space import check_model, format_model, n_columns, neighborhood
from ..rng import Purpose, check_seed, derived_seed, scratch_stream
from .annealing import AnnealConfig, PathBatch, combine_log_ratio, log_mean, seeded_paths
from .hmc import accept_log, hmc_propose

SAMPLERS = ("uninformed", "informed", "ais", "multi", "improved")
ELL_GRID = (0.5, 1.0, 2.0, 4.0)


class DimensionError(RuntimeError):
    """A transition produced a parameter vector of the wrong length."""


@dataclass(frozen=True, eq=False)
class ChainState:
    k: int
    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        expected = n_columns(self.k) + 1
        if x.shape != (expected,):
            raise DimensionError(f"model {format_model(self.k)} needs {expected} parameters, "
                                 f"got shape {x.shape}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    def __eq__(self, other):
        return (isinstance(other, ChainState) and self.k == other.k
                and np.array_equal(self.x, other.x))


@dataclass(frozen=True)
class IterationStreams:
    """All random streams available to one iteration of one chain."""

    seed: int
    chain: int
    iteration: int

    def control(self) -> np.ndarray:
        """``[u_model, u_accept, u_coin, u_select]``."""
        return scratch_stream(self.seed, self.chain, self.iteration, Purpose.CONTROL).random(4)

    def hmc(self):
        return scratch_stream(self.seed, self.chain, self.iteration, Purpose.HMC)

    def paths(self, src, x, dst, cfg: AnnealConfig, purpose: Purpose, replicates) -> PathBatch:
        return seeded_paths(src, x, dst, cfg, seed=self.seed, chain=self.chain,
                            iteration=self.iteration, purpose=purpose, slot=dst.k,
                            replicates=replicates)

    def paths_back(self, src, x, dst, cfg: AnnealConfig, purpose: Purpose, slot, replicates):
        """Reverse paths ``src -> dst`` keyed by the slot of the forward pair."""
        return seeded_paths(src, x, dst, cfg, seed=self.seed, chain=self.chain,
                            iteration=self.iteration, purpose=purpose, slot=slot,
                            replicates=replicates)


def _param_update(state, cache, rng: IterationStreams, correction=None):
    """HMC move within ``state.k``; ``correction(y)`` adds a log factor evaluated at the proposal."""
    info = cache.get(state.k)
    tuning = cache.hmc_tuning(state.k)
    y, log_alpha, u = hmc_propose(info, state.x, tuning, rng.hmc())
    if correction is not None and math.isfinite(log_alpha):
        log_alpha += correction(y)
    accepted = accept_log(u, log_alpha)
    nxt = ChainState(state.k, y) if accepted else state
    return nxt, ("param_update", state.k, accepted, log_alpha)


def _finish(state, nxt, it, rec):
    move, proposed, accepted, log_alpha = rec
    if nxt.x.shape[0] != n_columns(nxt.k) + 1:
        raise DimensionError(f"iteration {it}: dimension mismatch in model {nxt.k}")
    return nxt, TraceRecord(it, move, proposed, accepted, nxt.k, nxt.x, log_alpha)


def _check_h(h):
    if h not in BALANCING_KINDS:
        raise ValueError(f"unknown balancing function {h!r}; expected one of {BALANCING_KINDS}")


def _informed_like(state, h, cfg, cache, rng, it):
    uc = rng.control()
    g = _uniform_pmf(cache, state.k) if h is None else cache.proposal(state.k, h)
    k_new = g.sample(uc[0])
    if k_new == state.k:
        nxt, rec = _param_update(state, cache, rng)
    else:
        src, dst = cache.get(state.k), cache.get(k_new)
        batch = rng.paths(src, state.x, dst, cfg, Purpose.FORWARD, [0])
        g_back = _uniform_pmf(cache, k_new) if h is None else cache.proposal(k_new, h)
        log_alpha = g_back.log_prob(state.k) - g.log_prob(k_new) + float(batch.log_r[0])
        accepted = accept_log(uc[1], log_alpha)
        nxt = ChainState(k_new, batch.y[0]) if accepted else state
        rec = ("model_switch", k_new, accepted, log_alpha)
    return _finish(state, nxt, it, rec)


def _uniform_pmf(cache, k) -> ProposalPmf:
    members = neighborhood(k, cache.p_pred)
    return proposal_from_log_ratios(k, members, np.zeros(len(members)), None)


_T1 = AnnealConfig(T=1)


def rj_informed_step(state: ChainState, h, cache, rng: IterationStreams):
    """Informed proposal with a Laplace-Gaussian parameter draw."""
    _check_h(h)
    return _informed_like(state, h, _T1, cache, rng, rng.iteration)


def rj_uninformed_step(state: ChainState, cache, rng: IterationStreams):
    """Uniform proposal over the neighbourhood; parameters drawn as in the informed step."""
    return _informed_like(state, None, _T1, cache, rng, rng.iteration)


def rj_ais_step(state: ChainState, h, cfg: AnnealConfig, cache, rng: IterationStreams):
    """Informed proposal whose parameter draw is the end of one annealed bridge."""
    _check_h(h)
    return _informed_like(state, h, cfg, cache, rng, rng.iteration)


def _select(log_w, u) -> int:
    w = np.exp(np.asarray(log_w) - np.max(log_w))
    cdf = np.cumsum(w)
    i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(i, len(w) - 1)


def _one_forward_then_back(rng, src, x, dst, cfg, fwd_purpose, rev_purpose):
    """One path ``src -> dst`` and ``N - 1`` reverse paths from its end.

    Returns ``(forward batch, log estimates of pi(src) / pi(dst))`` where the
    estimates are ``1 / r_1`` followed by the reverse ratios.
    """
    fwd = rng.paths(src, x, dst, cfg, fwd_purpose, [0])
    back = [-float(fwd.log_r[0])]
    if cfg.N > 1:
        rev = rng.paths_back(dst, fwd.y[0], src, cfg, rev_purpose, dst.k, range(1, cfg.N))
        back.extend(rev.log_r.tolist())
    return fwd, np.asarray(back)


def rj_multi_step(state: ChainState, h, cfg: AnnealConfig, cache, rng: IterationStreams):
    """Annealed switch with ``N`` replicates and a fair coin between the two branches."""
    _check_h(h)
    uc = rng.control()
    g = cache.proposal(state.k, h)
    k_new = g.sample(uc[0])
    if k_new == state.k:
        nxt, rec = _param_update(state, cache, rng)
        return _finish(state, nxt, rng.iteration, rec)
    src, dst = cache.get(state.k), cache.get(k_new)
    log_g = cache.proposal(k_new, h).log_prob(state.k) - g.log_prob(k_new)
    if uc[2] <= 0.5:
        batch = rng.paths(src, state.x, dst, cfg, Purpose.FORWARD, range(cfg.N))
        j = _select(batch.log_r, uc[3])
        log_alpha = log_g + log_mean(batch.log_r)
        y = batch.y[j]
    else:
        fwd, back = _one_forward_then_back(rng, src, state.x, dst, cfg,
                                           Purpose.FORWARD, Purpose.REVERSE)
        log_alpha = log_g - log_mean(back)
        y = fwd.y[0]
    accepted = accept_log(uc[1], log_alpha)
    nxt = ChainState(k_new, y) if accepted else state
    return _finish(state, nxt, rng.iteration, ("model_switch", k_new, accepted, log_alpha))


# improved model proposal


def _ratios_many(rng, cache, k, x, targets, cfg, purpose):
    """Forward-type estimates of ``log pi(l) / pi(k)`` from ``N`` paths per target."""
    src = cache.get(k)
    out, batches = {}, {}
    for l in targets:
        dst = cache.get(l)
        batch = rng.paths(src, x, dst, cfg, purpose, range(cfg.N))
        batches[l] = batch
        out[l] = combine_log_ratio(cfg.combiner, dst.log_laplace - src.log_laplace, batch.log_r)
    return out, batches


def _ratios_one_back(rng, cache, k, x, targets, cfg, fwd_purpose, rev_purpose):
    """Reverse-type estimates: one path to ``l`` then ``N - 1`` paths back to ``k``."""
    src = cache.get(k)
    out, extra = {}, {}
    for l in targets:
        dst = cache.get(l)
        fwd, back = _one_forward_then_back(rng, src, x, dst, cfg, fwd_purpose, rev_purpose)
        extra[l] = (fwd, back)
        out[l] = -combine_log_ratio(cfg.combiner, src.log_laplace - dst.log_laplace, back)
    return out, extra


def _improved_pmf(cache, k, h, log_ratios: dict) -> ProposalPmf:
    members = neighborhood(k, cache.p_pred)
    lr = np.array([0.0 if m == k else log_ratios[m] for m in members])
    return proposal_from_log_ratios(k, members, lr, h)


def rj_improved_g_step(state: ChainState, h, cfg: AnnealConfig, cache, rng: IterationStreams):
    """Informed switch whose model proposal itself uses annealed ratio estimates."""
    _check_h(h)
    uc = rng.control()
    k, x = state.k, state.x
    others = [l for l in neighborhood(k, cache.p_pred) if l != k]
    forward_branch = uc[2] <= 0.5
    if forward_branch:
        ratios, batches = _ratios_many(rng, cache, k, x, others, cfg, Purpose.FORWARD)
    else:
        ratios, extra = _ratios_one_back(rng, cache, k, x, others, cfg,
                                         Purpose.FORWARD, Purpose.REVERSE)
    g = _improved_pmf(cache, k, h, ratios)
    k_new = g.sample(uc[0])

    def reverse_pmf(y, k_to, exclude, fixed):
        targets = [s for s in neighborhood(k_to, cache.p_pred) if s not in exclude]
        if forward_branch:
            est, _ = _ratios_one_back(rng, cache, k_to, y, targets, cfg,
                                      Purpose.NEIGHBOR_FWD, Purpose.NEIGHBOR_REV)
        else:
            est, _ = _ratios_many(rng, cache, k_to, y, targets, cfg, Purpose.NEIGHBOR_FWD)
        est.update(fixed)
        return _improved_pmf(cache, k_to, h, est)

    if k_new == k:
        def correction(y):
            g_rev = reverse_pmf(y, k, {k}, {})
            return g_rev.log_prob(k) - g.log_prob(k)

        nxt, rec = _param_update(state, cache, rng, correction=correction)
        return _finish(state, nxt, rng.iteration, rec)

    if forward_branch:
        batch = batches[k_new]
        j = _select(batch.log_r, uc[3])
        y = batch.y[j]
        log_r = log_mean(batch.log_r)
    else:
        fwd, back = extra[k_new]
        y = fwd.y[0]
        log_r = -log_mean(back)
    g_rev = reverse_pmf(y, k_new, {k, k_new}, {k: -ratios[k_new]})
    log_alpha = g_rev.log_prob(k) - g.log_prob(k_new) + log_r
    accepted = accept_log(uc[1], log_alpha)
    nxt = ChainState(k_new, y) if accepted else state
    return _finish(state, nxt, rng.iteration, ("model_switch", k_new, accepted, log_alpha))


# chain driver


@dataclass(frozen=True)
class SamplerSpec:
    sampler: str = "informed"
    h: str = "barker"
    anneal: AnnealConfig = field(default_factory=AnnealConfig)

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}; expected one of {SAMPLERS}")
        if self.sampler != "uninformed":
            _check_h(self.h)

    def step(self, state, cache, rng):
        s = self.sampler
        if s == "uninformed":
            return rj_uninformed_step(state, cache, rng)
        if s == "informed":
            return rj_informed_step(state, self.h, cache, rng)
        if s == "ais":
            return rj_ais_step(state, self.h, self.anneal, cache, rng)
        if s == "multi":
            return rj_multi_step(state, self.h, self.anneal, cache, rng)
        return rj_improved_g_step(state, self.h, self.anneal, cache, rng)


def initial_state(cache: ModelInfoCache) -> ChainState:
    """Greedy ascent of the Laplace evidence from the intercept-only model, at the MAP."""
    k = 0
    while True:
        best = max(neighborhood(k, cache.p_pred), key=lambda m: (cache.get(m).log_laplace, -m))
        if best == k:
            break
        k = best
    return ChainState(k, cache.get(k).map)


def run_chain(spec: SamplerSpec, cache: ModelInfoCache, iters: int, seed: int, chain: int = 0,
              start: ChainState | None = None, on_record=None) -> Trace:
    """Run ``iters`` transitions and return the trace (record ``i`` is the state after step ``i``)."""
    if int(iters) != iters or iters < 1:
        raise ValueError(f"iters must be a positive integer, got {iters}")
    seed = check_seed(seed)
    state = start if start is not None else initial_state(cache)
    check_model(state.k, cache.p_pred)
    trace = Trace()
    for it in range(iters):
        state, rec = spec.step(state, cache, IterationStreams(seed, chain, it))
        trace.append(rec)
        if on_record is not None:
            on_record(rec)
    return trace


@dataclass(frozen=True)
class EllSearch:
    best: float
    rates: dict


def tune_ell(spec: SamplerSpec, cache: ModelInfoCache, seed: int, iters=500, grid=ELL_GRID,
             start=None) -> EllSearch:
    """Line search of the MALA scale on short runs, maximizing switch acceptance.

    The calibration seed is derived from ``seed`` so that calibration never
    shares draws with the main chain. Ties keep the smaller scale.
    """
    cal_seed = derived_seed("ell", seed, spec.sampler, spec.h, spec.anneal.T, spec.anneal.N)
    rates = {}
    for ell in grid:
        anneal = AnnealConfig(spec.anneal.T, ell, spec.anneal.N, spec.anneal.combiner)
        trial = SamplerSpec(spec.sampler, spec.h, anneal)
        trace = run_chain(trial, cache, iters, cal_seed, start=start)
        rate = switch_acceptance_rate(trace)
        rates[ell] = -1.0 if rate is None else rate
    best = max(grid, key=lambda e: (rates[e], -e))
    return EllSearch(best, rates)


def timed_run(spec, cache, iters, seed, chain=0, start=None):
    t0 = time.perf_counter()
    trace = run_chain(spec, cache, iters, seed, chain, start)
    return trace, time.perf_counter() - t0
