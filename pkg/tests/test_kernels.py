import math

import numpy as np
import pytest
from scipy import stats

from informed_rj.datasets import synthetic_dataset
from informed_rj.diagnostics import ModelInfoCache, empirical_model_pmf, switch_acceptance_rate
from informed_rj.model_space import neighborhood
from informed_rj.oracle import exact_model_pmf_normal, tv_distance
from informed_rj.regression import Dataset, log_unnorm_posterior, normal_conditionals, normal_log_evidence
from informed_rj.samplers import AnnealConfig, ChainState, SamplerSpec, run_chain
from informed_rj.samplers.kernels import (
    ELL_GRID,
    DimensionError,
    IterationStreams,
    _uniform_pmf,
    initial_state,
    rj_informed_step,
    tune_ell,
)

VARIANTS = {
    "uninformed": SamplerSpec("uninformed"),
    "informed-sqrt": SamplerSpec("informed", "sqrt"),
    "informed-barker": SamplerSpec("informed", "barker"),
    "informed-identity": SamplerSpec("informed", "identity"),
    "ais-T3": SamplerSpec("ais", "barker", AnnealConfig(T=3)),
    "multi-T2-N3": SamplerSpec("multi", "sqrt", AnnealConfig(T=2, N=3)),
}


def same_trace(a, b):
    return (a.models == b.models and a.accepted == b.accepted and a.proposed == b.proposed
            and all(np.array_equal(p, q) for p, q in zip(a.params, b.params)))


@pytest.mark.parametrize("name", sorted(VARIANTS))
def test_short_run_stationarity(name, sixteen_cache, sixteen):
    trace = run_chain(VARIANTS[name], sixteen_cache, 20_000, seed=5)
    tv = tv_distance(empirical_model_pmf(trace), exact_model_pmf_normal(sixteen))
    assert tv < 0.04


@pytest.mark.slow
def test_improved_proposal_stationarity(sixteen_cache, sixteen):
    spec = SamplerSpec("improved", "barker", AnnealConfig(T=2, N=2))
    trace = run_chain(spec, sixteen_cache, 15_000, seed=6)
    tv = tv_distance(empirical_model_pmf(trace), exact_model_pmf_normal(sixteen))
    assert tv < 0.04


def test_exact_conditionals_reduce_ratio_to_posterior_ratio(sixteen):
    """log pi(k, x) minus the exact conditional density is the model evidence at every x."""
    rng = np.random.default_rng(0)
    for k in (0b0001, 0b1011):
        cond = normal_conditionals(k, sixteen)
        gaps = []
        for x in cond.sample(rng, 20):
            beta, eta = x[:-1], x[-1]
            cov = math.exp(2 * eta) * cond.gram_inv
            log_density = (stats.multivariate_normal.logpdf(beta, cond.beta_hat, cov)
                           + cond.log_eta_density(eta))
            gaps.append(log_unnorm_posterior("normal", k, x, sixteen) - log_density)
        assert np.allclose(gaps, normal_log_evidence(k, sixteen), atol=1e-8)


def test_uniform_proposal(sixteen_cache):
    pmf = _uniform_pmf(sixteen_cache, 0b0110)
    assert np.allclose(pmf.probs, 1 / 5)
    assert list(pmf.members) == neighborhood(0b0110, 4)


def test_nonnegative_log_alpha_is_always_accepted(sixteen_cache):
    for spec in (VARIANTS["informed-barker"], VARIANTS["multi-T2-N3"]):
        trace = run_chain(spec, sixteen_cache, 2000, seed=8)
        la = np.array(trace.log_alpha)
        acc = np.array(trace.accepted)
        assert np.all(acc[la >= 0])


def test_replaying_an_iteration_reproduces_it(sixteen_cache):
    spec = VARIANTS["multi-T2-N3"]
    trace = run_chain(spec, sixteen_cache, 300, seed=21)
    start = initial_state(sixteen_cache)
    states = [start] + [ChainState(trace.models[i], trace.params[i]) for i in range(len(trace))]
    for it in (0, 17, 150, 299):
        _, rec = spec.step(states[it], sixteen_cache, IterationStreams(21, 0, it))
        assert rec.k == trace.models[it] and np.array_equal(rec.x, trace.params[it])
        assert rec.accepted == trace.accepted[it]


def test_chains_are_deterministic_and_seed_dependent(sixteen_cache):
    spec = VARIANTS["ais-T3"]
    a = run_chain(spec, sixteen_cache, 400, seed=3)
    b = run_chain(spec, sixteen_cache, 400, seed=3)
    c = run_chain(spec, sixteen_cache, 400, seed=4)
    d = run_chain(spec, sixteen_cache, 400, seed=3, chain=1)
    assert same_trace(a, b)
    assert not same_trace(a, c)
    assert not same_trace(a, d)


def test_single_bridge_and_single_replicate_degeneracies(sixteen_cache):
    informed = run_chain(SamplerSpec("informed", "barker"), sixteen_cache, 1500, seed=9)
    ais = run_chain(SamplerSpec("ais", "barker", AnnealConfig(T=1)), sixteen_cache, 1500, seed=9)
    multi = run_chain(SamplerSpec("multi", "barker", AnnealConfig(T=1, N=1)), sixteen_cache, 1500, seed=9)
    assert same_trace(informed, ais)
    assert same_trace(informed, multi)
    ais3 = run_chain(SamplerSpec("ais", "sqrt", AnnealConfig(T=3)), sixteen_cache, 1500, seed=9)
    multi3 = run_chain(SamplerSpec("multi", "sqrt", AnnealConfig(T=3, N=1)), sixteen_cache, 1500, seed=9)
    assert same_trace(ais3, multi3)
    assert np.allclose(ais3.log_alpha, multi3.log_alpha, rtol=0, atol=1e-12)


def test_empty_neighbourhood_gives_parameter_updates_only():
    rng = np.random.default_rng(0)
    data = Dataset.from_arrays(np.empty((30, 0)), 1.0 + rng.standard_normal(30))
    cache = ModelInfoCache(data)
    for spec in (SamplerSpec("improved", "barker", AnnealConfig(T=2, N=2)), SamplerSpec("uninformed")):
        trace = run_chain(spec, cache, 200, seed=1)
        assert not any(trace.switch)
        assert switch_acceptance_rate(trace) is None
        assert set(trace.models) == {0}
        assert np.mean(trace.accepted) > 0.3


def test_dimension_mismatch_is_refused(sixteen_cache):
    with pytest.raises(DimensionError):
        ChainState(0b11, np.zeros(3))
    state = ChainState(0b11, sixteen_cache.get(0b11).map)
    with pytest.raises(ValueError):
        state.x[0] = 1.0


def test_every_transition_has_matching_dimensions(sixteen_cache):
    trace = run_chain(VARIANTS["uninformed"], sixteen_cache, 1000, seed=2)
    for k, x in zip(trace.models, trace.params):
        assert x.shape == (k.bit_count() + 2,)


def test_informed_step_rejects_unknown_balancing(sixteen_cache):
    state = initial_state(sixteen_cache)
    with pytest.raises(ValueError):
        rj_informed_step(state, "cube", sixteen_cache, IterationStreams(0, 0, 0))
    with pytest.raises(ValueError):
        SamplerSpec("gibbs")


def test_initial_state_is_greedy_laplace_optimum(sixteen_cache):
    state = initial_state(sixteen_cache)
    best = sixteen_cache.get(state.k).log_laplace
    for m in neighborhood(state.k, 4):
        assert sixteen_cache.get(m).log_laplace <= best
    assert np.array_equal(state.x, sixteen_cache.get(state.k).map)


def test_annealing_raises_switch_acceptance():
    data = synthetic_dataset(80, 4, coef=[0.6, 0.3, 0.0, 0.2], seed=4, correlation=0.4)
    cache = ModelInfoCache(data)
    plain = switch_acceptance_rate(run_chain(SamplerSpec("informed", "barker"), cache, 4000, seed=1))
    annealed = switch_acceptance_rate(
        run_chain(SamplerSpec("ais", "barker", AnnealConfig(T=8)), cache, 4000, seed=1))
    assert annealed > plain


def test_ell_line_search(sixteen_cache):
    spec = SamplerSpec("ais", "barker", AnnealConfig(T=3))
    result = tune_ell(spec, sixteen_cache, seed=2, iters=200)
    assert result.best in ELL_GRID
    assert set(result.rates) == set(ELL_GRID)
    assert result.rates[result.best] == max(result.rates.values())
    assert tune_ell(spec, sixteen_cache, seed=2, iters=200) == result
