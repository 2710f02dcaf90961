import numpy as np
import pytest
from sklearn.base import clone

from informed_rj import InformedRJRegressor
from informed_rj.datasets import synthetic_arrays


@pytest.fixture(scope="module")
def arrays():
    X, y = synthetic_arrays(120, 3, coef=[1.0, 0.0, -0.6], seed=3, intercept=2.0)
    return 5.0 * X + 1.0, y


def test_params_round_trip_and_clone():
    est = InformedRJRegressor(sampler="ais", T=4, iters=300)
    params = est.get_params()
    assert params["sampler"] == "ais" and params["T"] == 4
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(h="sqrt")
    assert est.h == "sqrt"


def test_fit_recovers_active_predictors(arrays):
    X, y = arrays
    est = InformedRJRegressor(iters=3000, seed=1).fit(X, y)
    assert est.inclusion_probs_[0] > 0.95 and est.inclusion_probs_[2] > 0.95
    assert est.inclusion_probs_[1] < 0.5
    assert abs(sum(est.model_probs_.values()) - 1) < 1e-12
    assert est.coef_[0] == pytest.approx(0.2, abs=0.05)
    assert est.coef_[2] == pytest.approx(-0.12, abs=0.05)
    pred = est.predict(X)
    assert pred.shape == (len(y),)
    assert est.score(X, y) > 0.5
    assert est.summary_.iters == 3000 and est.summary_.burnin == 300


def test_fit_is_deterministic(arrays):
    X, y = arrays
    a = InformedRJRegressor(iters=500, seed=4).fit(X, y)
    b = InformedRJRegressor(iters=500, seed=4).fit(X, y)
    assert np.array_equal(a.coef_, b.coef_) and a.model_probs_ == b.model_probs_


def test_lptn_kind_fits(arrays):
    X, y = arrays
    est = InformedRJRegressor(model_kind="lptn", iters=400, seed=2).fit(X, y)
    assert np.all(np.isfinite(est.coef_))


@pytest.mark.parametrize("bad", [dict(sampler="gibbs"), dict(model_kind="cauchy"), dict(iters=1),
                                 dict(iters=100, burnin=100), dict(T=0)])
def test_invalid_parameters_raise_on_fit(arrays, bad):
    X, y = arrays
    with pytest.raises(ValueError):
        InformedRJRegressor(**bad).fit(X, y)


def test_predict_checks(arrays):
    X, y = arrays
    with pytest.raises(Exception):
        InformedRJRegressor().predict(X)
    est = InformedRJRegressor(iters=100).fit(X, y)
    with pytest.raises(ValueError):
        est.predict(X[:, :2])
