import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from informed_rj.model_space import (
    DegenerateDesignError,
    all_models,
    check_model,
    covariates,
    format_model,
    from_covariates,
    log_model_prior,
    n_columns,
    neighborhood,
)
from informed_rj.regression import Dataset


def test_neighborhood_of_empty_model():
    assert neighborhood(0, 3) == [0, from_covariates([1]), from_covariates([2]), from_covariates([3])]


def test_neighborhood_of_pair():
    k = from_covariates([1, 2])
    expected = sorted([from_covariates([2]), from_covariates([1]), k, from_covariates([1, 2, 3])])
    assert neighborhood(k, 3) == expected


def test_neighborhood_size_with_eight_predictors():
    k = from_covariates([1, 2, 3, 6])
    nb = neighborhood(k, 8)
    assert len(nb) == 9
    adds = [m for m in nb if m & k == k and m != k]
    drops = [m for m in nb if m & k == m and m != k]
    assert len(adds) == 4 and len(drops) == 4


@given(st.integers(1, 12).flatmap(lambda p: st.tuples(st.just(p), st.integers(0, (1 << p) - 1))))
def test_neighborhood_symmetric_and_sized(pk):
    p, k = pk
    nb = neighborhood(k, p)
    assert len(nb) == p + 1 == len(set(nb))
    assert nb == sorted(nb)
    for m in nb:
        assert k in neighborhood(m, p)


def test_covariate_labels_and_format():
    k = from_covariates([2, 3])
    assert k == 6
    assert covariates(k) == [2, 3]
    assert n_columns(k) == 3
    assert format_model(k) == '6 "{2,3}"'
    assert format_model(0) == '0 "{}"'


def test_check_model_bounds():
    check_model(7, 3)
    with pytest.raises(ValueError):
        check_model(8, 3)
    with pytest.raises(ValueError):
        check_model(0, 63)
    assert len(all_models(4)) == 16


def test_prior_of_intercept_only_is_zero(toy):
    assert log_model_prior(0, toy) == pytest.approx(0.0, abs=1e-12)


def test_prior_vanishes_for_orthonormal_columns():
    n = 8
    H = np.array([[1, 1, 1, 1, 1, 1, 1, 1],
                  [1, -1, 1, -1, 1, -1, 1, -1],
                  [1, 1, -1, -1, 1, 1, -1, -1],
                  [1, -1, -1, 1, 1, -1, -1, 1]], dtype=float).T
    data = Dataset.from_arrays(H[:, 1:], np.arange(n, dtype=float))
    for k in all_models(3):
        assert log_model_prior(k, data) == pytest.approx(0.0, abs=1e-12)


def test_prior_matches_direct_determinant():
    rng = np.random.default_rng(5)
    C = np.column_stack([np.ones(5), rng.standard_normal((5, 2))])
    data = Dataset(y=rng.standard_normal(5), C=C)
    expected = 0.5 * np.log(np.linalg.det(C.T @ C)) - 1.5 * np.log(5)
    assert log_model_prior(3, data) == pytest.approx(expected, rel=1e-12)


def test_prior_invariant_to_row_permutation(toy):
    perm = np.random.default_rng(2).permutation(toy.n)
    shuffled = Dataset(y=toy.y[perm], C=toy.C[perm])
    for k in all_models(toy.p_pred):
        assert log_model_prior(k, shuffled) == pytest.approx(log_model_prior(k, toy), abs=1e-12)


def test_singular_design_is_reported():
    C = np.column_stack([np.ones(6), np.arange(6.0), 2 * np.arange(6.0)])
    data = Dataset(y=np.arange(6.0), C=C)
    with pytest.raises(DegenerateDesignError, match="3"):
        log_model_prior(3, data)
