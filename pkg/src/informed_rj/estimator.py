"""Scikit-learn style front end: Bayesian model averaging by reversible-jump sampling."""

from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .diagnostics import ModelInfoCache, default_burnin, empirical_model_pmf, summarize
from .model_space import covariates
from .regression import MODEL_KINDS, Dataset
from .samplers import AnnealConfig, SamplerSpec, run_chain
from .samplers.kernels import SAMPLERS


class InformedRJRegressor(RegressorMixin, BaseEstimator):
    """Linear regression averaged over predictor subsets.

    ``fit`` runs one reversible-jump chain over all subsets of the columns of
    ``X`` (the intercept is always included) and keeps the post-burn-in draws.
    Predictions use the posterior mean coefficients, with excluded predictors
    counted as zero.

    Fitted attributes: ``model_probs_`` (subset bitmask to visit frequency),
    ``inclusion_probs_``, ``coef_``, ``intercept_``, ``trace_``, ``summary_``,
    ``cache_``.
    """

    def __init__(self, sampler="informed", h="barker", model_kind="normal", rho=0.95,
                 iters=10_000, burnin=None, seed=0, T=1, N=1, ell=2.0, combiner="median"):
        self.sampler = sampler
        self.h = h
        self.model_kind = model_kind
        self.rho = rho
        self.iters = iters
        self.burnin = burnin
        self.seed = seed
        self.T = T
        self.N = N
        self.ell = ell
        self.combiner = combiner

    def _validate_params(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if int(self.iters) != self.iters or self.iters < 2:
            raise ValueError(f"iters must be an integer >= 2, got {self.iters}")
        burnin = default_burnin(self.iters) if self.burnin is None else self.burnin
        if not 0 <= burnin < self.iters:
            raise ValueError(f"burnin must lie in [0, iters), got {burnin}")
        return burnin

    def fit(self, X, y):
        burnin = self._validate_params()
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        data = Dataset.from_arrays(X, y)
        spec = SamplerSpec(self.sampler, self.h,
                           AnnealConfig(T=self.T, ell=self.ell, N=self.N, combiner=self.combiner))
        self.cache_ = ModelInfoCache(data, self.model_kind, self.rho)
        t0 = time.perf_counter()
        trace = run_chain(spec, self.cache_, int(self.iters), self.seed)
        wall = time.perf_counter() - t0
        self.trace_ = trace
        self.summary_ = summarize(trace, seed=self.seed, wall_time=wall, burnin=burnin,
                                  sampler=self.sampler)
        pmf = empirical_model_pmf(trace, burnin)
        self.model_probs_ = pmf.as_dict()

        p = self.n_features_in_
        incl = np.zeros(p)
        beta = np.zeros(p + 1)
        post = range(burnin, len(trace))
        for i in post:
            k, x = trace.models[i], trace.params[i]
            cols = [0] + covariates(k)
            beta[cols] += x[:-1]
            for j in covariates(k):
                incl[j - 1] += 1
        beta /= len(post)
        self.inclusion_probs_ = incl / len(post)
        # undo the column standardization applied by Dataset.from_arrays
        self.coef_ = beta[1:] / data.x_scale
        self.intercept_ = float(beta[0] - self.coef_ @ data.x_mean)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.intercept_ + X @ self.coef_
