"""Seeded synthetic regression problems and the prostate-cancer data loader."""

from __future__ import annotations

import csv
import os

import numpy as np

from .regression import DataError, Dataset, load_csv

PROSTATE_ENV = "RJ_PROSTATE_CSV"
PROSTATE_COLUMNS = ("lpsa", "lcavol", "lweight", "age", "lbph", "svi", "lcp", "gleason", "pgg45")

# coefficients loosely shaped like the prostate fit: a few strong signals, the rest weak
_ANALOG_COEF = np.array([0.68, 0.26, -0.14, 0.21, 0.31, -0.29, -0.02, 0.27])


class DataUnavailable(DataError):
    """The requested public dataset is not installed locally."""


def synthetic_arrays(n, p_pred, coef=None, seed=0, noise_sd=1.0, correlation=0.0, intercept=0.0):
    """Gaussian design with equicorrelated columns and a linear response.

    ``coef`` defaults to zeros (pure noise). Returns ``(X, y)``.
    """
    if n < 2 or p_pred < 0:
        raise ValueError("need n >= 2 and p_pred >= 0")
    rng = np.random.default_rng(seed)
    coef = np.zeros(p_pred) if coef is None else np.asarray(coef, dtype=float)
    if coef.shape != (p_pred,):
        raise ValueError(f"coef must have length {p_pred}")
    shared = rng.standard_normal((n, 1))
    X = (np.sqrt(correlation) * shared + np.sqrt(1.0 - correlation)
         * rng.standard_normal((n, p_pred)))
    y = intercept + X @ coef + noise_sd * rng.standard_normal(n)
    return X, y


def synthetic_dataset(n, p_pred, coef=None, seed=0, noise_sd=1.0, correlation=0.0,
                      intercept=0.0) -> Dataset:
    X, y = synthetic_arrays(n, p_pred, coef, seed, noise_sd, correlation, intercept)
    return Dataset.from_arrays(X, y)


def prostate_analog(seed=0, n=97) -> Dataset:
    """Synthetic stand-in with the prostate layout: 97 rows, 8 correlated predictors."""
    X, y = synthetic_arrays(n, 8, _ANALOG_COEF, seed, noise_sd=0.7, correlation=0.3,
                            intercept=2.48)
    return Dataset.from_arrays(X, y, names=PROSTATE_COLUMNS[1:])


def add_outlier(X, y, index=0, factor=10.0):
    """Copy of ``y`` with entry ``index`` moved to ``factor`` times the response range above the max."""
    y = np.array(y, dtype=float)
    y[index] = y.max() + factor * (y.max() - y.min())
    return X, y


def write_csv(path, X, y, names=None, response="y"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([response, *names])
        for yi, row in zip(y, X):
            w.writerow([repr(float(yi)), *(repr(float(v)) for v in row)])


def prostate_arrays():
    """``(X, y, names)`` of the Stamey prostate data.

    Looks for a CSV named by ``RJ_PROSTATE_CSV`` (response ``lpsa`` first),
    then for the optional ``faraway`` package.
    """
    path = os.environ.get(PROSTATE_ENV)
    if path:
        ds = load_csv(path, standardize=False)
        return ds.C[:, 1:], ds.y, ds.names
    try:
        from faraway.datasets import prostate
    except ImportError:
        raise DataUnavailable(
            f"prostate data not found: set {PROSTATE_ENV} to a CSV or install the 'faraway' package"
        ) from None
    frame = prostate.load()
    names = list(PROSTATE_COLUMNS[1:])
    return frame[names].to_numpy(dtype=float), frame["lpsa"].to_numpy(dtype=float), names


def load_prostate() -> Dataset:
    X, y, names = prostate_arrays()
    return Dataset.from_arrays(X, y, names=names)


def prostate_available() -> bool:
    try:
        prostate_arrays()
    except DataUnavailable:
        return False
    return True
