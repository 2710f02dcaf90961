"""Model indicators, neighbourhoods and the model prior for variable selection.

A model is identified by an ``int`` bitmask over the candidate predictors:
bit ``j`` set means predictor ``j + 1`` is included. The intercept is always
part of the design and is not represented in the mask.
"""

from __future__ import annotations

import numpy as np

ModelId = int

MAX_PREDICTORS = 62


class DegenerateDesignError(ValueError):
    """Raised when a model's Gram matrix is singular."""


def check_model(k: ModelId, p_pred: int) -> None:
    if not 0 <= p_pred <= MAX_PREDICTORS:
        raise ValueError(f"p_pred must lie in [0, {MAX_PREDICTORS}], got {p_pred}")
    if not 0 <= k < (1 << p_pred):
        raise ValueError(f"model bits {k} out of range for p_pred={p_pred}")


def covariates(k: ModelId) -> list[int]:
    """1-based labels of the predictors included in ``k``."""
    out = []
    j = 0
    while k >> j:
        if (k >> j) & 1:
            out.append(j + 1)
        j += 1
    return out


def n_columns(k: ModelId) -> int:
    """Number of design columns of model ``k``, intercept included."""
    return int(k).bit_count() + 1


def design_columns(k: ModelId) -> list[int]:
    """Column indices of the full design used by model ``k``."""
    return [0] + covariates(k)


def model_label(k: ModelId) -> str:
    return "{" + ",".join(str(c) for c in covariates(k)) + "}"


def format_model(k: ModelId) -> str:
    """Trace serialization, e.g. ``6 "{2,3}"``."""
    return f'{k} "{model_label(k)}"'


def from_covariates(labels) -> ModelId:
    k = 0
    for c in labels:
        k |= 1 << (int(c) - 1)
    return k


def neighborhood(k: ModelId, p_pred: int) -> list[ModelId]:
    """Models one predictor away from ``k``, plus ``k`` itself, ascending."""
    check_model(k, p_pred)
    return sorted([k ^ (1 << j) for j in range(p_pred)] + [k])


def all_models(p_pred: int) -> range:
    return range(1 << p_pred)


def log_model_prior(k: ModelId, data) -> float:
    """Unnormalized log prior ``0.5 log|C_k'C_k| - (d_k / 2) log n``."""
    Ck = data.design(k)
    sign, logdet = np.linalg.slogdet(Ck.T @ Ck)
    if sign <= 0 or not np.isfinite(logdet):
        raise DegenerateDesignError(f"singular Gram matrix for model {format_model(k)}")
    return 0.5 * logdet - 0.5 * Ck.shape[1] * np.log(data.n)
