"""Forecasts, orthogonalized impulse responses and shock correlations from a fitted VAR."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cov import correlation_from_cov
from .errors import ConfigError, DimensionError
from .model import _chol


@dataclass(frozen=True, eq=False)
class Forecast:
    horizon: int
    values: np.ndarray
    basis: np.ndarray
    means: np.ndarray


@dataclass(frozen=True, eq=False)
class ImpulseResponse:
    """``matrix[i, j]``: response of variable ``i`` to a unit orthogonalized shock ``j``.

    Shock ``j`` is the ``j``-th variable in ``ordering``.
    """

    horizon: int
    matrix: np.ndarray
    ordering: tuple


def _var_parts(est):
    if est.data.kind != "var":
        raise ConfigError("this operation needs a VAR estimate")
    B = np.asarray(est.coefficients)
    if B.shape[0] != B.shape[1]:
        raise ConfigError("forecasting and IRFs are implemented for VAR(1) only")
    return B, np.asarray(est.means)


def last_observation(est) -> np.ndarray:
    """Last in-sample observation on the original scale."""
    _var_parts(est)
    p = len(est.means)
    data = est.data
    return np.asarray(data.last_regressors[:p]) * data.scales + data.means


def forecast_one_step(est, last_obs) -> np.ndarray:
    """``means + B (last_obs - means)``."""
    return forecast_h_step(est, last_obs, 1)


def forecast_h_step(est, last_obs, h: int) -> np.ndarray:
    """``means + B^h (last_obs - means)``: the model iterated ``h`` times."""
    B, means = _var_parts(est)
    x = np.asarray(last_obs, dtype=float)
    if x.shape != means.shape:
        raise DimensionError(f"last_obs has shape {x.shape}, expected {means.shape}")
    if h < 1:
        raise ConfigError("horizon must be >= 1")
    dev = x - means
    for _ in range(h):
        dev = B @ dev
    return means + dev


def forecast(est, last_obs, h: int = 1) -> Forecast:
    values = forecast_h_step(est, last_obs, h)
    return Forecast(h, values, np.asarray(last_obs, dtype=float), np.asarray(est.means))


def impact_factor(sigma, ordering=None):
    """Lower-triangular ``C`` (in ``ordering``) with ``C C' = Sigma``, rows in data order."""
    sigma = np.asarray(sigma, dtype=float)
    m = sigma.shape[0]
    order = list(range(m)) if ordering is None else [int(i) for i in ordering]
    if sorted(order) != list(range(m)):
        raise ConfigError(f"ordering must be a permutation of 0..{m - 1}")
    Lp = _chol(sigma[np.ix_(order, order)])
    C = np.zeros((m, m))
    C[order, :] = Lp
    return C, tuple(order)


def orthogonal_irf(est, horizon: int, ordering=None) -> ImpulseResponse:
    """Responses ``B^h C`` to one-standard-deviation orthogonalized shocks."""
    B, _ = _var_parts(est)
    if horizon < 0:
        raise ConfigError("horizon must be >= 0")
    C, order = impact_factor(est.sigma, ordering)
    R = C
    for _ in range(horizon):
        R = B @ R
    return ImpulseResponse(horizon, R, order)


def shock_correlation_with_target(est, target_index: int) -> np.ndarray:
    rho = correlation_from_cov(est.sigma)
    return np.delete(rho[target_index], target_index)


def forecast_sur(est, regressors=None) -> np.ndarray:
    """Per-equation predictions ``x_j' beta_j``.

    Without ``regressors`` the last in-sample regressor rows are used (the
    out-of-sample forecast); otherwise ``regressors`` is the stacked row on the
    original scale, intercept entries included.
    """
    data = est.data
    if data.kind != "sur":
        raise ConfigError("forecast_sur needs a SUR estimate")
    if regressors is None:
        x, coef = np.asarray(data.last_regressors), est.coef_fit
    else:
        x, coef = np.asarray(regressors, dtype=float), est.coef
        if x.shape != coef.shape:
            raise DimensionError(f"regressor row has shape {x.shape}, expected {coef.shape}")
    parts = np.split(x * coef, np.cumsum(data.coef_sizes)[:-1])
    return np.array([p.sum() for p in parts])
