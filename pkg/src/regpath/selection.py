"""Tuning-parameter selection: rolling-window predictive cross-validation and AIC/BIC.

Fold ``f`` trains on panel rows ``f .. f + W - 1`` (re-demeaned inside the
window) and scores the forecast of row ``f + W - 1 + horizon``; there are
``T - W - horizon + 1`` folds.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import analysis
from .coef import PenaltySpec
from .cov import CovPenalty
from .errors import ConfigError, InsufficientDataError, RegPathError
from .model import ModelData, SurSpec, TimeSeriesPanel, VarSpec, prepare_sur, prepare_var
from .path import MapEstimate, PenaltyGrid, default_grid, fit_map

log = logging.getLogger(__name__)

MODES = ("joint", "sequential")


@dataclass(frozen=True)
class CvConfig:
    """Rolling-window settings.

    ``grid=None`` builds the default grid from the first window and prepends
    ``lambda = inf`` so the fully-shrunk model is on every fold's path.
    ``n_gamma=0`` keeps gamma at the covariance penalty's value.
    ``mode="sequential"`` picks lambda on the first gamma row, then gamma along
    that lambda's column.
    """

    window: int = 80
    horizon: int = 1
    target_index: int = 0
    grid: Optional[PenaltyGrid] = None
    n_lambda: int = 50
    n_gamma: int = 0
    lambda_ratio: float = 1e-4
    min_window_factor: int = 3
    mode: str = "joint"
    n_jobs: int = 1

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.window < 2:
            raise ConfigError("window must be >= 2")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")


@dataclass(frozen=True, eq=False)
class CvResult:
    """``table[g, l]`` is the mean squared error at ``(lambda_values[l], gamma_values[g])``."""

    grid: PenaltyGrid
    table: np.ndarray
    fold_count: int
    best: tuple
    per_fold_errors: np.ndarray = field(repr=False)
    forecasts: np.ndarray = field(repr=False)
    realized: np.ndarray = field(repr=False)
    failures: int = 0

    def rows(self):
        """``(lambda, gamma, mse)`` in grid traversal order."""
        return [
            (lam, g, float(self.table[i, j]))
            for i, g in enumerate(self.grid.gamma_values)
            for j, lam in enumerate(self.grid.lambda_values)
        ]


def fold_count(T: int, window: int, horizon: int = 1) -> int:
    return max(T - window - horizon + 1, 0)


def _prepare(panel, spec) -> ModelData:
    if isinstance(spec, VarSpec):
        return prepare_var(panel, spec)
    if isinstance(spec, SurSpec):
        return prepare_sur(panel, spec)
    raise ConfigError(f"unsupported model spec {type(spec).__name__}")


def _check(panel: TimeSeriesPanel, spec, cfg: CvConfig):
    T, p = panel.shape
    if fold_count(T, cfg.window, cfg.horizon) < 1:
        raise InsufficientDataError(
            f"{T} rows cannot hold a window of {cfg.window} plus horizon {cfg.horizon}"
        )
    if isinstance(spec, VarSpec):
        if spec.lag_order != 1:
            raise ConfigError("rolling CV forecasts VAR(1) models only")
        if not 0 <= cfg.target_index < p:
            raise ConfigError(f"target_index {cfg.target_index} out of range")
        n_vars = p
    else:
        if not 0 <= cfg.target_index < spec.n_equations:
            raise ConfigError(f"target_index {cfg.target_index} out of range")
        lag = spec.equations[cfg.target_index][2]
        if lag != cfg.horizon:
            raise ConfigError(f"SUR target equation has lag {lag}; its forecasts are {lag}-step, not {cfg.horizon}")
        n_vars = len({c for _, rs, _ in spec.equations for c in rs} | {r for r, _, _ in spec.equations})
    if cfg.window < cfg.min_window_factor * n_vars:
        raise ConfigError(
            f"window {cfg.window} is below {cfg.min_window_factor} x {n_vars} variables; "
            "lower min_window_factor to override"
        )


def _target_column(panel, spec, cfg):
    if isinstance(spec, VarSpec):
        return cfg.target_index
    return panel.column_index(spec.equations[cfg.target_index][0])


def cv_grid(panel: TimeSeriesPanel, spec, cfg: CvConfig, penalty: PenaltySpec,
            cov_penalty: CovPenalty = None) -> PenaltyGrid:
    """The grid a CV run uses (``cfg.grid`` or the first-window default with ``inf`` prepended)."""
    if cfg.grid is not None:
        return cfg.grid
    cov_penalty = cov_penalty or CovPenalty()
    data = _prepare(panel.rows(0, cfg.window), spec)
    g = default_grid(data, penalty, cov_penalty, n_lambda=cfg.n_lambda, n_gamma=max(cfg.n_gamma, 1),
                     ratio=cfg.lambda_ratio, include_gamma=cfg.n_gamma > 0)
    return PenaltyGrid((math.inf,) + g.lambda_values, g.gamma_values)


def _point_forecast(est: MapEstimate, target, horizon, spec):
    if isinstance(spec, VarSpec):
        return float(analysis.forecast_h_step(est, analysis.last_observation(est), horizon)[target])
    return float(analysis.forecast_sur(est)[target])


def fold_forecasts(panel: TimeSeriesPanel, spec, cfg: CvConfig, grid: PenaltyGrid, penalty: PenaltySpec,
                   cov_penalty: CovPenalty, fold: int) -> np.ndarray:
    """Forecasts of the target for one fold over the whole grid (``nan`` where a fit failed).

    Only rows ``fold .. fold + W - 1`` are read.
    """
    train = panel.rows(fold, fold + cfg.window)
    data = _prepare(train, spec)
    out = np.full((len(grid.gamma_values), len(grid.lambda_values)), np.nan)
    row_start = None
    for i, g in enumerate(grid.gamma_values):
        prev = row_start
        cpen = cov_penalty.with_gamma(g)
        for j, lam in enumerate(grid.lambda_values):
            try:
                est = fit_map(data, penalty.with_lambda(lam), cpen, init=prev)
                out[i, j] = _point_forecast(est, cfg.target_index, cfg.horizon, spec)
            except RegPathError as exc:
                log.warning("fold %d, lambda=%g, gamma=%g failed: %s", fold, lam, g, exc)
                est = None
            prev = est
            if j == 0:
                row_start = est
    return out


def _argmin_tiebreak(table, grid: PenaltyGrid):
    """Minimum of ``table`` (nan excluded); ties go to the largest lambda, then the largest gamma."""
    finite = np.isfinite(table)
    if not finite.any():
        raise RegPathError("every grid point failed")
    best = np.min(table[finite])
    cands = [
        (grid.lambda_values[j], grid.gamma_values[i])
        for i, j in zip(*np.nonzero(finite & (table == best)))
    ]
    return max(cands)


def _best(table, grid: PenaltyGrid, mode: str):
    if mode == "joint":
        return _argmin_tiebreak(table, grid)
    row = table[:1]
    lam, _ = _argmin_tiebreak(row, PenaltyGrid(grid.lambda_values, grid.gamma_values[:1]))
    j = grid.lambda_values.index(lam)
    col = table[:, j:j + 1]
    _, g = _argmin_tiebreak(col, PenaltyGrid((lam,), grid.gamma_values))
    return lam, g


def rolling_cv(panel: TimeSeriesPanel, spec, config: CvConfig = None, penalty: PenaltySpec = None,
               cov_penalty: CovPenalty = None) -> CvResult:
    """Mean squared ``horizon``-step error of the target over all rolling windows."""
    cfg = config or CvConfig()
    penalty = penalty or PenaltySpec("lasso")
    cov_penalty = cov_penalty or CovPenalty()
    _check(panel, spec, cfg)
    grid = cv_grid(panel, spec, cfg, penalty, cov_penalty)
    F = fold_count(len(panel), cfg.window, cfg.horizon)
    if cfg.n_jobs == 1:
        fc = [fold_forecasts(panel, spec, cfg, grid, penalty, cov_penalty, f) for f in range(F)]
    else:
        from joblib import Parallel, delayed

        fc = Parallel(n_jobs=cfg.n_jobs)(
            delayed(fold_forecasts)(panel, spec, cfg, grid, penalty, cov_penalty, f) for f in range(F)
        )
    forecasts = np.stack(fc)
    col = _target_column(panel, spec, cfg)
    realized = panel.values[cfg.window - 1 + cfg.horizon:, col][:F]
    errors = (forecasts - realized[:, None, None]) ** 2
    table = errors.mean(axis=0)
    failures = int(np.sum(~np.isfinite(forecasts)))
    best = _best(table, grid, cfg.mode)
    return CvResult(grid, table, F, best, errors, forecasts, realized, failures)


# ---------------------------------------------------------------------------
# information criteria


def parameter_count(est: MapEstimate, include_sigma=False, mask=None) -> int:
    """Nonzero penalized-or-not coefficients; optionally plus free covariance entries.

    With ``include_sigma`` the covariance contributes ``m(m+1)/2`` minus the
    exactly-zeroed masked entries.
    """
    k = len(est.active_set)
    if include_sigma:
        m = est.sigma.shape[0]
        k += m * (m + 1) // 2 - est.sigma_zero_count(mask)
    return k


def information_criterion(est: MapEstimate, kind: str = "aic", T: int = None, *, include_sigma=False,
                          mask=None) -> float:
    """``AIC = 2k + 2 l`` and ``BIC = k log T + 2 l`` with ``l`` the negative log-likelihood."""
    kind = kind.lower()
    T = est.n_obs if T is None else T
    k = parameter_count(est, include_sigma, mask)
    if kind == "aic":
        per = 2.0
    elif kind == "bic":
        per = math.log(T)
    else:
        raise ConfigError(f"unknown criterion {kind!r}")
    return per * k + 2.0 * est.nll


@dataclass(frozen=True, eq=False)
class Selection:
    lam: float
    gamma: float
    criterion: str
    grid: PenaltyGrid
    table: np.ndarray
    cv: Optional[CvResult] = None


def select(panel: TimeSeriesPanel, spec, config: CvConfig = None, criterion: str = "cv",
           penalty: PenaltySpec = None, cov_penalty: CovPenalty = None, *, include_sigma=False) -> Selection:
    """Pick ``(lambda, gamma)`` by rolling CV or by AIC/BIC on the full panel."""
    cfg = config or CvConfig()
    penalty = penalty or PenaltySpec("lasso")
    cov_penalty = cov_penalty or CovPenalty()
    criterion = criterion.lower()
    if criterion == "cv":
        res = rolling_cv(panel, spec, cfg, penalty, cov_penalty)
        return Selection(res.best[0], res.best[1], "cv", res.grid, res.table, res)
    if criterion not in ("aic", "bic"):
        raise ConfigError(f"criterion must be cv, aic or bic, got {criterion!r}")
    data = _prepare(panel, spec)
    grid = cfg.grid
    if grid is None:
        g = default_grid(data, penalty, cov_penalty, n_lambda=cfg.n_lambda, n_gamma=max(cfg.n_gamma, 1),
                         ratio=cfg.lambda_ratio, include_gamma=cfg.n_gamma > 0)
        grid = PenaltyGrid((math.inf,) + g.lambda_values, g.gamma_values)
    table = np.full((len(grid.gamma_values), len(grid.lambda_values)), np.nan)
    row_start = None
    for i, g in enumerate(grid.gamma_values):
        prev = row_start
        cpen = cov_penalty.with_gamma(g)
        mask = cpen.mask_for(data.system.weight_dim)
        for j, lam in enumerate(grid.lambda_values):
            try:
                est = fit_map(data, penalty.with_lambda(lam), cpen, init=prev)
                table[i, j] = information_criterion(est, criterion, include_sigma=include_sigma, mask=mask)
            except RegPathError as exc:
                log.warning("lambda=%g, gamma=%g failed: %s", lam, g, exc)
                est = None
            prev = est
            if j == 0:
                row_start = est
    lam, g = _best(table, grid, cfg.mode)
    return Selection(lam, g, criterion, grid, table)
