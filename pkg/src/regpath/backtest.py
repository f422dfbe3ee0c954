"""Market-timing backtest: mean-variance allocation between equity and a risk-free asset.

The panel's target column is the equity excess return. A weight chosen with
information up to row ``t`` earns the returns of row ``t + 1``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import analysis
from .coef import PenaltySpec
from .cov import CovPenalty
from .errors import ConfigError, DegenerateInputError, DimensionError
from .model import TimeSeriesPanel, VarSpec, prepare_var
from .path import fit_map
from .selection import CvConfig, select

log = logging.getLogger(__name__)

STRATEGIES = ("cv_optimal", "aic_optimal", "var_unregularized", "moving_average")
BUY_AND_HOLD = "buy_and_hold"


@dataclass(frozen=True)
class BacktestConfig:
    """Backtest settings.

    ``tuning_end`` is the number of leading rows used to fix ``(lambda, gamma)``
    for the tuned strategies (default ``2 * window``); the first weight is set
    at row ``tuning_end - 1``. ``initial_weight`` is the equity share held
    before the first rebalance and the buy-and-hold split.
    """

    window: int = 80
    risk_aversion: float = 2.0
    max_turnover: float = 0.5
    weight_bounds: tuple = (0.0, 1.0)
    strategies: tuple = STRATEGIES
    tuning_end: Optional[int] = None
    initial_weight: float = 0.5
    target_index: int = 0
    rebalance: str = "quarterly"
    n_lambda: int = 50

    def __post_init__(self):
        lo, hi = self.weight_bounds
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError("weight_bounds must satisfy 0 <= lo <= hi <= 1")
        if not 0.0 < self.max_turnover <= 1.0:
            raise ConfigError("max_turnover must be in (0, 1]")
        if self.risk_aversion <= 0:
            raise ConfigError("risk_aversion must be positive")
        if not lo <= self.initial_weight <= hi:
            raise ConfigError("initial_weight must lie within weight_bounds")
        unknown = set(self.strategies) - set(STRATEGIES)
        if unknown:
            raise ConfigError(f"unknown strategies: {sorted(unknown)}")
        if self.window < 2:
            raise ConfigError("window must be >= 2")


@dataclass(frozen=True)
class SummaryStats:
    min: float
    q1: float
    median: float
    mean: float
    q3: float
    max: float
    sd: float
    ratio: float

    def as_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class BacktestResult:
    """Per-strategy series.

    ``decision_dates[k]`` is when ``weights[s][k]`` and ``forecasts[s][k]`` were
    set; ``return_dates[k]`` is the period whose return ``returns[s][k]`` they earned.
    """

    decision_dates: np.ndarray
    return_dates: np.ndarray
    forecasts: dict
    weights: dict
    returns: dict
    cumulative: dict
    prediction_stats: dict
    return_stats: dict
    selections: dict
    config: BacktestConfig = field(repr=False)
    trades: dict = field(default_factory=dict)


def mean_variance_weight(forecast: float, variance: float, risk_aversion: float = 2.0,
                         bounds=(0.0, 1.0)) -> float:
    """``forecast / (A * variance)`` clipped to ``bounds``."""
    if not variance > 0:
        raise DegenerateInputError(f"variance must be positive, got {variance}")
    if risk_aversion <= 0:
        raise ConfigError("risk_aversion must be positive")
    raw = forecast / (risk_aversion * variance)
    return float(min(max(raw, bounds[0]), bounds[1]))


def apply_turnover_cap(current: float, target: float, cap: float) -> float:
    step = min(max(target - current, -cap), cap)
    return float(current + step)


def summary_stats(series) -> SummaryStats:
    """Min, quartiles (linear interpolation), mean, max, sd (``ddof=1``) and ``mean / sd``."""
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 2:
        raise DegenerateInputError("need at least two observations for a standard deviation")
    sd = float(np.std(x, ddof=1))
    if sd == 0 or np.ptp(x) == 0:
        raise DegenerateInputError("constant series: mean/sd is undefined")
    q = np.quantile(x, [0.0, 0.25, 0.5, 0.75, 1.0])
    mean = float(np.mean(x))
    return SummaryStats(float(q[0]), float(q[1]), float(q[2]), mean, float(q[3]), float(q[4]), sd, mean / sd)


def _safe_stats(series):
    try:
        return summary_stats(series)
    except DegenerateInputError as exc:
        log.info("summary statistics unavailable: %s", exc)
        return None


def _tune(panel, spec, cfg: BacktestConfig, penalty, cov_penalty, strategies):
    tuning = panel.rows(0, cfg.tuning_end)
    cv_cfg = CvConfig(window=cfg.window, target_index=cfg.target_index, n_lambda=cfg.n_lambda,
                      min_window_factor=0)
    out = {}
    if "cv_optimal" in strategies:
        s = select(tuning, spec, cv_cfg, "cv", penalty, cov_penalty)
        out["cv_optimal"] = (s.lam, s.gamma)
    if "aic_optimal" in strategies:
        s = select(tuning, spec, cv_cfg, "aic", penalty, cov_penalty)
        out["aic_optimal"] = (s.lam, s.gamma)
    return out


def run_market_timing(panel: TimeSeriesPanel, risk_free, config: BacktestConfig = None, *, equity=None,
                      penalty: PenaltySpec = None, cov_penalty: CovPenalty = None,
                      selections: dict = None) -> BacktestResult:
    """Recursive out-of-sample market timing.

    Parameters
    ----------
    panel : TimeSeriesPanel
        Model variables; column ``config.target_index`` is the equity excess return.
    risk_free : array_like
        Risk-free return per row.
    equity : array_like, optional
        Equity total return per row; defaults to excess return plus risk-free.
    selections : dict, optional
        Frozen ``(lambda, gamma)`` per tuned strategy. Missing entries are
        selected on the first ``tuning_end`` rows.
    """
    cfg = config or BacktestConfig()
    penalty = penalty or PenaltySpec("lasso")
    cov_penalty = cov_penalty or CovPenalty()
    T = len(panel)
    rf = np.asarray(risk_free, dtype=float)
    excess = panel.values[:, cfg.target_index]
    eq = excess + rf if equity is None else np.asarray(equity, dtype=float)
    if rf.shape != (T,) or eq.shape != (T,):
        raise DimensionError("risk_free and equity must have one value per panel row")
    if not np.all(np.isfinite(rf)) or not np.all(np.isfinite(eq)):
        raise DimensionError("returns must be finite")
    tuning_end = cfg.tuning_end if cfg.tuning_end is not None else min(2 * cfg.window, T - 1)
    cfg = replace(cfg, tuning_end=tuning_end)
    if tuning_end < cfg.window or tuning_end >= T:
        raise ConfigError(
            f"tuning_end={tuning_end} must satisfy window ({cfg.window}) <= tuning_end < T ({T})"
        )
    spec = VarSpec(target_index=cfg.target_index)
    strategies = tuple(cfg.strategies)
    sel = dict(selections or {})
    missing = tuple(s for s in ("cv_optimal", "aic_optimal") if s in strategies and s not in sel)
    if missing:
        sel.update(_tune(panel, spec, cfg, penalty, cov_penalty, missing))
    sel.setdefault("var_unregularized", (0.0, 0.0))
    sel.setdefault("moving_average", (math.inf, 0.0))

    decisions = np.arange(tuning_end - 1, T - 1)
    forecasts = {s: np.empty(len(decisions)) for s in strategies}
    weights = {s: np.empty(len(decisions)) for s in strategies}
    variances = np.empty(len(decisions))
    prev_fit = {s: None for s in strategies}
    for k, t in enumerate(decisions):
        rows = panel.rows(t - cfg.window + 1, t + 1)
        y = rows.values[:, cfg.target_index]
        variances[k] = float(np.var(y, ddof=1))
        data = None
        for s in strategies:
            lam, g = sel[s]
            if s == "moving_average":
                f = float(np.mean(y))
            else:
                if data is None:
                    data = prepare_var(rows, spec)
                est = fit_map(data, penalty.with_lambda(lam), cov_penalty.with_gamma(g), init=prev_fit[s])
                prev_fit[s] = est
                f = float(analysis.forecast_one_step(est, rows.values[-1])[cfg.target_index])
            forecasts[s][k] = f
    for s in strategies:
        w = cfg.initial_weight
        for k in range(len(decisions)):
            if variances[k] > 0:
                target = mean_variance_weight(forecasts[s][k], variances[k], cfg.risk_aversion, cfg.weight_bounds)
                w = apply_turnover_cap(w, target, cfg.max_turnover)
            # a flat window carries no risk signal: keep the current holding
            weights[s][k] = w

    r_e, r_f = eq[decisions + 1], rf[decisions + 1]
    returns = {s: weights[s] * r_e + (1.0 - weights[s]) * r_f for s in strategies}
    # buy and hold: equity share drifts with relative performance, no trades after the first
    bh_w = np.empty(len(decisions))
    w = cfg.initial_weight
    for k in range(len(decisions)):
        bh_w[k] = w
        grow_e, grow_f = w * (1.0 + r_e[k]), (1.0 - w) * (1.0 + r_f[k])
        w = grow_e / (grow_e + grow_f) if grow_e + grow_f > 0 else 0.0
    returns[BUY_AND_HOLD] = bh_w * r_e + (1.0 - bh_w) * r_f
    weights[BUY_AND_HOLD] = bh_w
    cumulative = {s: np.cumprod(1.0 + r) for s, r in returns.items()}
    trades = {s: int(np.sum(np.diff(np.concatenate([[cfg.initial_weight], weights[s]])) != 0)) for s in strategies}
    trades[BUY_AND_HOLD] = 1
    dates = np.asarray(panel.dates)
    return BacktestResult(
        decision_dates=dates[decisions],
        return_dates=dates[decisions + 1],
        forecasts=forecasts,
        weights=weights,
        returns=returns,
        cumulative=cumulative,
        prediction_stats={s: _safe_stats(forecasts[s]) for s in strategies},
        return_stats={s: _safe_stats(r) for s, r in returns.items()},
        selections={s: sel[s] for s in strategies},
        config=cfg,
        trades=trades,
    )
