"""Penalized VAR/SUR estimation with sparse error covariance and regularization paths."""
from .analysis import forecast_h_step, forecast_one_step, orthogonal_irf, shock_correlation_with_target
from .backtest import BacktestConfig, apply_turnover_cap, mean_variance_weight, run_market_timing, summary_stats
from .coef import PenaltySpec, solve_elastic_net, solve_group_lasso, solve_ridge
from .cov import CovPenalty, solve_sparse_cov
from .data import DatasetManifest, compute_principal_components, load_panel
from .errors import RegPathError
from .model import SurSpec, TimeSeriesPanel, VarSpec, prepare_sur, prepare_var
from .path import PenaltyGrid, default_grid, fit_map, trace_path
from .selection import CvConfig, information_criterion, rolling_cv, select

__version__ = "0.1.0"
