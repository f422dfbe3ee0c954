"""Joint MAP estimation of ``(B, Sigma)`` and regularization paths over ``(lambda, gamma)``.

The joint objective is reported per observation so that each half-step is
exactly the objective of the corresponding sub-solver::

    Q(B, Sigma) = l(B, Sigma) / s + lambda * penalty(B) + (gamma n / (2 s)) * ||P o Sigma||_1

with ``l`` the Gaussian negative log-likelihood, ``n`` the sample size and
``s = n`` (``s = 1`` when the penalty is not normalized). Minimizing over
``B`` at fixed ``Sigma`` is the penalized GLS problem of :mod:`regpath.coef`;
minimizing over ``Sigma`` at fixed ``B`` is the sparse covariance problem of
:mod:`regpath.cov` with penalty ``gamma``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coef import PenaltySpec, _exempt_mask, _penalty_value, lambda_max, quadratic, solve_quadratic
from .cov import (
    CovPenalty,
    correlation_from_cov,
    effective_scatter,
    diagonalizing_gamma,
    solve_sparse_cov,
)
from .errors import ConfigError, RegPathError
from .model import ModelData, gaussian_nll, residual_scatter

log = logging.getLogger(__name__)

OUTER_TOL = 1e-6
MAX_OUTER = 50


@dataclass(frozen=True, eq=False)
class MapEstimate:
    """Joint MAP fit.

    ``coef``/``coefficients``/``sigma`` are on the data's original scale;
    ``coef_fit``/``sigma_fit`` are on the scale the solver worked in and are
    what warm starts reuse.
    """

    data: ModelData = field(repr=False)
    coef: np.ndarray
    coefficients: object
    sigma: np.ndarray
    correlation: np.ndarray
    means: np.ndarray
    objective: float
    nll: float
    outer_iterations: int
    objective_trace: np.ndarray
    half_steps: np.ndarray
    lam: float
    gamma: float
    converged: bool
    active_set: tuple
    coef_fit: np.ndarray = field(repr=False)
    sigma_fit: np.ndarray = field(repr=False)

    @property
    def n_obs(self):
        return self.data.n_obs

    @property
    def kind(self):
        return self.data.kind

    def sigma_zero_count(self, mask=None) -> int:
        """Number of exactly-zero penalized entries in the upper triangle."""
        m = self.sigma.shape[0]
        P = (1.0 - np.eye(m)) if mask is None else np.asarray(mask)
        iu = np.triu_indices(m)
        return int(np.sum((self.sigma_fit[iu] == 0) & (P[iu] == 1)))


def _lift(S):
    m = S.shape[0]
    if np.linalg.eigvalsh(S)[0] < 1e-8 * max(np.trace(S) / m, 1e-300):
        return S + 1e-4 * max(np.trace(S) / m, 1e-12) * np.eye(m)
    return S


def joint_objective(data: ModelData, coef, sigma, penalty: PenaltySpec, cov_penalty: CovPenalty) -> float:
    """``Q(B, Sigma)`` on the solver's scale (see module docstring)."""
    system = data.system
    n = system.n_obs
    s = n if penalty.normalize else 1.0
    S = residual_scatter(system, coef).matrix
    m = S.shape[0]
    nll = gaussian_nll(sigma, S, n)
    exempt = _exempt_mask(len(coef), system.exempt, penalty)
    pen_b = _penalty_value(np.asarray(coef, dtype=float), penalty, exempt)
    P = cov_penalty.mask_for(m)
    pen_s = 0.0 if cov_penalty.gamma == 0 else cov_penalty.gamma * n / 2.0 * float(np.sum(np.abs(P * sigma)))
    prior = 0.0
    if cov_penalty.prior_scale is not None or cov_penalty.prior_dof is not None:
        S0 = np.zeros((m, m)) if cov_penalty.prior_scale is None else np.asarray(cov_penalty.prior_scale)
        nu_adj = 0.0 if cov_penalty.prior_dof is None else cov_penalty.prior_dof - m - 1
        _, logdet = np.linalg.slogdet(sigma)
        prior = 0.5 * nu_adj * logdet + 0.5 * float(np.sum(S0 * np.linalg.inv(sigma)))
    return (nll + prior) / s + pen_b + pen_s / s


def _sigma_step(S_B, n, sigma_prev, cov_penalty: CovPenalty):
    S_eff, weight = effective_scatter(S_B, n, cov_penalty)
    m = S_eff.shape[0]
    if cov_penalty.gamma == 0 and np.linalg.eigvalsh(S_eff)[0] >= 1e-8 * np.trace(S_eff) / m:
        return S_eff.copy()
    pen = cov_penalty.with_gamma(cov_penalty.gamma / weight)
    init = sigma_prev if cov_penalty.gamma > 0 else None
    return solve_sparse_cov(S_eff, pen, init=init).sigma


def fit_map(data: ModelData, penalty: PenaltySpec, cov_penalty: CovPenalty = None, init=None, *,
            tol=OUTER_TOL, max_outer=MAX_OUTER) -> MapEstimate:
    """Alternate penalized-GLS and sparse-covariance steps until ``Q`` settles.

    Starts from ``B = 0`` and ``Sigma`` = residual scatter at ``B = 0`` unless
    ``init`` (a previous :class:`MapEstimate` or a ``(coef, sigma)`` pair on
    the solver scale) is given. Stops when the relative change of ``Q`` over a
    full iteration is at most ``tol`` (relative to ``max(|Q|, 1)``).
    """
    cov_penalty = cov_penalty or CovPenalty()
    system = data.system
    n = system.n_obs
    if init is None:
        coef = np.zeros(system.n_coef)
        sigma = _lift(residual_scatter(system, coef).matrix)
    elif isinstance(init, MapEstimate):
        coef, sigma = init.coef_fit.copy(), init.sigma_fit.copy()
    else:
        coef, sigma = (np.array(a, dtype=float) for a in init)
    Q = joint_objective(data, coef, sigma, penalty, cov_penalty)
    trace = [Q]
    halves = []
    converged = False
    k = 0
    for k in range(1, max_outer + 1):
        try:
            quad = quadratic(system, sigma, normalize=penalty.normalize)
            sol = solve_quadratic(quad, penalty, init=coef)
        except RegPathError as exc:
            raise type(exc)(f"B-step failed at outer iteration {k} (lambda={penalty.lam}): {exc}") from exc
        coef = sol.coefficients
        Q_b = joint_objective(data, coef, sigma, penalty, cov_penalty)
        S_B = residual_scatter(system, coef).matrix
        try:
            sigma = _sigma_step(S_B, n, sigma, cov_penalty)
        except RegPathError as exc:
            raise type(exc)(f"Sigma-step failed at outer iteration {k} (gamma={cov_penalty.gamma}): {exc}") from exc
        Q_new = joint_objective(data, coef, sigma, penalty, cov_penalty)
        halves.append((Q_b, Q_new))
        trace.append(Q_new)
        if abs(Q - Q_new) <= tol * max(abs(Q), 1.0):
            Q = Q_new
            converged = True
            break
        Q = Q_new
    if not converged:
        log.info("fit_map stopped after %d outer iterations without meeting tol=%g", max_outer, tol)
    return _make_estimate(data, coef, sigma, Q, k, trace, halves, penalty, cov_penalty, converged)


def _make_estimate(data, coef, sigma, Q, k, trace, halves, penalty, cov_penalty, converged):
    coef_orig, sigma_orig = data.to_original_scale(coef, sigma)
    nll = gaussian_nll(sigma, residual_scatter(data.system, coef).matrix, data.n_obs)
    if data.kind == "var":
        # likelihood of the unstandardized data
        nll += data.n_obs * float(np.sum(np.log(data.scales)))
    return MapEstimate(
        data=data,
        coef=coef_orig,
        coefficients=data.coef_matrix(coef_orig),
        sigma=sigma_orig,
        correlation=correlation_from_cov(sigma_orig),
        means=np.asarray(data.means),
        objective=float(Q),
        nll=float(nll),
        outer_iterations=k,
        objective_trace=np.array(trace),
        half_steps=np.array(halves).reshape(-1, 2),
        lam=float(penalty.lam),
        gamma=float(cov_penalty.gamma),
        converged=converged,
        active_set=tuple(int(i) for i in np.flatnonzero(coef)),
        coef_fit=coef,
        sigma_fit=sigma,
    )


# ---------------------------------------------------------------------------
# grids and paths


@dataclass(frozen=True)
class PenaltyGrid:
    """``lambda_values`` descending, ``gamma_values`` ascending."""

    lambda_values: tuple
    gamma_values: tuple = (0.0,)

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambda_values)
        gam = tuple(float(v) for v in self.gamma_values)
        if not lam or not gam:
            raise ConfigError("penalty grid must be nonempty")
        if any(v < 0 for v in lam + gam) or any(math.isnan(v) for v in lam + gam):
            raise ConfigError("penalty values must be nonnegative")
        if any(a < b for a, b in zip(lam, lam[1:])):
            raise ConfigError("lambda_values must be sorted descending")
        if any(a > b for a, b in zip(gam, gam[1:])):
            raise ConfigError("gamma_values must be sorted ascending")
        object.__setattr__(self, "lambda_values", lam)
        object.__setattr__(self, "gamma_values", gam)

    @property
    def points(self):
        """Grid points in traversal order: gamma ascending, then lambda descending."""
        return [(l, g) for g in self.gamma_values for l in self.lambda_values]

    def __len__(self):
        return len(self.lambda_values) * len(self.gamma_values)


def log_grid(top, n, ratio=1e-4):
    """``n`` log-spaced values from ``top`` down to ``ratio * top``."""
    if n <= 0 or top <= 0:
        return []
    if n == 1:
        return [float(top)]
    return [float(v) for v in top * np.logspace(0.0, np.log10(ratio), n)]


def joint_lambda_max(data: ModelData, penalty: PenaltySpec, cov_penalty: CovPenalty = None) -> float:
    """Smallest lambda at which ``B = 0`` is a fixed point of the alternation started at ``B = 0``."""
    cov_penalty = cov_penalty or CovPenalty()
    system = data.system
    S0 = _lift(residual_scatter(system, np.zeros(system.n_coef)).matrix)
    sig_star = _sigma_step(S0, system.n_obs, S0, cov_penalty)
    vals = [lambda_max(quadratic(system, s, normalize=penalty.normalize), penalty) for s in (S0, sig_star)]
    return max(vals)


def default_grid(data: ModelData, penalty: PenaltySpec, cov_penalty: CovPenalty = None, *,
                 n_lambda=50, n_gamma=20, ratio=1e-4, include_gamma=True) -> PenaltyGrid:
    """``n_lambda`` log-spaced lambdas from the joint lambda_max plus 0, and
    (optionally) 0 plus ``n_gamma`` log-spaced gammas up to the smallest gamma
    that diagonalizes the covariance of the unpenalized residual scatter."""
    cov_penalty = cov_penalty or CovPenalty()
    lam_top = joint_lambda_max(data, penalty, cov_penalty)
    lambdas = log_grid(lam_top, n_lambda, ratio) + [0.0]
    gammas = [cov_penalty.gamma]
    if include_gamma:
        system = data.system
        try:
            coef = solve_quadratic(quadratic(system), penalty.with_lambda(0.0)).coefficients
        except RegPathError:
            coef = np.zeros(system.n_coef)
        S = residual_scatter(system, coef).matrix
        m = S.shape[0]
        g_top = diagonalizing_gamma(S, cov_penalty.mask_for(m))
        gammas = [0.0] + log_grid(g_top, n_gamma, ratio)[::-1]
    return PenaltyGrid(tuple(lambdas), tuple(gammas))


@dataclass(frozen=True, eq=False)
class PathPoint:
    lam: float
    gamma: float
    label: str = ""
    converged: bool = False
    error: Optional[str] = None
    outer_iterations: int = 0
    objective: float = float("nan")
    nll: float = float("nan")
    active_size: int = 0
    sigma_zeros: int = 0
    forecast: np.ndarray = None
    target_coefficients: np.ndarray = None
    shock_correlations: np.ndarray = None
    irf: np.ndarray = None


@dataclass(frozen=True, eq=False)
class RegularizationPath:
    grid: PenaltyGrid
    axis: str
    points: tuple
    estimates: tuple = field(default=(), repr=False)
    target_index: int = 0
    horizon: int = 1

    def __len__(self):
        return len(self.points)

    def point(self, lam, gamma):
        for p in self.points:
            if p.lam == lam and p.gamma == gamma:
                return p
        raise KeyError((lam, gamma))


def summarize(est: MapEstimate, target_index=0, horizon=1) -> dict:
    """Plot-ready quantities for one fit."""
    from . import analysis

    data = est.data
    if data.kind == "var":
        fc = analysis.forecast_h_step(est, analysis.last_observation(est), horizon)
        tgt_coef = np.asarray(est.coefficients)[target_index]
        corr = analysis.shock_correlation_with_target(est, target_index)
        irf = analysis.orthogonal_irf(est, 1).matrix[target_index]
    else:
        fc = analysis.forecast_sur(est)
        tgt_coef = np.asarray(est.coef)
        iu = np.triu_indices(est.sigma.shape[0], 1)
        corr = est.correlation[iu]
        irf = None
    return dict(forecast=np.atleast_1d(fc), target_coefficients=tgt_coef, shock_correlations=corr, irf=irf)


def trace_path(data: ModelData, grid: PenaltyGrid, penalty: PenaltySpec, cov_penalty: CovPenalty = None, *,
               target_index=None, horizon=1, keep_estimates=False, tol=OUTER_TOL,
               max_outer=MAX_OUTER) -> RegularizationPath:
    """Fit every grid point with warm starts.

    Within each gamma (ascending) lambda is swept in descending order, each
    fit starting from the previous one; the first lambda of a gamma row starts
    from the first fit of the previous row. Failures are recorded on the
    point and the chain restarts cold.
    """
    cov_penalty = cov_penalty or CovPenalty()
    if target_index is None:
        target_index = getattr(data.spec, "target_index", 0)
    nl, ng = len(grid.lambda_values), len(grid.gamma_values)
    axis = "grid" if nl > 1 and ng > 1 else ("gamma" if ng > 1 else "lambda")
    lam_top = grid.lambda_values[0]
    points, ests = [], []
    row_start = None
    for g in grid.gamma_values:
        prev = row_start
        for j, lam in enumerate(grid.lambda_values):
            pen = penalty.with_lambda(lam)
            cpen = cov_penalty.with_gamma(g)
            label = "VAR" if lam == 0 and data.kind == "var" else ""
            if lam == lam_top and nl > 1:
                label = "Average" if data.kind == "var" else "max"
            try:
                est = fit_map(data, pen, cpen, init=prev, tol=tol, max_outer=max_outer)
                info = summarize(est, target_index, horizon)
                pt = PathPoint(
                    lam, g, label, est.converged, None, est.outer_iterations, est.objective, est.nll,
                    len(est.active_set), est.sigma_zero_count(cpen.mask_for(est.sigma.shape[0])), **info,
                )
                prev = est
            except RegPathError as exc:
                log.warning("path point lambda=%g gamma=%g failed: %s", lam, g, exc)
                pt = PathPoint(lam, g, label, False, str(exc))
                est = None
                prev = None
            if j == 0:
                row_start = est
            points.append(pt)
            if keep_estimates:
                ests.append(est)
    return RegularizationPath(grid, axis, tuple(points), tuple(ests), target_index, horizon)
