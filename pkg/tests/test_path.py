import numpy as np
import pytest

from regpath import analysis
from regpath.coef import PenaltySpec
from regpath.cov import CovPenalty, solve_sparse_cov
from regpath.model import SurSpec, TimeSeriesPanel, VarSpec, prepare_sur, prepare_var, residual_scatter
from regpath.path import PenaltyGrid, default_grid, fit_map, joint_lambda_max, trace_path
from regpath.errors import ConfigError

from conftest import simulate


def ols_var(Z):
    Zc = Z - Z.mean(axis=0)
    B = np.linalg.lstsq(Zc[:-1], Zc[1:], rcond=None)[0].T
    E = Zc[1:] - Zc[:-1] @ B.T
    return B, E.T @ E / len(E)


def test_unpenalized_is_ols(var_panel):
    d = prepare_var(var_panel, VarSpec())
    est = fit_map(d, PenaltySpec("lasso", 0.0), CovPenalty(0.0))
    B, S = ols_var(var_panel.values)
    assert np.allclose(est.coefficients, B, atol=1e-6)
    assert np.allclose(est.sigma, S, atol=1e-10)
    assert est.converged


def test_total_shrinkage(var_panel):
    d = prepare_var(var_panel, VarSpec())
    for g in (0.0, 0.3):
        est = fit_map(d, PenaltySpec("lasso", 1e9), CovPenalty(g))
        assert np.all(est.coefficients == 0)
        S0 = residual_scatter(d.system, np.zeros(9)).matrix
        assert np.allclose(est.sigma, solve_sparse_cov(S0, CovPenalty(g)).sigma, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_few_outer_iterations_and_half_step_descent(seed):
    rng = np.random.default_rng(seed)
    B = np.diag([0.5, 0.3, 0.4, 0.2])
    B[0, 1] = 0.3
    A = rng.standard_normal((4, 4)) * 0.4
    Z = simulate(B, 200, seed, sigma=A @ A.T + np.eye(4))
    d = prepare_var(TimeSeriesPanel.from_array(Z), VarSpec())
    est = fit_map(d, PenaltySpec("lasso", 0.02), CovPenalty(0.05))
    assert est.converged and est.outer_iterations <= 10
    prev = est.objective_trace[0]
    for q_b, q_s in est.half_steps:
        assert q_b <= prev + 1e-12 * abs(prev)
        assert q_s <= q_b + 1e-12 * abs(q_b)
        prev = q_s


def test_single_point_path_equals_fit(var_panel):
    d = prepare_var(var_panel, VarSpec())
    path = trace_path(d, PenaltyGrid((0.0,), (0.0,)), PenaltySpec("lasso"), keep_estimates=True)
    est = fit_map(d, PenaltySpec("lasso", 0.0), CovPenalty(0.0))
    assert len(path) == 1
    assert np.array_equal(path.estimates[0].coefficients, est.coefficients)
    assert path.points[0].label == "VAR"


def test_lambda_sweep_properties(var_panel):
    d = prepare_var(var_panel, VarSpec())
    grid = default_grid(d, PenaltySpec("lasso"), n_lambda=25, include_gamma=False)
    path = trace_path(d, grid, PenaltySpec("lasso"), keep_estimates=True)
    sizes = [p.active_size for p in path.points]
    assert sizes[0] == 0 and all(a <= b for a, b in zip(sizes, sizes[1:]))
    assert path.points[0].label == "Average" and path.points[-1].label == "VAR"
    # endpoints: window mean and the VAR forecast
    Z = var_panel.values
    assert path.points[0].forecast[0] == Z[:, 0].mean()
    B, _ = ols_var(Z)
    var_fc = Z.mean(axis=0) + B @ (Z[-1] - Z.mean(axis=0))
    assert path.points[-1].forecast[0] == pytest.approx(var_fc[0], abs=1e-6)
    # small lambda steps move the coefficients a little
    coefs = [e.coef for e in path.estimates]
    lams = grid.lambda_values
    for j in range(1, len(coefs) - 1):
        assert np.max(np.abs(coefs[j] - coefs[j - 1])) <= 5.0 * (lams[j - 1] - lams[j]) + 1e-8


def test_gamma_sweep_shrinks_correlation():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((3, 3))
    Z = simulate(np.diag([0.5, 0.3, 0.2]), 300, 3, sigma=A @ A.T + 0.5 * np.eye(3))
    d = prepare_var(TimeSeriesPanel.from_array(Z), VarSpec())
    grid = default_grid(d, PenaltySpec("lasso"), n_lambda=1, n_gamma=10)
    grid = PenaltyGrid((0.0,), grid.gamma_values)
    path = trace_path(d, grid, PenaltySpec("lasso"))
    zeros = [p.sigma_zeros for p in path.points]
    assert all(a <= b for a, b in zip(zeros, zeros[1:]))
    assert zeros[-1] == 3
    first, last = path.points[0].shock_correlations, path.points[-1].shock_correlations
    assert np.all(last == 0) and np.any(first != 0)
    assert path.axis == "gamma"


def test_path_is_deterministic(var_panel):
    d = prepare_var(var_panel, VarSpec())
    grid = default_grid(d, PenaltySpec("lasso"), n_lambda=6, n_gamma=3)
    a = trace_path(d, grid, PenaltySpec("lasso"))
    b = trace_path(d, grid, PenaltySpec("lasso"))
    for p, q in zip(a.points, b.points):
        assert p.objective == q.objective
        assert np.array_equal(p.target_coefficients, q.target_coefficients)


def test_path_records_failures(rng):
    z = rng.standard_normal(50)
    Z = np.column_stack([z, z, rng.standard_normal(50)])
    d = prepare_var(TimeSeriesPanel.from_array(Z), VarSpec())
    path = trace_path(d, PenaltyGrid((1.0, 0.0)), PenaltySpec("ridge"))
    assert path.points[0].error is None
    assert path.points[1].error is not None and "rank deficient" in path.points[1].error


def test_joint_lambda_max_zeroes_B(var_panel):
    d = prepare_var(var_panel, VarSpec())
    for g in (0.0, 0.2):
        lm = joint_lambda_max(d, PenaltySpec("lasso"), CovPenalty(g))
        assert not fit_map(d, PenaltySpec("lasso", lm), CovPenalty(g)).active_set
        assert fit_map(d, PenaltySpec("lasso", 0.9 * lm), CovPenalty(g)).active_set


def test_prior_enters_sigma_step(var_panel):
    d = prepare_var(var_panel, VarSpec())
    S0 = np.eye(3) * 2.0
    est = fit_map(d, PenaltySpec("lasso", 0.0), CovPenalty(0.0, prior_scale=S0, prior_dof=10.0))
    n = d.n_obs
    S_B = residual_scatter(d.system, est.coef_fit).matrix
    assert np.allclose(est.sigma, (n * S_B + S0) / (n + 10.0 - 4), atol=1e-12)


def test_sur_unpenalized_is_gls(rng):
    X = rng.standard_normal((120, 4))
    X[1:, 0] += 0.5 * X[:-1, 2]
    X[1:, 1] += 0.5 * X[:-1, 3] + 0.5 * X[1:, 0]
    P = TimeSeriesPanel.from_array(X, ["y1", "y2", "x1", "x2"])
    d = prepare_sur(P, SurSpec([("y1", ["x1"]), ("y2", ["x1", "x2"])]))
    est = fit_map(d, PenaltySpec("lasso", 0.0), CovPenalty(0.0))
    Xs, z = d.system.design, d.system.response
    W = np.kron(np.linalg.inv(est.sigma), np.eye(119))
    gls = np.linalg.solve(Xs.T @ W @ Xs, Xs.T @ W @ z)
    assert np.allclose(est.coef, gls, atol=1e-8)
    E = d.system.residual_matrix(est.coef)
    assert np.allclose(est.sigma, E.T @ E / 119, atol=1e-12)
    assert analysis.forecast_sur(est).shape == (2,)


def test_grid_validation():
    with pytest.raises(ConfigError):
        PenaltyGrid((0.0, 1.0))
    with pytest.raises(ConfigError):
        PenaltyGrid((1.0,), (0.5, 0.1))
    with pytest.raises(ConfigError):
        PenaltyGrid(())
