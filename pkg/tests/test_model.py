import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from regpath.coef import quadratic, solve_ridge, whiten
from regpath.errors import AlignmentError, DimensionError, DomainError, InsufficientDataError
from regpath.model import (
    LOG_2PI,
    StackedSystem,
    SurSpec,
    TimeSeriesPanel,
    VarSpec,
    build_sur_design,
    build_var_design,
    demean_panel,
    gaussian_nll,
    neg_log_likelihood,
    prepare_sur,
    prepare_var,
    residual_scatter,
)


def test_panel_validation():
    with pytest.raises(AlignmentError):
        TimeSeriesPanel([2, 1], ("a",), [[1.0], [2.0]])
    with pytest.raises(DimensionError):
        TimeSeriesPanel([1, 2], ("a", "a"), [[1.0, 2.0], [3.0, 4.0]])
    with pytest.raises(DimensionError, match="row 1"):
        TimeSeriesPanel([1, 2], ("a",), [[1.0], [np.nan]])


def test_demean_constant_and_centered():
    p = TimeSeriesPanel.from_array(np.column_stack([np.full(4, 3.5), [1.0, -1.0, 2.0, -2.0]]))
    c, means = demean_panel(p)
    assert np.array_equal(c.values[:, 0], np.zeros(4))
    assert means[0] == 3.5
    assert means[1] == 0.0
    assert np.array_equal(c.values[:, 1], p.values[:, 1])


def test_demean_matches_oracle(rng):
    X = rng.standard_normal((5, 2))
    c, means = demean_panel(TimeSeriesPanel.from_array(X))
    for j in range(2):
        m = sum(X[:, j]) / 5
        assert np.allclose(c.values[:, j], X[:, j] - m, rtol=0, atol=1e-15)


@given(arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 4)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_demean_properties(X):
    c, means = demean_panel(TimeSeriesPanel.from_array(X))
    scale = np.maximum(np.abs(X).max(axis=0), 1.0)
    assert np.all(np.abs(c.values.mean(axis=0)) <= 1e-12 * scale)
    # adding the means back reproduces the input up to a rounding of each entry
    assert np.allclose(c.values + means, X, rtol=0, atol=4 * np.finfo(float).eps * scale)


def test_var_design_single_block():
    Z = np.array([[1.0, 2.0], [3.0, 4.0]])
    s = build_var_design(TimeSeriesPanel.from_array(Z), VarSpec())
    assert np.array_equal(s.design, np.kron(Z[:1], np.eye(2)))
    assert np.array_equal(s.response, Z[1])
    assert s.design.shape == (2, 4)


def test_var_design_too_short():
    with pytest.raises(InsufficientDataError):
        build_var_design(TimeSeriesPanel.from_array(np.ones((1, 2))), VarSpec())


def test_var_univariate_is_ar1(rng):
    z = rng.standard_normal(30)
    s = build_var_design(TimeSeriesPanel.from_array(z), VarSpec())
    assert np.array_equal(s.design[:, 0], z[:-1])
    assert np.array_equal(s.response, z[1:])


def test_var_stacked_ols_equals_equationwise(rng):
    Z = rng.standard_normal((6, 3))
    s = build_var_design(TimeSeriesPanel.from_array(Z), VarSpec())
    b = np.linalg.lstsq(s.design, s.response, rcond=None)[0]
    beta = b.reshape(3, 3, order="F")
    X, Y = Z[:-1], Z[1:]
    for i in range(3):
        bi = np.linalg.lstsq(X, Y[:, i], rcond=None)[0]
        assert np.allclose(beta[i], bi, atol=1e-10)
    # fitted values reconstruct from the coefficient matrix
    assert np.allclose(s.design @ b, (X @ beta.T).reshape(-1))


def test_time_blocks_cover_rows():
    Z = np.arange(12.0).reshape(4, 3)
    s = build_var_design(TimeSeriesPanel.from_array(Z), VarSpec())
    assert sorted(s.time_blocks.ravel()) == list(range(9))
    sur = build_sur_design(TimeSeriesPanel.from_array(Z, ["a", "b", "c"]), SurSpec([("a", ["c"]), ("b", ["c"])]))
    assert sorted(sur.time_blocks.ravel()) == list(range(6))


def test_sur_single_equation_is_regression(rng):
    X = rng.standard_normal((20, 3))
    p = TimeSeriesPanel.from_array(X, ["y", "x1", "x2"])
    s = build_sur_design(p, SurSpec([("y", ["x1", "x2"])], lag=0, intercept=False))
    assert np.array_equal(s.design, X[:, 1:])
    assert s.weight_dim == 1


def test_sur_identical_regressors_gls_is_ols(rng):
    X = rng.standard_normal((40, 4))
    p = TimeSeriesPanel.from_array(X, ["y1", "y2", "x1", "x2"])
    s = build_sur_design(p, SurSpec([("y1", ["x1", "x2"]), ("y2", ["x1", "x2"])], lag=1))
    gls = solve_ridge(whiten(s, np.diag([2.0, 0.5])), 0.0).coefficients
    Xl = np.column_stack([np.ones(39), X[:-1, 2:]])
    for j, col in enumerate([0, 1]):
        ols = np.linalg.lstsq(Xl, X[1:, col], rcond=None)[0]
        assert np.allclose(gls[3 * j:3 * j + 3], ols, atol=1e-10)


def test_sur_bond_layout(rng):
    cols = [f"rx{i}" for i in range(4)] + [f"x{j}" for j in range(11)]
    p = TimeSeriesPanel.from_array(rng.standard_normal((30, 15)), cols)
    s = build_sur_design(p, SurSpec([(f"rx{i}", cols[4:]) for i in range(4)], intercept=False))
    assert s.n_coef == 44
    assert s.weight_dim == 4
    for j in range(4):
        block = s.design[j * 29:(j + 1) * 29]
        assert np.count_nonzero(block[:, j * 11:(j + 1) * 11]) == block[:, j * 11:(j + 1) * 11].size
        assert not np.any(np.delete(block, np.s_[j * 11:(j + 1) * 11], axis=1))


def test_sur_mismatched_lags():
    p = TimeSeriesPanel.from_array(np.ones((5, 3)), ["a", "b", "c"])
    with pytest.raises(AlignmentError):
        build_sur_design(p, SurSpec([("a", ["c"], 1), ("b", ["c"], 2)]))


def test_residual_scatter_examples(rng):
    z = np.array([1.0, -1.0, 1.0, -1.0, 1.0])
    s = build_var_design(TimeSeriesPanel.from_array(z), VarSpec())
    assert residual_scatter(s, np.zeros(1)).matrix[0, 0] == 1.0
    # perfect fit
    assert np.array_equal(residual_scatter(s, np.array([-1.0])).matrix, np.zeros((1, 1)))
    Z = rng.standard_normal((15, 3))
    s = build_var_design(TimeSeriesPanel.from_array(Z), VarSpec())
    b = rng.standard_normal(9)
    B = b.reshape(3, 3, order="F")
    E = Z[1:] - Z[:-1] @ B.T
    assert np.allclose(residual_scatter(s, b).matrix, E.T @ E / 14, atol=1e-14)


def test_scatter_time_order_invariant_at_zero(rng):
    Z = rng.standard_normal((10, 2))
    s = build_var_design(TimeSeriesPanel.from_array(Z), VarSpec())
    perm = rng.permutation(9)
    s2 = StackedSystem(s.response.reshape(9, 2)[perm].ravel(), s.design, 2, s.time_blocks)
    assert np.allclose(residual_scatter(s, np.zeros(4)).matrix, residual_scatter(s2, np.zeros(4)).matrix,
                       rtol=1e-14)


def test_nll_zero_residuals():
    assert gaussian_nll(np.eye(2), np.zeros((2, 2)), 2) == pytest.approx(2 * LOG_2PI, abs=1e-12)
    assert 2 * LOG_2PI == pytest.approx(3.675754, abs=1e-6)


@pytest.mark.parametrize("c", [0.3, 1.0, 2.5])
def test_nll_scaling(c, rng):
    A = rng.standard_normal((3, 3))
    S = A @ A.T + np.eye(3)
    T = 7
    diff = gaussian_nll(c * S, S, T) - gaussian_nll(S, S, T)
    assert diff == pytest.approx(T / 2 * (3 * np.log(c) + 3 / c - 3), rel=1e-12, abs=1e-12)


def test_nll_density_oracle(rng):
    Z = rng.standard_normal((12, 3))
    s = build_var_design(TimeSeriesPanel.from_array(Z), VarSpec())
    b = 0.3 * rng.standard_normal(9)
    sigma = np.array([[1.0, 0.3, 0.1], [0.3, 2.0, -0.2], [0.1, -0.2, 0.5]])
    E = s.residual_matrix(b)
    oracle = -stats.multivariate_normal(np.zeros(3), sigma).logpdf(E).sum()
    assert neg_log_likelihood(b, sigma, s) == pytest.approx(oracle, rel=1e-10)


def test_nll_rejects_non_pd():
    s = build_var_design(TimeSeriesPanel.from_array(np.arange(8.0).reshape(4, 2)), VarSpec())
    with pytest.raises(DomainError):
        neg_log_likelihood(np.zeros(4), np.array([[1.0, 2.0], [2.0, 1.0]]), s)


def test_stacked_unpenalized_identity_weight_is_ols(rng):
    Z = rng.standard_normal((40, 3))
    s = build_var_design(TimeSeriesPanel.from_array(Z), VarSpec())
    b = solve_ridge(s, 0.0).coefficients.reshape(3, 3, order="F")
    ols = np.linalg.lstsq(Z[:-1], Z[1:], rcond=None)[0].T
    assert np.allclose(b, ols, rtol=1e-10, atol=1e-12)


def test_prepare_var_standardize_round_trip(rng):
    Z = rng.standard_normal((50, 2)) * [1.0, 100.0] + [5.0, -3.0]
    d = prepare_var(TimeSeriesPanel.from_array(Z), VarSpec(standardize=True))
    assert np.allclose(d.means, Z.mean(axis=0))
    b = np.array([0.1, 0.2, 0.3, 0.4])
    coef, sigma = d.to_original_scale(b, np.eye(2))
    B = coef.reshape(2, 2, order="F")
    assert B[0, 1] == pytest.approx(0.3 * d.scales[0] / d.scales[1])
    assert np.allclose(np.diag(sigma), d.scales ** 2)


def test_prepare_sur_scales_only_regressors(rng):
    X = rng.standard_normal((30, 3)) * [1.0, 10.0, 0.1]
    p = TimeSeriesPanel.from_array(X, ["y", "x", "w"])
    d = prepare_sur(p, SurSpec([("y", ["x", "w"]), ("x", ["y"])], standardize=True))
    assert np.array_equal(d.system.response[:29], X[1:, 0])
    assert np.array_equal(d.system.response[29:], X[1:, 1])
    q = quadratic(d.system)
    assert q.G.shape == (5, 5)
