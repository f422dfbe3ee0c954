"""L1-penalized covariance estimation by majorize-minimize.

Minimizes ``log det Sigma + tr(S Sigma^{-1}) + gamma * ||P o Sigma||_1`` over
positive definite ``Sigma``. The concave ``log det`` term is linearized at the
current iterate, and each convex surrogate is minimized by proximal gradient
with a masked soft-threshold. Once the sparsity pattern has settled, a few
Newton steps on the support sharpen the answer to machine precision; they are
accepted only if they do not increase the objective.

All iterations run on ``S / c`` with ``c = tr(S) / m`` so that the unit
initial step and the tolerances are scale-free.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, ConvergenceError, DimensionError, DomainError
from .model import _chol

OUTER_TOL = 1e-6
INNER_TOL = 1e-7
MAX_OUTER = 100
MAX_INNER = 1000
PD_FLOOR = 1e-8
MAX_HALVINGS = 60
ZERO_DUST = 1e-10
SLACK = 1e-12


def default_mask(m) -> np.ndarray:
    """Ones off the diagonal, zeros on it: only covariances are penalized."""
    return 1.0 - np.eye(m)


@dataclass(frozen=True, eq=False)
class CovPenalty:
    gamma: float = 0.0
    mask: Optional[np.ndarray] = None
    prior_scale: Optional[np.ndarray] = None
    prior_dof: Optional[float] = None

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ConfigError(f"gamma must be nonnegative, got {self.gamma}")
        if self.mask is not None:
            P = np.array(self.mask, dtype=float)
            if P.ndim != 2 or P.shape[0] != P.shape[1] or not np.array_equal(P, P.T):
                raise ConfigError("mask must be a symmetric square matrix")
            if not np.all((P == 0) | (P == 1)):
                raise ConfigError("mask entries must be 0 or 1")
            P.setflags(write=False)
            object.__setattr__(self, "mask", P)

    def mask_for(self, m) -> np.ndarray:
        if self.mask is None:
            return default_mask(m)
        if self.mask.shape != (m, m):
            raise DimensionError(f"mask is {self.mask.shape}, expected {(m, m)}")
        return self.mask

    def with_gamma(self, gamma) -> "CovPenalty":
        return CovPenalty(float(gamma), self.mask, self.prior_scale, self.prior_dof)


@dataclass(frozen=True, eq=False)
class CovSolution:
    sigma: np.ndarray
    correlation: np.ndarray
    objective: float
    outer_iterations: int
    inner_iterations: int
    converged: bool
    trace: np.ndarray = field(default=None, repr=False)
    polished: bool = False


def full_mask(m) -> np.ndarray:
    return np.ones((m, m))


def _check_scatter(S):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(f"scatter must be square, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise DomainError("scatter has non-finite entries")
    if not np.allclose(S, S.T, rtol=1e-12, atol=1e-14 * max(np.abs(S).max(), 1e-300)):
        raise ConfigError("scatter matrix is not symmetric")
    return (S + S.T) / 2.0


def effective_scatter(S_B, n_obs, penalty: CovPenalty):
    """Fold an inverse-Wishart prior ``(S0, nu)`` into the scatter.

    Returns ``(S_eff, weight)`` with ``S_eff = (n S_B + S0) / (n + nu_adj)``,
    ``nu_adj = nu - m - 1`` (0 without ``nu``) and ``weight = (n + nu_adj) / n``,
    the factor multiplying ``log det + trace`` relative to the likelihood alone.
    """
    S_B = np.asarray(S_B, dtype=float)
    m = S_B.shape[0]
    if penalty.prior_scale is None and penalty.prior_dof is None:
        return S_B, 1.0
    S0 = np.zeros((m, m)) if penalty.prior_scale is None else np.asarray(penalty.prior_scale, dtype=float)
    if S0.shape != (m, m):
        raise DimensionError("prior_scale has the wrong shape")
    nu_adj = 0.0 if penalty.prior_dof is None else float(penalty.prior_dof) - m - 1
    if n_obs + nu_adj <= 0:
        raise ConfigError("prior degrees of freedom too small for the sample size")
    return (n_obs * S_B + S0) / (n_obs + nu_adj), (n_obs + nu_adj) / n_obs


def _logdet_inv(sigma):
    L = _chol(sigma)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    Linv = np.linalg.inv(L)
    return logdet, Linv.T @ Linv


def cov_objective(sigma, S, penalty: CovPenalty) -> float:
    """``log det Sigma + tr(S Sigma^{-1}) + gamma * ||P o Sigma||_1``."""
    sigma = np.asarray(sigma, dtype=float)
    S = np.asarray(S, dtype=float)
    P = penalty.mask_for(sigma.shape[0])
    logdet, inv = _logdet_inv(sigma)
    return float(logdet + np.sum(S * inv) + penalty.gamma * np.sum(np.abs(P * sigma)))


def correlation_from_cov(sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    d = np.diag(sigma)
    if np.any(d <= 0):
        raise DomainError("covariance has a nonpositive diagonal entry")
    s = np.sqrt(d)
    rho = sigma / np.outer(s, s)
    np.fill_diagonal(rho, 1.0)
    return np.clip(rho, -1.0, 1.0)


def _soft_mask(X, thresh):
    return np.sign(X) * np.maximum(np.abs(X) - thresh, 0.0)


def _min_eig(X):
    return np.linalg.eigvalsh(X)[0]


def _smooth_surrogate(X, A, S):
    """``tr(A X) + tr(S X^{-1})`` and its gradient; None when X is not PD."""
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return None, None
    Linv = np.linalg.inv(L)
    inv = Linv.T @ Linv
    val = float(np.sum(A * X) + np.sum(S * inv))
    grad = A - inv @ S @ inv
    return val, (grad + grad.T) / 2.0


def majorize_step(sigma_k, S, gamma, mask, *, pd_floor=PD_FLOOR, tol=INNER_TOL, max_inner=MAX_INNER):
    """Minimize the convex surrogate ``tr(Sigma_k^{-1} X) + tr(S X^{-1}) + gamma ||P o X||_1``.

    Starts at ``Sigma_k``. Returns ``(X, inner_iterations, stalled)``; ``stalled``
    is set when the line search could not find an acceptable step, in which
    case the last accepted iterate is returned.
    """
    sigma_k = np.asarray(sigma_k, dtype=float)
    _, A = _logdet_inv(sigma_k)
    thresh_base = gamma * mask
    X = sigma_k.copy()
    g_val, grad = _smooth_surrogate(X, A, S)
    h_val = g_val + float(np.sum(thresh_base * np.abs(X)))
    t = 1.0
    it = 0
    for it in range(1, max_inner + 1):
        accepted = False
        for _ in range(MAX_HALVINGS):
            Y = _soft_mask(X - t * grad, t * thresh_base)
            Y = (Y + Y.T) / 2.0
            if _min_eig(Y) >= pd_floor:
                gY, gradY = _smooth_surrogate(Y, A, S)
                D = Y - X
                if gY is not None and gY <= g_val + np.sum(grad * D) + np.sum(D * D) / (2.0 * t):
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            return X, it, True
        hY = gY + float(np.sum(thresh_base * np.abs(Y)))
        if hY > h_val:
            # rounding at the optimum; keep the better point
            return X, it, False
        done = abs(h_val - hY) <= tol * max(abs(h_val), 1.0)
        X, g_val, grad, h_val = Y, gY, gradY, hY
        if done or not np.any(D):
            break
        t = min(1.0, 2.0 * t)
    return X, it, False


def _newton_polish(sigma, S, gamma, mask, f0, pd_floor, max_iter=30):
    """Newton iterations on the stationarity equations restricted to the support.

    Penalized entries keep their signs. When a full step would push one
    through zero it is set to exactly zero and leaves the support; otherwise
    steps are halved until they stay in the PD cone without raising the
    objective, and rejected if none does.
    """
    m = sigma.shape[0]
    iu = np.triu_indices(m)
    X, f = sigma.copy(), f0
    improved = False
    for _ in range(max_iter):
        free = [(i, j) for i, j in zip(*iu) if mask[i, j] == 0 or X[i, j] != 0]
        if not free:
            break
        rows = np.array([i for i, _ in free])
        cols = np.array([j for _, j in free])
        sign = np.sign(X[rows, cols]) * mask[rows, cols]
        _, inv = _logdet_inv(X)
        W = inv @ S @ inv
        G = inv - W
        R = G[rows, cols] + gamma * sign
        if np.max(np.abs(R)) <= 1e-14:
            break
        J = np.empty((len(free), len(free)))
        for a, (i, j) in enumerate(free):
            E = np.zeros((m, m))
            E[i, j] = 1.0
            E[j, i] = 1.0
            dG = -inv @ E @ inv + inv @ E @ W + W @ E @ inv
            J[:, a] = dG[rows, cols]
        step = np.linalg.lstsq(J, -R, rcond=None)[0]
        full = X[rows, cols] + step
        flips = (sign != 0) & (np.sign(full) != sign)
        trials = [np.where(flips, 0.0, full)] if flips.any() else []
        s = 1.0
        for _ in range(30):
            trials.append(X[rows, cols] + s * step)
            s *= 0.5
        accepted = False
        for vals in trials:
            if not np.all((sign == 0) | (vals == 0) | (np.sign(vals) == sign)):
                continue
            Y = np.zeros_like(X)
            Y[rows, cols] = vals
            Y[cols, rows] = vals
            if _min_eig(Y) >= pd_floor:
                fY = _objective_scaled(Y, S, gamma, mask)
                if fY <= f + SLACK * max(abs(f), 1.0):
                    accepted = True
                    break
        if not accepted:
            break
        moved = np.max(np.abs(Y - X))
        X, f, improved = Y, min(f, fY), True
        if moved <= 1e-15 * np.max(np.abs(X)):
            break
    return X, f, improved


def _objective_scaled(X, S, gamma, mask):
    logdet, inv = _logdet_inv(X)
    return float(logdet + np.sum(S * inv) + gamma * np.sum(np.abs(mask * X)))


def solve_sparse_cov(S, penalty: CovPenalty, init=None, *, outer_tol=OUTER_TOL, inner_tol=INNER_TOL,
                     max_outer=MAX_OUTER, max_inner=MAX_INNER, polish=True,
                     raise_on_failure=True) -> CovSolution:
    """Sparse covariance MAP estimate for scatter ``S``.

    ``init`` (PD) warm-starts the iteration; otherwise ``S`` is used, lifted by
    ``1e-4 tr(S)/m`` when nearly singular. With ``gamma == 0`` and ``S`` PD the
    minimizer is ``S`` itself and is returned immediately.
    """
    S = _check_scatter(S)
    m = S.shape[0]
    mask = penalty.mask_for(m)
    scale = np.trace(S) / m
    if not scale > 0:
        raise DomainError("scatter has zero trace")
    Ss = S / scale
    gamma = penalty.gamma * scale
    pd_floor = PD_FLOOR
    eig_min = _min_eig(Ss)
    if penalty.gamma == 0 and eig_min >= 1e-8 and init is None:
        f = cov_objective(S, S, penalty)
        return CovSolution(S.copy(), correlation_from_cov(S), f, 0, 0, True, np.array([f]))
    if init is not None:
        X = np.asarray(init, dtype=float) / scale
        X = (X + X.T) / 2.0
        if _min_eig(X) < pd_floor:
            raise DomainError("initial covariance is not positive definite")
    elif eig_min < 1e-8:
        X = Ss + 1e-4 * np.eye(m)
    else:
        X = Ss.copy()
    f = _objective_scaled(X, Ss, gamma, mask)
    trace = [f]
    inner_total = 0
    converged = False
    k = 0
    for k in range(1, max_outer + 1):
        Y, n_inner, stalled = majorize_step(X, Ss, gamma, mask, pd_floor=pd_floor, tol=inner_tol,
                                            max_inner=max_inner)
        inner_total += n_inner
        fY = _objective_scaled(Y, Ss, gamma, mask)
        if fY > f:
            # inexact inner solve failed to decrease; stop at the previous iterate
            converged = True
            break
        delta = f - fY
        X, f = Y, fY
        trace.append(f)
        if delta <= outer_tol * max(abs(f), 1.0) or stalled:
            converged = True
            break
    polished = False
    if converged and polish:
        X, f_pol, polished = _newton_polish(X, Ss, gamma, mask, f, pd_floor)
        if polished:
            f = f_pol
            trace.append(f)
    sigma = X * scale
    dust = (mask == 1) & (np.abs(sigma) <= ZERO_DUST * scale)
    sigma[dust] = 0.0
    sigma = (sigma + sigma.T) / 2.0
    objective = cov_objective(sigma, S, penalty)
    trace = np.array(trace) + m * np.log(scale)
    if not converged and raise_on_failure:
        raise ConvergenceError(f"MM did not converge in {max_outer} outer iterations",
                               last_iterate=sigma, trace=trace)
    return CovSolution(sigma, correlation_from_cov(sigma), objective, k, inner_total, converged,
                       trace, polished)


def gamma_max(S, mask=None) -> float:
    """Smallest gamma at which ``diag(S)`` satisfies the optimality conditions.

    Exact for masks with a zero diagonal; used as the top of default grids.
    """
    S = _check_scatter(S)
    m = S.shape[0]
    P = default_mask(m) if mask is None else np.asarray(mask, dtype=float)
    d = np.diag(S)
    G = np.abs(S) / np.outer(d, d)
    off = (P == 1) & ~np.eye(m, dtype=bool)
    return float(np.max(G[off], initial=0.0))


def diagonalizing_gamma(S, mask=None, growth=1.1, max_steps=100) -> float:
    """Smallest gamma on the grid ``gamma_max * growth**k`` whose cold-started solve zeroes every masked entry.

    The objective is not convex, so ``diag(S)`` can be stationary at
    ``gamma_max`` while a lower non-diagonal minimum still exists.
    """
    S = _check_scatter(S)
    m = S.shape[0]
    P = default_mask(m) if mask is None else np.asarray(mask, dtype=float)
    g = gamma_max(S, P)
    if g == 0:
        return 0.0
    for _ in range(max_steps):
        sol = solve_sparse_cov(S, CovPenalty(g, P), raise_on_failure=False)
        if not np.any(sol.sigma[P == 1]):
            return float(g)
        g *= growth
    raise ConvergenceError("could not find a gamma that diagonalizes the covariance")
