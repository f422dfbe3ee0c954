"""Penalized generalized least squares for the coefficient step.

Objective convention (used for every reported lambda)::

    (1 / (2 s)) * ||C (y - X b)||^2 + lambda * penalty(b)

where ``C' C = Sigma^{-1}`` is applied per time block and ``s`` is the number
of observations (``normalize=True``) or 1 (``normalize=False``, "half-SSE").
Penalties follow the glmnet parameterization:

* ridge:        ``0.5 * ||b||_2^2``
* lasso:        ``||b||_1``
* elastic_net:  ``mixing * ||b||_1 + 0.5 * (1 - mixing) * ||b||_2^2``
* group_lasso:  ``sum_g ||b_g||_2`` (or ``||b||_1`` with ``group_norm="l1"``)

Coefficients listed in ``penalty_exempt`` (and intercepts flagged by the
system) are never penalized.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from . import _kernels
from .errors import ConfigError, ConvergenceError, DimensionError, SingularityError
from .model import StackedSystem, _chol

FAMILIES = ("ridge", "lasso", "elastic_net", "group_lasso")
MAX_SWEEPS = 10_000
CD_TOL = 1e-9
RIDGE_MIXING_FLOOR = 1e-3


@dataclass(frozen=True)
class PenaltySpec:
    family: str = "lasso"
    lam: float = 0.0
    mixing: Optional[float] = None
    groups: Optional[tuple] = None
    penalty_exempt: tuple = ()
    normalize: bool = True
    group_norm: str = "l2"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown penalty family {self.family!r}; choose from {FAMILIES}")
        if not (self.lam >= 0):
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if self.mixing is not None and not 0.0 <= self.mixing <= 1.0:
            raise ConfigError(f"mixing must lie in [0, 1], got {self.mixing}")
        if self.group_norm not in ("l2", "l1"):
            raise ConfigError("group_norm must be 'l2' or 'l1'")
        if self.family == "group_lasso" and self.groups is None:
            raise ConfigError("group_lasso needs groups")
        if self.groups is not None:
            object.__setattr__(self, "groups", tuple(tuple(int(i) for i in g) for g in self.groups))
        object.__setattr__(self, "penalty_exempt", tuple(int(i) for i in self.penalty_exempt))

    @property
    def alpha(self) -> float:
        """Weight on the L1 term."""
        if self.family == "ridge":
            return 0.0
        if self.family == "lasso":
            return 1.0
        if self.family == "group_lasso":
            return 1.0
        return 0.5 if self.mixing is None else float(self.mixing)

    def with_lambda(self, lam) -> "PenaltySpec":
        return PenaltySpec(
            self.family, float(lam), self.mixing, self.groups, self.penalty_exempt,
            self.normalize, self.group_norm,
        )


@dataclass(frozen=True, eq=False)
class CoefSolution:
    coefficients: np.ndarray
    active_set: tuple
    objective: float
    iterations: int
    converged: bool
    trace: np.ndarray = None


@dataclass(frozen=True, eq=False)
class Quadratic:
    """``0.5 b'Gb - c'b + const``: the smooth part of the objective."""

    G: np.ndarray
    c: np.ndarray
    const: float
    exempt: tuple = ()

    def value(self, b) -> float:
        return float(0.5 * b @ self.G @ b - self.c @ b + self.const)

    def gradient(self, b) -> np.ndarray:
        return self.G @ b - self.c


def whitening_factor(sigma) -> np.ndarray:
    """Upper factor ``C`` with ``C' C = Sigma^{-1}`` (inverse Cholesky factor)."""
    L = _chol(sigma)
    return linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True)


def whiten(system: StackedSystem, sigma) -> StackedSystem:
    """Premultiply each time block of rows by ``C``; OLS on the result is GLS on the input."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (system.weight_dim, system.weight_dim):
        raise DimensionError(f"Sigma must be {system.weight_dim}x{system.weight_dim}")
    C = whitening_factor(sigma)
    tb = system.time_blocks
    y = system.response.copy()
    X = system.design.copy()
    y[tb] = system.response[tb] @ C.T
    X[tb] = np.einsum("ij,tjk->tik", C, system.design[tb])
    lagged = system.lagged if np.array_equal(sigma, np.eye(len(sigma))) else None
    return StackedSystem(y, X, system.weight_dim, tb, system.exempt, lagged)


def quadratic(system: StackedSystem, sigma=None, normalize=True) -> Quadratic:
    """Gram form of the (weighted) least-squares loss."""
    scale = system.n_obs if normalize else 1.0
    if sigma is None:
        sigma_inv = None
    else:
        sigma = np.asarray(sigma, dtype=float)
        if sigma.shape != (system.weight_dim, system.weight_dim):
            raise DimensionError(f"Sigma must be {system.weight_dim}x{system.weight_dim}")
        C = whitening_factor(sigma)
        sigma_inv = C.T @ C
    Y = system.response_matrix()
    if system.lagged is not None:
        W = np.eye(system.weight_dim) if sigma_inv is None else sigma_inv
        Lg = system.lagged
        G = np.kron(Lg.T @ Lg, W)
        c = (W @ Y.T @ Lg).reshape(-1, order="F")
        yy = float(np.einsum("ti,ij,tj->", Y, W, Y))
    elif sigma_inv is None:
        X = system.design
        G = X.T @ X
        c = X.T @ system.response
        yy = float(system.response @ system.response)
    else:
        w = whiten(system, sigma)
        G = w.design.T @ w.design
        c = w.design.T @ w.response
        yy = float(w.response @ w.response)
    G = (G + G.T) / 2.0
    return Quadratic(G / scale, c / scale, 0.5 * yy / scale, system.exempt)


def _exempt_mask(k, exempt, spec):
    mask = np.zeros(k, dtype=bool)
    idx = list(exempt) + list(spec.penalty_exempt)
    if idx and (min(idx) < 0 or max(idx) >= k):
        raise DimensionError("penalty_exempt index out of range")
    mask[idx] = True
    return mask


def _penalty_value(b, spec, exempt):
    pen = b[~exempt]
    lam, a = spec.lam, spec.alpha
    if lam == 0:
        return 0.0
    if math.isinf(lam):
        # the constraint set {penalized part = 0}
        return 0.0 if not np.any(pen) else math.inf
    if spec.family == "group_lasso" and spec.group_norm == "l2":
        return lam * sum(math.sqrt(float(np.sum(b[list(g)] ** 2))) for g in spec.groups)
    l1 = float(np.abs(pen).sum()) if a > 0 else 0.0
    l2 = float(pen @ pen) if a < 1 else 0.0
    return lam * (a * l1 + 0.5 * (1 - a) * l2)


def penalized_objective(quad: Quadratic, b, spec: PenaltySpec) -> float:
    exempt = _exempt_mask(len(b), quad.exempt, spec)
    return quad.value(b) + _penalty_value(np.asarray(b, dtype=float), spec, exempt)


def _unpenalized_exempt(quad, exempt):
    """Minimize over exempt coordinates with everything else at zero."""
    b = np.zeros(len(quad.c))
    if exempt.any():
        idx = np.flatnonzero(exempt)
        Gs = quad.G[np.ix_(idx, idx)]
        try:
            b[idx] = linalg.solve(Gs, quad.c[idx], assume_a="sym")
        except linalg.LinAlgError:
            raise SingularityError("unpenalized (exempt) block of the design is singular") from None
    return b


def _solution(quad, b, spec, iterations, converged, trace=None):
    b = np.where(np.abs(b) > 0, b, 0.0)
    active = tuple(int(i) for i in np.flatnonzero(b))
    return CoefSolution(b, active, penalized_objective(quad, b, spec), iterations, converged, trace)


def solve_ridge_quadratic(quad: Quadratic, lam: float, exempt_extra=()) -> CoefSolution:
    spec = PenaltySpec("ridge", lam, penalty_exempt=exempt_extra)
    k = len(quad.c)
    exempt = _exempt_mask(k, quad.exempt, spec)
    if math.isinf(lam):
        return _solution(quad, _unpenalized_exempt(quad, exempt), spec, 1, True)
    A = quad.G + lam * np.diag((~exempt).astype(float))
    if lam == 0 and np.linalg.matrix_rank(A) < k:
        raise SingularityError("design is rank deficient; ridge with lambda=0 has no unique solution")
    try:
        b = linalg.solve(A, quad.c, assume_a="pos")
    except linalg.LinAlgError:
        raise SingularityError("ridge normal equations are singular") from None
    return _solution(quad, b, spec, 1, True)


def solve_ridge(system: StackedSystem, lam: float, *, normalize=True, penalty_exempt=()) -> CoefSolution:
    """Closed-form ridge: ``(X'X/s + lam * D) b = X'y/s``, ``D`` zero on exempt coordinates."""
    if not lam >= 0:
        raise ConfigError("lambda must be nonnegative")
    return solve_ridge_quadratic(quadratic(system, normalize=normalize), lam, penalty_exempt)


def solve_quadratic(quad: Quadratic, spec: PenaltySpec, init=None, *, max_sweeps=MAX_SWEEPS,
                    tol=CD_TOL, raise_on_failure=True) -> CoefSolution:
    """Dispatch on the penalty family for a precomputed quadratic."""
    k = len(quad.c)
    exempt = _exempt_mask(k, quad.exempt, spec)
    if math.isinf(spec.lam):
        return _solution(quad, _unpenalized_exempt(quad, exempt), spec, 1, True)
    if spec.family == "ridge":
        return solve_ridge_quadratic(quad, spec.lam, spec.penalty_exempt)
    b = np.zeros(k) if init is None else np.array(init, dtype=float)
    if b.shape != (k,):
        raise DimensionError(f"init has shape {b.shape}, expected ({k},)")
    G = np.ascontiguousarray(quad.G)
    c = np.ascontiguousarray(quad.c)
    if spec.family == "group_lasso" and spec.group_norm == "l2" and spec.lam > 0:
        gidx, gsize = _group_arrays(spec.groups, k, exempt)
        evals, evecs = _group_eigs(G, gidx, gsize)
        free = np.flatnonzero(exempt).astype(np.int64)
        sweeps, converged, trace = _kernels.group_bcd(
            G, c, b, free, gidx, gsize, evals, evecs, float(spec.lam), max_sweeps, tol
        )
    else:
        l1 = np.where(exempt, 0.0, spec.lam * spec.alpha)
        l2 = np.where(exempt, 0.0, spec.lam * (1.0 - spec.alpha))
        sweeps, converged, trace = _kernels.enet_cd(G, c, b, l1, l2, max_sweeps, tol)
    trace = trace + quad.const
    if not converged and raise_on_failure:
        raise ConvergenceError(
            f"coordinate descent did not converge in {max_sweeps} sweeps", last_iterate=b.copy(), trace=trace
        )
    return _solution(quad, b, spec, int(sweeps), bool(converged), trace)


def _group_arrays(groups, k, exempt):
    seen = np.zeros(k, dtype=int)
    for g in groups:
        seen[list(g)] += 1
    covered = seen == 1
    if np.any(seen > 1) or np.any(seen[exempt] > 0) or not np.array_equal(covered, ~exempt):
        raise ConfigError("groups must partition the non-exempt coefficient indices")
    maxg = max(len(g) for g in groups)
    gidx = np.zeros((len(groups), maxg), dtype=np.int64)
    gsize = np.array([len(g) for g in groups], dtype=np.int64)
    for i, g in enumerate(groups):
        gidx[i, : len(g)] = g
    return gidx, gsize


def _group_eigs(G, gidx, gsize):
    n, maxg = gidx.shape
    evals = np.zeros((n, maxg))
    evecs = np.zeros((n, maxg, maxg))
    for g in range(n):
        idx = gidx[g, : gsize[g]]
        d, Q = np.linalg.eigh(G[np.ix_(idx, idx)])
        evals[g, : gsize[g]] = np.maximum(d, 0.0)
        evecs[g, : gsize[g], : gsize[g]] = Q
    return evals, evecs


def solve_elastic_net(system: StackedSystem, spec: PenaltySpec, init=None, **kw) -> CoefSolution:
    """Coordinate descent for lasso / elastic net on an (already whitened) system."""
    if spec.family == "group_lasso" and spec.group_norm == "l2":
        raise ConfigError("use solve_group_lasso for the group penalty")
    return solve_quadratic(quadratic(system, normalize=spec.normalize), spec, init, **kw)


def solve_group_lasso(system: StackedSystem, spec: PenaltySpec, init=None, **kw) -> CoefSolution:
    """Block coordinate descent for ``lam * sum_g ||b_g||_2``.

    With ``group_norm="l1"`` the penalty is the plain sum of absolute values
    over all grouped coefficients, i.e. the lasso.
    """
    if spec.groups is None:
        raise ConfigError("group lasso needs groups")
    if spec.group_norm == "l1":
        spec = PenaltySpec("lasso", spec.lam, None, None, spec.penalty_exempt, spec.normalize)
    elif spec.family != "group_lasso":
        spec = PenaltySpec("group_lasso", spec.lam, None, spec.groups, spec.penalty_exempt, spec.normalize)
    return solve_quadratic(quadratic(system, normalize=spec.normalize), spec, init, **kw)


def kkt_residual(quad: Quadratic, b, spec: PenaltySpec) -> float:
    """Largest violation of the subgradient optimality conditions at ``b``."""
    b = np.asarray(b, dtype=float)
    exempt = _exempt_mask(len(b), quad.exempt, spec)
    grad = quad.gradient(b)
    if spec.family == "group_lasso" and spec.group_norm == "l2":
        worst = float(np.max(np.abs(grad[exempt]), initial=0.0))
        for g in spec.groups:
            g = list(g)
            bg, gg = b[g], grad[g]
            nb = np.linalg.norm(bg)
            if nb == 0:
                worst = max(worst, np.linalg.norm(gg) - spec.lam)
            else:
                worst = max(worst, float(np.max(np.abs(gg + spec.lam * bg / nb))))
        return max(worst, 0.0)
    l1 = spec.lam * spec.alpha
    l2 = spec.lam * (1.0 - spec.alpha)
    g = grad + np.where(exempt, 0.0, l2) * b
    res = np.where(
        exempt,
        np.abs(g),
        np.where(b != 0, np.abs(g + l1 * np.sign(b)), np.maximum(np.abs(g) - l1, 0.0)),
    )
    return float(res.max(initial=0.0))


def lambda_max(quad: Quadratic, spec: PenaltySpec) -> float:
    """Smallest lambda at which every penalized coefficient is exactly zero.

    For ridge the value uses a mixing floor of 1e-3, as the exact threshold is infinite.
    """
    k = len(quad.c)
    exempt = _exempt_mask(k, quad.exempt, spec)
    b0 = _unpenalized_exempt(quad, exempt)
    grad = quad.gradient(b0)
    if spec.family == "group_lasso" and spec.group_norm == "l2":
        lm = max((float(np.linalg.norm(grad[list(g)])) for g in spec.groups), default=0.0)
        scale = 1.0
    else:
        lm = float(np.max(np.abs(grad[~exempt]), initial=0.0))
        scale = max(spec.alpha, RIDGE_MIXING_FLOOR)
    lam = lm / scale
    # guard against rounding so the threshold test in the solver zeroes everything
    while lam * scale < lm:
        lam = np.nextafter(lam, np.inf)
    return float(lam)


def prior_to_penalty(kind: str, *, tau: float = None, rate: float = None) -> float:
    """Penalty weight equivalent to a coefficient prior.

    The negative log prior equals ``lam * ||b||_2^2`` for ``N(0, tau^2 I)``
    (``lam = 1 / (2 tau^2)``) and ``lam * ||b||_1`` for ``Laplace(0, 1/rate)``
    (``lam = rate``), up to an additive constant. These weights apply to the
    unnormalized negative log-likelihood ``0.5 ||C (y - X b)||^2``; use
    :func:`to_solver_lambda` to convert to the solver's convention.
    """
    if kind == "gaussian":
        if tau is None or not tau > 0:
            raise ConfigError("gaussian prior needs tau > 0")
        return 0.0 if math.isinf(tau) else 1.0 / (2.0 * tau * tau)
    if kind == "laplace":
        if rate is None or not rate > 0:
            raise ConfigError("laplace prior needs rate > 0")
        return float(rate)
    raise ConfigError(f"unknown prior {kind!r}")


def to_solver_lambda(lam: float, kind: str, n_obs: int, normalize: bool = True) -> float:
    """Convert a prior-derived weight into the solver's lambda."""
    s = n_obs if normalize else 1.0
    if kind == "gaussian":
        return 2.0 * lam / s
    if kind == "laplace":
        return lam / s
    raise ConfigError(f"unknown prior {kind!r}")
