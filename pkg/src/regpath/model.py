"""Data model for VAR and SUR systems.

Both models are reduced to a :class:`StackedSystem`: a response vector, a
block design matrix, and a map from stacked rows back to ``(time, equation)``
so that the error covariance can be applied one time-block at a time.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .errors import (
    AlignmentError,
    DimensionError,
    DomainError,
    InsufficientDataError,
)

LOG_2PI = float(np.log(2.0 * np.pi))


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TimeSeriesPanel:
    """Dated ``T x p`` panel. Row ``t`` is the observation at ``dates[t]``."""

    dates: np.ndarray
    columns: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise DimensionError(f"panel values must be a non-empty 2-D array, got shape {values.shape}")
        columns = tuple(str(c) for c in self.columns)
        if len(columns) != values.shape[1]:
            raise DimensionError(f"{len(columns)} column names for {values.shape[1]} columns")
        if len(set(columns)) != len(columns):
            raise DimensionError(f"duplicate column names in {columns}")
        dates = np.asarray(self.dates)
        if dates.shape != (values.shape[0],):
            raise DimensionError(f"{dates.shape[0]} dates for {values.shape[0]} rows")
        if len(dates) > 1 and not all(a < b for a, b in zip(dates[:-1], dates[1:])):
            raise AlignmentError("dates must be strictly increasing")
        bad = ~np.isfinite(values)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DimensionError(f"missing or non-finite value at row {r}, column {columns[c]!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "dates", dates)

    @classmethod
    def from_array(cls, values, columns=None, dates=None):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if columns is None:
            columns = [f"x{j}" for j in range(values.shape[1])]
        if dates is None:
            dates = np.arange(values.shape[0])
        return cls(dates=dates, columns=tuple(columns), values=values)

    @property
    def shape(self):
        return self.values.shape

    def __len__(self):
        return self.values.shape[0]

    def column_index(self, name) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < len(self.columns):
                raise DimensionError(f"column index {name} out of range")
            return int(name)
        try:
            return self.columns.index(name)
        except ValueError:
            raise DimensionError(f"unknown column {name!r}; have {list(self.columns)}") from None

    def rows(self, start, stop) -> "TimeSeriesPanel":
        return TimeSeriesPanel(self.dates[start:stop], self.columns, self.values[start:stop])

    def select(self, columns) -> "TimeSeriesPanel":
        idx = [self.column_index(c) for c in columns]
        return TimeSeriesPanel(self.dates, tuple(self.columns[i] for i in idx), self.values[:, idx])


@dataclass(frozen=True)
class VarSpec:
    lag_order: int = 1
    target_index: int = 0
    demean: bool = True
    standardize: bool = False

    def __post_init__(self):
        if self.lag_order < 1:
            raise DimensionError("lag_order must be >= 1")
        if self.target_index < 0:
            raise DimensionError("target_index must be nonnegative")


@dataclass(frozen=True)
class SurSpec:
    """System of regressions linked through correlated errors.

    ``equations`` holds ``(response, regressors)`` pairs, or
    ``(response, regressors, lag)`` to override the shared ``lag``.
    """

    equations: tuple
    lag: int = 1
    intercept: bool = True
    standardize: bool = False

    def __post_init__(self):
        eqs = tuple(
            (e[0], tuple(e[1]), int(e[2]) if len(e) > 2 else self.lag) for e in self.equations
        )
        if not eqs:
            raise DimensionError("SUR needs at least one equation")
        if any(e[2] < 0 for e in eqs):
            raise DimensionError("lags must be nonnegative")
        object.__setattr__(self, "equations", eqs)

    @property
    def n_equations(self):
        return len(self.equations)


@dataclass(frozen=True, eq=False)
class StackedSystem:
    """A generalized least-squares problem ``y = X b + e``, ``Cov(e_t) = Sigma``.

    ``time_blocks[t, j]`` is the row of ``response``/``design`` holding
    equation ``j`` at time ``t``. ``lagged`` is set for VAR systems, where
    ``design == kron(lagged, I_m)`` row block by row block; solvers use it to
    form Gram matrices without touching the full design.
    """

    response: np.ndarray
    design: np.ndarray
    weight_dim: int
    time_blocks: np.ndarray
    exempt: tuple = ()
    lagged: np.ndarray | None = None

    def __post_init__(self):
        y = _frozen(self.response)
        X = _frozen(self.design)
        tb = _frozen(self.time_blocks, dtype=np.intp)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DimensionError(f"design {X.shape} does not match response length {y.shape[0]}")
        if tb.ndim != 2 or tb.shape[1] != self.weight_dim or tb.size != y.shape[0]:
            raise DimensionError("time_blocks must be (n, m) and cover every stacked row")
        if not np.array_equal(np.sort(tb.ravel()), np.arange(y.shape[0])):
            raise DimensionError("time_blocks must map every stacked row exactly once")
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "time_blocks", tb)
        object.__setattr__(self, "exempt", tuple(int(i) for i in self.exempt))
        if self.lagged is not None:
            object.__setattr__(self, "lagged", _frozen(self.lagged))

    @classmethod
    def regression(cls, design, response, exempt=()):
        """Single-equation system ``y = X b + e``."""
        y = np.asarray(response, dtype=float)
        return cls(y, np.asarray(design, dtype=float), 1, np.arange(len(y)).reshape(-1, 1), exempt)

    @property
    def n_obs(self) -> int:
        return self.time_blocks.shape[0]

    @property
    def n_coef(self) -> int:
        return self.design.shape[1]

    def residual_matrix(self, coef) -> np.ndarray:
        """Residuals as an ``n x m`` matrix (row = time, column = equation)."""
        coef = np.asarray(coef, dtype=float)
        if coef.shape != (self.n_coef,):
            raise DimensionError(f"expected {self.n_coef} coefficients, got shape {coef.shape}")
        r = self.response - self.design @ coef
        return r[self.time_blocks]

    def response_matrix(self) -> np.ndarray:
        return self.response[self.time_blocks]


@dataclass(frozen=True, eq=False)
class ResidualScatter:
    matrix: np.ndarray
    sample_size: int


@dataclass(frozen=True, eq=False)
class ModelData:
    """A stacked system plus what is needed to map estimates back to the data.

    ``means`` and ``scales`` are the per-column location/scale removed before
    stacking (VAR: every column; SUR: regressor scales only, means unused).
    ``last_regressors`` is the conditioning row for the next out-of-sample
    forecast, on the stacked (transformed) scale.
    """

    kind: str
    system: StackedSystem
    columns: tuple
    means: np.ndarray
    scales: np.ndarray
    spec: VarSpec | SurSpec
    last_regressors: np.ndarray
    coef_sizes: tuple = field(default=())
    response_names: tuple = field(default=())
    regressor_names: tuple = field(default=())

    @property
    def n_obs(self):
        return self.system.n_obs

    def coef_matrix(self, coef):
        """Stacked vector to natural form: ``p x (p*lag)`` (VAR) or list of vectors (SUR)."""
        coef = np.asarray(coef, dtype=float)
        if self.kind == "var":
            p = len(self.columns)
            return coef.reshape(p, -1, order="F")
        return np.split(coef, np.cumsum(self.coef_sizes)[:-1])

    def to_original_scale(self, coef, sigma):
        """Undo standardization: coefficients and covariance on the data's scale."""
        coef = np.asarray(coef, dtype=float)
        if self.kind == "var":
            p = len(self.columns)
            s = self.scales
            beta = coef.reshape(p, -1, order="F")
            lag_scales = np.tile(s, beta.shape[1] // p)
            beta = beta * s[:, None] / lag_scales[None, :]
            return beta.reshape(-1, order="F"), sigma * np.outer(s, s)
        return coef / self.scales, sigma


def demean_panel(panel: TimeSeriesPanel):
    """Subtract column means. Returns ``(centered_panel, means)``."""
    if panel.values.size == 0:
        raise DimensionError("empty panel")
    # column-wise so each mean matches a plain 1-D mean of that column bit for bit
    means = np.array([np.mean(panel.values[:, j]) for j in range(panel.values.shape[1])])
    centered = panel.values - means
    return TimeSeriesPanel(panel.dates, panel.columns, centered), means


def build_var_design(panel: TimeSeriesPanel, spec: VarSpec) -> StackedSystem:
    """Stack ``Z_t = beta_1 Z_{t-1} + ... + beta_q Z_{t-q} + e_t`` as ``z = (L' kron I_p) vec(beta) + e``.

    The response is time-major (``Vec`` of the ``p x n`` matrix of targets) and
    coefficient ``k*p + i`` is ``beta[i, k]`` (column stacking).
    """
    Z = panel.values
    T, p = Z.shape
    q = spec.lag_order
    if T <= q:
        raise InsufficientDataError(f"need more than {q} rows for a VAR({q}), got {T}")
    if spec.target_index >= p:
        raise DimensionError(f"target_index {spec.target_index} out of range for {p} columns")
    n = T - q
    lagged = np.hstack([Z[q - k - 1:T - k - 1] for k in range(q)])
    design = np.kron(lagged, np.eye(p))
    response = Z[q:].reshape(-1)
    time_blocks = np.arange(n * p).reshape(n, p)
    return StackedSystem(response, design, p, time_blocks, lagged=lagged)


def build_sur_design(panel: TimeSeriesPanel, spec: SurSpec) -> StackedSystem:
    """Block-diagonal ``diag(X_1, ..., X_m)`` with equation-major stacking.

    Rows ``j*n .. (j+1)*n - 1`` belong to equation ``j``; coefficients are
    ``(beta_1', ..., beta_m')'`` with the intercept (if any) first in each block.
    """
    return _sur_parts(panel, spec)[0]


def _sur_parts(panel, spec, col_scales=None):
    T = len(panel)
    if col_scales is None:
        col_scales = np.ones(panel.shape[1])
    lengths = [T - lag for (_, _, lag) in spec.equations]
    if len(set(lengths)) != 1:
        raise AlignmentError(f"equations have different sample lengths after lagging: {lengths}")
    n = lengths[0]
    if n < 1:
        raise InsufficientDataError("no observations left after lagging")
    blocks, ys, exempt, sizes, last = [], [], [], [], []
    offset = 0
    for resp, regs, lag in spec.equations:
        yi = panel.values[lag:, panel.column_index(resp)]
        idx = [panel.column_index(c) for c in regs]
        Xi = panel.values[:, idx] / col_scales[idx]
        last_i = Xi[-1]
        Xi = Xi[:T - lag]
        if spec.intercept:
            Xi = np.hstack([np.ones((n, 1)), Xi])
            last_i = np.concatenate([[1.0], last_i])
            exempt.append(offset)
        blocks.append(Xi)
        ys.append(yi)
        sizes.append(Xi.shape[1])
        last.append(last_i)
        offset += Xi.shape[1]
    m = len(blocks)
    design = np.zeros((n * m, offset))
    col = 0
    for j, Xi in enumerate(blocks):
        design[j * n:(j + 1) * n, col:col + Xi.shape[1]] = Xi
        col += Xi.shape[1]
    time_blocks = np.arange(n * m).reshape(m, n).T
    system = StackedSystem(np.concatenate(ys), design, m, time_blocks, exempt=tuple(exempt))
    return system, tuple(sizes), np.concatenate(last)


def prepare_var(panel: TimeSeriesPanel, spec: VarSpec) -> ModelData:
    """Demean (and optionally standardize) a panel and stack it as a VAR."""
    if len(panel) < 2:
        raise InsufficientDataError("VAR needs at least two rows")
    p = panel.shape[1]
    if spec.demean:
        centered, means = demean_panel(panel)
    else:
        centered, means = panel, np.zeros(p)
    scales = np.ones(p)
    if spec.standardize:
        scales = centered.values.std(axis=0)
        if np.any(scales == 0):
            raise DimensionError("cannot standardize a constant column")
        centered = TimeSeriesPanel(centered.dates, centered.columns, centered.values / scales)
    system = build_var_design(centered, spec)
    q = spec.lag_order
    last = centered.values[::-1][:q].reshape(-1)
    return ModelData(
        kind="var",
        system=system,
        columns=panel.columns,
        means=_frozen(means),
        scales=_frozen(scales),
        spec=spec,
        last_regressors=_frozen(last),
        response_names=panel.columns,
    )


def prepare_sur(panel: TimeSeriesPanel, spec: SurSpec) -> ModelData:
    """Stack a SUR system; with ``standardize`` every non-intercept regressor is scaled to unit sd."""
    scales_by_col = np.ones(panel.shape[1])
    if spec.standardize:
        sd = panel.values.std(axis=0)
        regs = {panel.column_index(c) for _, rs, _ in spec.equations for c in rs}
        for j in regs:
            if sd[j] == 0:
                raise DimensionError(f"cannot standardize constant column {panel.columns[j]!r}")
            scales_by_col[j] = sd[j]
    system, sizes, last = _sur_parts(panel, spec, scales_by_col)
    coef_scales = []
    names = []
    for resp, regs, _ in spec.equations:
        if spec.intercept:
            coef_scales.append(1.0)
            names.append(f"{resp}:intercept")
        for c in regs:
            coef_scales.append(scales_by_col[panel.column_index(c)])
            names.append(f"{resp}:{c}")
    return ModelData(
        kind="sur",
        system=system,
        columns=panel.columns,
        means=_frozen(np.zeros(spec.n_equations)),
        scales=_frozen(coef_scales),
        spec=spec,
        last_regressors=_frozen(last),
        coef_sizes=sizes,
        response_names=tuple(e[0] for e in spec.equations),
        regressor_names=tuple(names),
    )


def residual_scatter(system: StackedSystem, coef) -> ResidualScatter:
    """``S_B = (1/n) sum_t e_t e_t'`` for the residuals at ``coef``."""
    E = system.residual_matrix(coef)
    S = E.T @ E / E.shape[0]
    return ResidualScatter((S + S.T) / 2.0, E.shape[0])


def _chol(sigma, what="Sigma"):
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DimensionError(f"{what} must be square, got shape {sigma.shape}")
    if not np.allclose(sigma, sigma.T, rtol=1e-10, atol=1e-14 * np.abs(sigma).max()):
        raise DomainError(f"{what} is not symmetric")
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise DomainError(f"{what} is not positive definite") from None


def gaussian_nll(sigma, scatter, n) -> float:
    """``(n m/2) log 2pi + (n/2) log det Sigma + (n/2) tr(Sigma^{-1} S)``."""
    L = _chol(sigma)
    m = L.shape[0]
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    Linv_S = np.linalg.solve(L, scatter)
    trace = np.trace(np.linalg.solve(L, Linv_S.T))
    return 0.5 * n * (m * LOG_2PI + logdet + trace)


def neg_log_likelihood(coef, sigma, system: StackedSystem) -> float:
    """Exact Gaussian negative log-likelihood of the stacked system."""
    S = residual_scatter(system, coef)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (system.weight_dim, system.weight_dim):
        raise DimensionError(f"Sigma must be {system.weight_dim}x{system.weight_dim}")
    return gaussian_nll(sigma, S.matrix, S.sample_size)
