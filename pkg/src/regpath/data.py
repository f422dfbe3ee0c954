"""CSV panel loading, column transforms, principal-component factors and synthetic panels."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, DimensionError
from .model import TimeSeriesPanel

FREQUENCIES = {"monthly": "M", "quarterly": "Q"}
_QUARTER = re.compile(r"^\s*(\d{4})\s*-?\s*Q([1-4])\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class DatasetManifest:
    """Where a panel lives and how to turn it into model columns.

    ``transform`` maps a column to ``"none"``, ``"log"``, ``"diff"`` or
    ``"excess-over:<column>"``; transforms run in the mapping's order.
    ``date_format`` is ``"iso"``, ``"%Y-%m"``, ``"%YQ%q"`` or any
    ``strftime`` pattern; ``None`` tries ISO, then ``%YQ%q``.
    """

    path: str
    date_column: str = "date"
    date_format: Optional[str] = None
    frequency: Optional[str] = None
    target: Optional[str] = None
    predictors: tuple = ()
    transform: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frequency is not None and self.frequency not in FREQUENCIES:
            raise ConfigError(f"frequency must be one of {sorted(FREQUENCIES)}, got {self.frequency!r}")
        object.__setattr__(self, "predictors", tuple(self.predictors))
        object.__setattr__(self, "transform", dict(self.transform))

    @property
    def columns(self):
        cols = ([self.target] if self.target else []) + [c for c in self.predictors if c != self.target]
        return tuple(cols)

    @classmethod
    def from_dict(cls, d, base_dir=None):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown manifest keys: {sorted(unknown)}")
        if "path" not in d:
            raise ConfigError("manifest needs a 'path'")
        if base_dir is not None and not Path(d["path"]).is_absolute():
            d["path"] = str(Path(base_dir) / d["path"])
        return cls(**d)


def _parse_one(text, fmt, freq):
    s = str(text).strip()
    if fmt in (None, "%YQ%q"):
        m = _QUARTER.match(s)
        if m:
            return pd.Period(year=int(m.group(1)), quarter=int(m.group(2)), freq="Q")
        if fmt == "%YQ%q":
            raise ValueError(f"expected YYYYQn, got {s!r}")
    if fmt in (None, "iso"):
        ts = pd.Timestamp(s)
    else:
        ts = pd.to_datetime(s, format=fmt)
    if freq is None:
        freq = "M" if fmt == "%Y-%m" else "D"
    return ts.to_period(freq)


def parse_dates(raw, fmt=None, frequency=None, first_line=2):
    """Parse date strings to ``pd.Period``; errors name the CSV line."""
    freq = FREQUENCIES.get(frequency) if frequency else None
    out = []
    for i, text in enumerate(raw):
        try:
            p = _parse_one(text, fmt, freq)
        except (ValueError, TypeError) as exc:
            raise DataError(f"line {first_line + i}: cannot parse date {text!r}: {exc}") from None
        if freq is not None and p.freqstr[0] != freq:
            p = p.asfreq(freq)
        out.append(p)
    return out


def _check_order(dates, first_line=2):
    seen = {}
    for i, d in enumerate(dates):
        if d in seen:
            raise DataError(f"duplicate date {d} on lines {first_line + seen[d]} and {first_line + i}")
        seen[d] = i
    for i in range(1, len(dates)):
        if not dates[i - 1] < dates[i]:
            raise DataError(
                f"dates are not increasing: {dates[i - 1]} (line {first_line + i - 1}) "
                f"then {dates[i]} (line {first_line + i})"
            )


def apply_transform(frame: pd.DataFrame, column: str, rule: str) -> pd.DataFrame:
    """Apply one transform in place of ``column``; ``diff`` leaves a NaN in the first row."""
    rule = rule.strip()
    if column not in frame:
        raise DataError(f"transform refers to unknown column {column!r}")
    x = frame[column]
    if rule == "none":
        return frame
    if rule == "log":
        if (x <= 0).any():
            line = int(np.flatnonzero((x <= 0).to_numpy())[0]) + 2
            raise DataError(f"line {line}: log of a nonpositive value in column {column!r}")
        frame[column] = np.log(x)
    elif rule == "diff":
        frame[column] = x.diff()
    elif rule.startswith("excess-over:"):
        other = rule.split(":", 1)[1].strip()
        if other not in frame:
            raise DataError(f"excess-over refers to unknown column {other!r}")
        frame[column] = x - frame[other]
    else:
        raise ConfigError(f"unknown transform {rule!r} for column {column!r}")
    return frame


def load_panel(manifest: DatasetManifest) -> TimeSeriesPanel:
    """Read, validate and transform a CSV panel.

    Missing values in used columns are rejected with their line numbers.
    Leading rows emptied by ``diff`` transforms are dropped.
    """
    path = Path(manifest.path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if manifest.date_column not in frame:
        raise DataError(f"date column {manifest.date_column!r} not in header {list(frame.columns)}")
    wanted = manifest.columns or tuple(c for c in frame.columns if c != manifest.date_column)
    needed = set(wanted)
    for col, rule in manifest.transform.items():
        needed.add(col)
        if rule.strip().startswith("excess-over:"):
            needed.add(rule.split(":", 1)[1].strip())
    missing_cols = sorted(needed - set(frame.columns))
    if missing_cols:
        raise DataError(f"columns not found in {path.name}: {missing_cols}")

    dates = parse_dates(frame[manifest.date_column], manifest.date_format, manifest.frequency)
    _check_order(dates)
    numeric = pd.DataFrame(index=frame.index)
    for col in sorted(needed, key=list(frame.columns).index):
        raw = frame[col].str.strip()
        blank = raw.isin(["", "NA", "NaN", "nan", "null", "."])
        if blank.any():
            lines = (np.flatnonzero(blank.to_numpy()) + 2).tolist()
            raise DataError(f"missing values in column {col!r} on lines {lines[:10]}")
        vals = pd.to_numeric(raw, errors="coerce")
        bad = vals.isna() | ~np.isfinite(vals.to_numpy(dtype=float, na_value=np.nan))
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataError(f"line {i + 2}, column {col!r}: not a finite number: {frame[col].iloc[i]!r}")
        numeric[col] = vals.astype(float)
    for col, rule in manifest.transform.items():
        numeric = apply_transform(numeric, col, rule)
    sub = numeric[list(wanted)]
    lead = 0
    while lead < len(sub) and sub.iloc[lead].isna().any():
        lead += 1
    sub = sub.iloc[lead:]
    if sub.isna().to_numpy().any():
        i = int(np.flatnonzero(sub.isna().any(axis=1).to_numpy())[0]) + lead
        raise DataError(f"line {i + 2}: missing value after transforms")
    if len(sub) == 0:
        raise DataError("no rows left after transforms")
    return TimeSeriesPanel(np.array(dates[lead:], dtype=object), tuple(wanted), sub.to_numpy())


# ---------------------------------------------------------------------------
# principal components


@dataclass(frozen=True, eq=False)
class PrincipalComponents:
    panel: TimeSeriesPanel
    loadings: np.ndarray
    explained_variance_ratio: np.ndarray
    center: np.ndarray
    scale: np.ndarray


def principal_components(panel: TimeSeriesPanel, k: int, standardize: bool = True,
                         prefix: str = "f") -> PrincipalComponents:
    """Factor scores from the SVD of the centered (optionally unit-variance) panel.

    Factors are ordered by explained variance and each is signed so that its
    largest-magnitude loading is positive.
    """
    X = np.asarray(panel.values, dtype=float)
    T, p = X.shape
    if not 1 <= k <= p:
        raise DimensionError(f"k must be in 1..{p}, got {k}")
    center = X.mean(axis=0)
    scale = X.std(axis=0) if standardize else np.ones(p)
    if np.any(scale == 0):
        raise DimensionError("cannot standardize a constant column")
    Xs = (X - center) / scale
    _, s, Vt = np.linalg.svd(Xs, full_matrices=False)
    V = Vt[:k].T
    flip = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(k)])
    V = V * flip
    scores = Xs @ V
    total = float(np.sum(s ** 2))
    ratio = s[:k] ** 2 / total if total > 0 else np.zeros(k)
    cols = tuple(f"{prefix}{j + 1}" for j in range(k))
    return PrincipalComponents(TimeSeriesPanel(panel.dates, cols, scores), V, ratio, center, scale)


def compute_principal_components(panel: TimeSeriesPanel, k: int, standardize: bool = True) -> TimeSeriesPanel:
    return principal_components(panel, k, standardize).panel


# ---------------------------------------------------------------------------
# synthetic panels


def simulate_var(B, sigma, T, seed=None, mean=None, burn=100) -> np.ndarray:
    """``T`` draws from ``Z_t - mu = B (Z_{t-1} - mu) + e_t``, ``e_t ~ N(0, sigma)``."""
    B = np.asarray(B, dtype=float)
    p = B.shape[0]
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(np.asarray(sigma, dtype=float))
    Z = np.zeros((T + burn, p))
    eps = rng.standard_normal((T + burn, p)) @ L.T
    for t in range(1, T + burn):
        Z[t] = B @ Z[t - 1] + eps[t]
    mu = np.zeros(p) if mean is None else np.asarray(mean, dtype=float)
    return Z[burn:] + mu


def synthetic_equity_panel(T=252, n_predictors=1, seed=0, premium=0.015, slope=0.5, persistence=0.9,
                           noise=0.06, rf=0.01, start="1952Q1"):
    """Quarterly excess returns driven by persistent predictors.

    Returns ``(panel, risk_free)``; the panel's first column is ``excess``.
    """
    rng = np.random.default_rng(seed)
    k = n_predictors
    x = np.zeros((T + 1, k))
    for t in range(1, T + 1):
        x[t] = persistence * x[t - 1] + rng.standard_normal(k) * 0.05
    e = rng.standard_normal(T + 1) * noise
    excess = premium + slope * x[:-1].sum(axis=1) + e[1:]
    values = np.column_stack([excess, x[1:]])
    dates = pd.period_range(start=start, periods=T, freq="Q")
    cols = ("excess",) + tuple(f"x{j + 1}" for j in range(k))
    risk_free = np.full(T, rf)
    return TimeSeriesPanel(np.array(list(dates), dtype=object), cols, values), risk_free
