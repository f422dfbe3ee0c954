"""Command-line driver: ``regpath {fit,path,cv,irf,backtest,pca} [options]``.

Every run writes plot-ready CSV tables and a ``summary.json`` (with the fully
resolved configuration) to ``--out``. Exit codes: 0 success, 1 usage or
configuration, 2 data, 3 numerical failure; failures print an error JSON.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis
from .backtest import BacktestConfig, run_market_timing
from .coef import PenaltySpec
from .cov import CovPenalty
from .data import DatasetManifest, load_panel, principal_components, synthetic_equity_panel
from .errors import ConfigError, DataError, NumericalError, RegPathError
from .model import SurSpec, TimeSeriesPanel, VarSpec, prepare_sur, prepare_var
from .path import PenaltyGrid, default_grid, fit_map, trace_path
from .selection import CvConfig, rolling_cv

COMMANDS = ("fit", "path", "cv", "irf", "backtest", "pca")


@dataclass
class RunConfig:
    """Resolved run configuration; every field is echoed in the summary."""

    model: str = "var1"
    data: Optional[dict] = None
    synthetic: dict = field(default_factory=lambda: {"T": 252, "n_predictors": 1})
    columns: Optional[list] = None
    target: Optional[str] = None
    risk_free: Optional[str] = None
    sur_equations: Optional[list] = None
    standardize: bool = False
    penalty: dict = field(default_factory=lambda: {"family": "lasso"})
    cov_penalty: dict = field(default_factory=lambda: {"mask": None})
    lam: float = 0.0
    gamma: float = 0.0
    lambda_grid: Optional[list] = None
    gamma_grid: Optional[list] = None
    n_lambda: int = 50
    n_gamma: int = 20
    lambda_ratio: float = 1e-4
    axis: str = "grid"
    window: int = 80
    horizon: int = 1
    cv_mode: str = "joint"
    cv_n_gamma: int = 0
    irf_horizon: int = 1
    irf_ordering: Optional[list] = None
    backtest: dict = field(default_factory=dict)
    pca_k: int = 1
    pca_standardize: bool = True
    seed: int = 0
    out: str = "regpath-out"

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        if cfg.model not in ("var1", "sur"):
            raise ConfigError("model must be 'var1' or 'sur'")
        if cfg.axis not in ("grid", "lambda", "gamma"):
            raise ConfigError("axis must be grid, lambda or gamma")
        return cfg


# ---------------------------------------------------------------------------
# serialization


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        # JSON has no inf/nan; keep them as strings that float() parses back
        return x if math.isfinite(x) else repr(x)
    if x is None or isinstance(x, str):
        return x
    return str(x)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj):
    atomic_write(path, json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n")


def write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    atomic_write(path, buf.getvalue())


# ---------------------------------------------------------------------------
# inputs


def _load(cfg: RunConfig, base_dir):
    """``(panel, risk_free or None)`` from the manifest, or a seeded synthetic panel."""
    if cfg.data is not None:
        manifest = DatasetManifest.from_dict(cfg.data, base_dir)
        panel = load_panel(manifest)
        rf = None
        if cfg.risk_free is not None:
            rf_manifest = DatasetManifest(
                manifest.path, manifest.date_column, manifest.date_format, manifest.frequency,
                predictors=(cfg.risk_free,),
            )
            rf_panel = load_panel(rf_manifest)
            rf_map = dict(zip(rf_panel.dates, rf_panel.values[:, 0]))
            rf = np.array([rf_map[d] for d in panel.dates])
    else:
        syn = dict(cfg.synthetic)
        syn.setdefault("seed", cfg.seed)
        panel, rf = synthetic_equity_panel(**syn)
    if cfg.columns:
        panel = panel.select(cfg.columns)
    if cfg.target is not None and cfg.model == "var1":
        t = panel.column_index(cfg.target)
        order = [t] + [j for j in range(panel.shape[1]) if j != t]
        panel = panel.select([panel.columns[j] for j in order])
    return panel, rf


def _model_data(cfg: RunConfig, panel):
    if cfg.model == "var1":
        return prepare_var(panel, VarSpec(target_index=0, standardize=cfg.standardize))
    if not cfg.sur_equations:
        raise ConfigError("model 'sur' needs sur_equations")
    return prepare_sur(panel, SurSpec(tuple(tuple(e) for e in cfg.sur_equations), standardize=cfg.standardize))


def _penalties(cfg: RunConfig):
    pen = dict(cfg.penalty)
    family = pen.pop("family", "lasso")
    if "groups" in pen and pen["groups"] is not None:
        pen["groups"] = tuple(tuple(g) for g in pen["groups"])
    try:
        penalty = PenaltySpec(family, cfg.lam, **pen)
    except TypeError as exc:
        raise ConfigError(f"bad penalty options: {exc}") from None
    cp = dict(cfg.cov_penalty)
    if cp.get("mask") is not None:
        cp["mask"] = np.asarray(cp["mask"], dtype=float)
    for key in ("prior_scale",):
        if cp.get(key) is not None:
            cp[key] = np.asarray(cp[key], dtype=float)
    try:
        cov_penalty = CovPenalty(cfg.gamma, **cp)
    except TypeError as exc:
        raise ConfigError(f"bad cov_penalty options: {exc}") from None
    return penalty, cov_penalty


def _grid(cfg: RunConfig, data, penalty, cov_penalty) -> PenaltyGrid:
    lam = cfg.lambda_grid
    gam = cfg.gamma_grid
    if lam is None or gam is None:
        d = default_grid(data, penalty, cov_penalty, n_lambda=cfg.n_lambda, n_gamma=cfg.n_gamma,
                         ratio=cfg.lambda_ratio, include_gamma=cfg.n_gamma > 0)
        if cfg.axis == "lambda" and gam is None:
            gam = [cfg.gamma]
        if cfg.axis == "gamma" and lam is None:
            lam = [cfg.lam]
        lam = list(d.lambda_values) if lam is None else lam
        gam = list(d.gamma_values) if gam is None else gam
    return PenaltyGrid(tuple(sorted(map(float, lam), reverse=True)), tuple(sorted(map(float, gam))))


def _estimate_summary(est):
    out = dict(
        lam=est.lam, gamma=est.gamma, objective=est.objective, nll=est.nll,
        outer_iterations=est.outer_iterations, converged=est.converged,
        objective_trace=est.objective_trace, means=est.means, sigma=est.sigma,
        correlation=est.correlation, active_set=list(est.active_set),
    )
    if est.kind == "var":
        out["coefficients"] = np.asarray(est.coefficients)
    else:
        out["coefficients"] = [np.asarray(c) for c in est.coefficients]
        out["regressor_names"] = list(est.data.regressor_names)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_fit(cfg, panel, rf, out):
    data = _model_data(cfg, panel)
    penalty, cov_penalty = _penalties(cfg)
    est = fit_map(data, penalty, cov_penalty)
    summary = dict(columns=list(panel.columns), estimate=_estimate_summary(est))
    if est.kind == "var":
        last = analysis.last_observation(est)
        summary["forecast"] = analysis.forecast_h_step(est, last, cfg.horizon)
    else:
        summary["forecast"] = analysis.forecast_sur(est)
    return summary, []


def cmd_path(cfg, panel, rf, out):
    data = _model_data(cfg, panel)
    penalty, cov_penalty = _penalties(cfg)
    grid = _grid(cfg, data, penalty, cov_penalty)
    path = trace_path(data, grid, penalty, cov_penalty, target_index=0, horizon=cfg.horizon)
    cols = list(panel.columns)
    tgt = data.response_names[0]
    if data.kind == "var":
        others = cols[1:]
        header = ["lambda", "gamma", "label", "converged", "outer_iterations", "objective", "nll",
                  "active_size", "sigma_zeros", f"forecast_{tgt}"]
        header += [f"coef_{tgt}_{c}" for c in cols]
        header += [f"corr_{tgt}_{c}" for c in others]
        header += [f"irf_{tgt}_{c}" for c in cols]
        header += ["error"]
        width = 1 + len(cols) + len(others) + len(cols)
    else:
        names = list(data.response_names)
        pairs = [(names[i], names[j]) for i in range(len(names)) for j in range(i + 1, len(names))]
        header = ["lambda", "gamma", "label", "converged", "outer_iterations", "objective", "nll",
                  "active_size", "sigma_zeros"]
        header += [f"forecast_{n}" for n in names]
        header += [f"coef_{n}" for n in data.regressor_names]
        header += [f"corr_{a}_{b}" for a, b in pairs]
        header += ["error"]
        width = len(names) + len(data.regressor_names) + len(pairs)
    rows = []
    for p in path.points:
        base = [p.lam, p.gamma, p.label, p.converged, p.outer_iterations, p.objective, p.nll,
                p.active_size, p.sigma_zeros]
        if p.error is None:
            vals = list(p.forecast[:1] if data.kind == "var" else p.forecast)
            vals += list(p.target_coefficients) + list(p.shock_correlations)
            if p.irf is not None:
                vals += list(p.irf)
        else:
            vals = [float("nan")] * width
        rows.append(base + vals + [p.error or ""])
    write_csv(out / "path.csv", header, rows)
    summary = dict(
        columns=cols, axis=path.axis, n_points=len(path), grid=asdict(grid),
        failures=sum(p.error is not None for p in path.points),
        not_converged=sum((not p.converged) and p.error is None for p in path.points),
    )
    return summary, ["path.csv"]


def cmd_cv(cfg, panel, rf, out):
    penalty, cov_penalty = _penalties(cfg)
    spec = _spec(cfg)
    grid = None
    if cfg.lambda_grid is not None:
        gam = cfg.gamma_grid if cfg.gamma_grid is not None else [cfg.gamma]
        grid = PenaltyGrid(tuple(sorted(map(float, cfg.lambda_grid), reverse=True)), tuple(sorted(map(float, gam))))
    cv_cfg = CvConfig(window=cfg.window, horizon=cfg.horizon, target_index=0, grid=grid, n_lambda=cfg.n_lambda,
                      n_gamma=cfg.cv_n_gamma, lambda_ratio=cfg.lambda_ratio, mode=cfg.cv_mode)
    res = rolling_cv(panel, spec, cv_cfg, penalty, cov_penalty)
    write_csv(out / "cv.csv", ["lambda", "gamma", "mse"], res.rows())
    summary = dict(
        columns=list(panel.columns), fold_count=res.fold_count, best_lambda=res.best[0],
        best_gamma=res.best[1], best_mse=float(np.nanmin(res.table)), failures=res.failures,
        cv=asdict(cv_cfg) | {"grid": asdict(res.grid)},
    )
    return summary, ["cv.csv"]


def _spec(cfg):
    if cfg.model == "var1":
        return VarSpec(target_index=0, standardize=cfg.standardize)
    return SurSpec(tuple(tuple(e) for e in cfg.sur_equations or ()), standardize=cfg.standardize)


def cmd_irf(cfg, panel, rf, out):
    if cfg.model != "var1":
        raise ConfigError("irf needs model 'var1'")
    data = _model_data(cfg, panel)
    penalty, cov_penalty = _penalties(cfg)
    est = fit_map(data, penalty, cov_penalty)
    cols = list(panel.columns)
    rows = []
    order = None
    for h in range(cfg.irf_horizon + 1):
        irf = analysis.orthogonal_irf(est, h, cfg.irf_ordering)
        order = irf.ordering
        for i, resp in enumerate(cols):
            for j, shock in enumerate(order):
                rows.append([h, resp, cols[shock], irf.matrix[i, j]])
    write_csv(out / "irf.csv", ["horizon", "response", "shock", "value"], rows)
    summary = dict(columns=cols, ordering=[cols[i] for i in order], estimate=_estimate_summary(est),
                   shock_correlations=analysis.shock_correlation_with_target(est, 0))
    return summary, ["irf.csv"]


def cmd_backtest(cfg, panel, rf, out):
    if cfg.model != "var1":
        raise ConfigError("backtest needs model 'var1'")
    if rf is None:
        raise ConfigError("backtest needs a risk_free column (or synthetic data)")
    penalty, cov_penalty = _penalties(cfg)
    bt = dict(cfg.backtest)
    bt.setdefault("window", cfg.window)
    if "strategies" in bt:
        bt["strategies"] = tuple(bt["strategies"])
    if "weight_bounds" in bt:
        bt["weight_bounds"] = tuple(bt["weight_bounds"])
    try:
        bcfg = BacktestConfig(target_index=0, **bt)
    except TypeError as exc:
        raise ConfigError(f"bad backtest options: {exc}") from None
    res = run_market_timing(panel, rf, bcfg, penalty=penalty, cov_penalty=cov_penalty)
    strategies = list(res.forecasts)
    header = ["decision_date", "return_date"]
    header += [f"forecast_{s}" for s in strategies]
    header += [f"weight_{s}" for s in list(res.weights)]
    header += [f"return_{s}" for s in list(res.returns)]
    header += [f"wealth_{s}" for s in list(res.cumulative)]
    rows = []
    for k in range(len(res.decision_dates)):
        r = [res.decision_dates[k], res.return_dates[k]]
        r += [res.forecasts[s][k] for s in strategies]
        r += [res.weights[s][k] for s in res.weights]
        r += [res.returns[s][k] for s in res.returns]
        r += [res.cumulative[s][k] for s in res.cumulative]
        rows.append(r)
    write_csv(out / "backtest.csv", header, rows)

    def stats(d):
        return {s: (v.as_dict() if v is not None else None) for s, v in d.items()}

    summary = dict(
        columns=list(panel.columns), backtest=asdict(res.config), selections=res.selections,
        prediction_stats=stats(res.prediction_stats), return_stats=stats(res.return_stats),
        terminal_wealth={s: float(c[-1]) for s, c in res.cumulative.items()}, trades=res.trades,
    )
    return summary, ["backtest.csv"]


def cmd_pca(cfg, panel, rf, out):
    pc = principal_components(panel, cfg.pca_k, cfg.pca_standardize)
    header = ["date"] + list(pc.panel.columns)
    write_csv(out / "factors.csv", header, [[d] + list(r) for d, r in zip(pc.panel.dates, pc.panel.values)])
    summary = dict(columns=list(panel.columns), loadings=pc.loadings,
                   explained_variance_ratio=pc.explained_variance_ratio)
    return summary, ["factors.csv"]


HANDLERS = dict(fit=cmd_fit, path=cmd_path, cv=cmd_cv, irf=cmd_irf, backtest=cmd_backtest, pca=cmd_pca)


# ---------------------------------------------------------------------------
# argument handling


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser():
    parser = _Parser(prog="regpath", description="Regularization paths for VAR/SUR models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--lambda-grid", type=_floats, help="comma-separated lambda values")
        p.add_argument("--gamma-grid", type=_floats, help="comma-separated gamma values")
        p.add_argument("--lambda", dest="lam", type=float, help="coefficient penalty for single fits")
        p.add_argument("--gamma", type=float, help="covariance penalty for single fits")
        p.add_argument("--window", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--target")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if name == "path":
            p.add_argument("--axis", choices=("grid", "lambda", "gamma"))
        if name == "irf":
            p.add_argument("--irf-horizon", type=int)
        if name == "pca":
            p.add_argument("--k", dest="pca_k", type=int)
    return parser


def resolve_config(args) -> tuple:
    raw = {}
    base_dir = None
    if args.config:
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"no such config file: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        base_dir = path.parent
    overrides = dict(
        lambda_grid=args.lambda_grid, gamma_grid=args.gamma_grid, lam=args.lam, gamma=args.gamma,
        window=args.window, horizon=args.horizon, target=args.target, seed=args.seed, out=args.out,
        axis=getattr(args, "axis", None), irf_horizon=getattr(args, "irf_horizon", None),
        pca_k=getattr(args, "pca_k", None),
    )
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(raw), base_dir


def _exit_code(exc):
    if isinstance(exc, RegPathError):
        return exc.exit_code
    if isinstance(exc, (OSError, UnicodeError)):
        return DataError.exit_code
    if isinstance(exc, (ArithmeticError, np.linalg.LinAlgError)):
        return NumericalError.exit_code
    return 1


def main(argv=None) -> int:
    out_dir = None
    try:
        args = build_parser().parse_args(argv)
        cfg, base_dir = resolve_config(args)
        out_dir = Path(cfg.out)
        panel, rf = _load(cfg, base_dir)
        summary, files = HANDLERS[args.command](cfg, panel, rf, out_dir)
        penalty, cov_penalty = _penalties(cfg)
        resolved = dict(penalty=asdict(penalty), cov_penalty=asdict(cov_penalty))
        summary = dict(status="ok", command=args.command, config=asdict(cfg), resolved=resolved, **summary)
        write_json(out_dir / "summary.json", summary)
        print(json.dumps({"status": "ok", "outputs": [str(out_dir / f) for f in files + ["summary.json"]]}))
        return 0
    except Exception as exc:  # every failure becomes an exit code plus an error record
        code = _exit_code(exc)
        err = {"status": "error", "exit_code": code, "type": type(exc).__name__, "message": str(exc)}
        if out_dir is not None:
            try:
                write_json(out_dir / "error.json", err)
            except OSError:
                pass
        print(json.dumps(err))
        return code


if __name__ == "__main__":
    sys.exit(main())
