"""Command line front end: ``mapsieve {simulate,fit,scr,test,tune,study}``.

Every option may also be given in a JSON file passed with ``--config``; keys
are the long option names with dashes replaced by underscores.  Command line
values win over the file, which wins over built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import __version__
from .basis import Mapping, compute_basis_norms
from .errors import ConfigurationError, IngestionError, MapsieveError
from .estimator import (RegressionData, SieveConfig, eval_corrected, eval_pilot, fit_sieve)
from .inference import (BootstrapConfig, build_scr, scr_axes, test_exact_form, test_homogeneity,
                        test_separability)
from .io import config_digest, read_table, require_columns, write_csv, write_json
from .process import InnovationModel, Scenario, eval_true_m, simulate_scenario
from .study import StudyConfig, run_study, study_table
from .tuning import default_cd_candidates, default_holdout, default_m_ladder, select_cd, select_m

DEFAULTS = {
    "seed": 0, "out_dir": ".", "workers": 1,
    # simulation
    "setup": "1", "delta": 0.0, "innovation": "tv-ar2", "n": 500, "burn_in": 200, "lags": 0,
    # data
    "data": None, "ar_lags": 0, "response": "Y", "series": "X",
    # sieve
    "c0": None, "c": 4, "d": 4, "time_basis": "fourier", "state_basis": "fourier",
    "mapping": "algebraic", "domain": "whole-line", "scale": 1.0,
    "jacobian_weight": True, "correct": None, "mean_shift_size": None,
    # grids and bootstrap
    "grid_t": 50, "grid_x": 50, "x_window": [-10.0, 10.0], "component": 1,
    "alpha": 0.05, "B": 1000, "M": 1000, "m": None, "tune_m": False, "c1": 100, "c2": 100, "h0": 3,
    # tests
    "kind": "exact", "m0_spec": "fit",
    # tuning
    "c_range": None, "d_range": None, "holdout": None, "m_ladder": None,
    # study
    "replicates": 100, "mode": "coverage", "tune_cd": True, "centering": "auto",
    "centering_samples": 1_000_000,
}

BOOL_KEYS = {"jacobian_weight", "correct", "tune_m", "tune_cd"}


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _shared(p):
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int)


def _scenario_opts(p):
    p.add_argument("--setup", help="1, 2, 3 (one lag) or I, II, III (two lags)")
    p.add_argument("--delta", type=float)
    p.add_argument("--innovation", help="tv-ar2, setar or bilinear (or a, b, c)")
    p.add_argument("--n", type=int)
    p.add_argument("--burn-in", type=int)


def _data_opts(p):
    p.add_argument("--data", help="input CSV")
    p.add_argument("--ar-lags", type=int, help="treat column --series as one series with this many lags")
    p.add_argument("--response", help="response column for regression data (default Y)")
    p.add_argument("--series", help="series column in AR mode (default X)")


def _flag(p, name, help_on, help_off):
    dest = name.replace("-", "_")
    g = p.add_mutually_exclusive_group()
    g.add_argument(f"--{name}", dest=dest, action="store_const", const=True, help=help_on)
    g.add_argument(f"--no-{name}", dest=dest, action="store_const", const=False, help=help_off)


def _sieve_opts(p):
    p.add_argument("--c0", type=int, help="intercept basis size (default c; 0 in one-lag studies)")
    p.add_argument("--c", type=int, help="time basis size per covariate")
    p.add_argument("--d", type=int, help="mapped basis size per covariate")
    p.add_argument("--time-basis")
    p.add_argument("--state-basis")
    p.add_argument("--mapping", choices=["algebraic", "logarithmic"])
    p.add_argument("--domain", choices=["whole-line", "half-line"])
    p.add_argument("--scale", type=float)
    p.add_argument("--mean-shift-size", type=int)
    _flag(p, "jacobian-weight", "weight mapped functions by sqrt(yhat') (default)", "use plain composition")
    _flag(p, "correct", "apply the identifiability correction", "report pilot surfaces")


def _boot_opts(p):
    p.add_argument("--component", type=int, help="covariate index j")
    p.add_argument("--alpha", type=float)
    p.add_argument("--B", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--m", type=int, help="block length")
    p.add_argument("--tune-m", action="store_const", const=True, help="choose m by minimum volatility")
    p.add_argument("--c1", type=int, help="grid size in t")
    p.add_argument("--c2", type=int, help="grid size in the mapped covariate")
    p.add_argument("--x-window", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--h0", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="mapsieve", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a scenario to CSV")
    _shared(p)
    _scenario_opts(p)
    p.add_argument("--lags", type=int, help="also write this many lagged columns")

    p = sub.add_parser("fit", help="fit the sieve and write surface grids")
    _shared(p)
    _data_opts(p)
    _sieve_opts(p)
    p.add_argument("--grid-t", type=int)
    p.add_argument("--grid-x", type=int)
    p.add_argument("--x-window", type=float, nargs=2, metavar=("LO", "HI"))

    for name, help_ in (("scr", "simultaneous confidence region"), ("test", "structural test")):
        p = sub.add_parser(name, help=help_)
        _shared(p)
        _data_opts(p)
        _sieve_opts(p)
        _boot_opts(p)
        if name == "test":
            p.add_argument("--kind", choices=["exact", "homogeneity", "separability"])
            p.add_argument("--m0-spec", help="exact-form target: fit, const:V, scenario:SETUP[:DELTA] or grid:FILE")

    p = sub.add_parser("tune", help="choose (c, d) and m")
    _shared(p)
    _data_opts(p)
    _sieve_opts(p)
    p.add_argument("--c-range", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--d-range", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--holdout", type=int)
    p.add_argument("--m-ladder", type=int, nargs="+")
    p.add_argument("--h0", type=int)

    p = sub.add_parser("study", help="Monte Carlo coverage / size / power study")
    _shared(p)
    _scenario_opts(p)
    _sieve_opts(p)
    _boot_opts(p)
    p.add_argument("--replicates", type=int)
    p.add_argument("--mode", choices=["coverage", "exact", "homogeneity", "separability"])
    _flag(p, "tune-cd", "choose (c, d) per replicate (default)", "use --c and --d")
    p.add_argument("--c-range", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--d-range", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--holdout", type=int)
    p.add_argument("--m-ladder", type=int, nargs="+")
    p.add_argument("--centering", choices=["auto", "on", "off"])
    p.add_argument("--centering-samples", type=int)
    return parser


def resolve_settings(args) -> dict:
    """Merge defaults, the JSON config file and explicit flags."""
    settings = dict(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigurationError("config file must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        settings.update(loaded)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        settings[key] = value
    settings["command"] = args.command
    _validate(settings)
    return settings


def _validate(s):
    for key in BOOL_KEYS:
        if s[key] is not None and not isinstance(s[key], bool):
            raise ConfigurationError(f"{key} must be true or false")
    for key in ("n", "B", "M", "c1", "c2", "grid_t", "grid_x", "replicates", "workers", "c", "d"):
        if not isinstance(s[key], int) or s[key] < 1:
            raise ConfigurationError(f"{key} must be a positive integer")
    if not 0 < float(s["alpha"]) < 1:
        raise ConfigurationError("alpha must lie in (0, 1)")
    if s["delta"] < 0:
        raise ConfigurationError("delta must be >= 0")
    if s["m"] is not None and s["m"] < 1:
        raise ConfigurationError("m must be a positive integer")
    if len(s["x_window"]) != 2 or not s["x_window"][0] < s["x_window"][1]:
        raise ConfigurationError("x_window must be two increasing numbers")


# --------------------------------------------------------------------------
# builders
# --------------------------------------------------------------------------

def scenario_from(s) -> Scenario:
    return Scenario(str(s["setup"]), float(s["delta"]), InnovationModel(s["innovation"]))


def sieve_from(s, r: int, study: bool = False) -> SieveConfig:
    c0 = s["c0"]
    correct = s["correct"]
    if study and r == 1:
        c0 = 0 if c0 is None else c0
        correct = False if correct is None else correct
    c0 = s["c"] if c0 is None else c0
    correct = True if correct is None else correct
    return SieveConfig(
        r=r, c0=c0, c=s["c"], d=s["d"], time_family=s["time_basis"], state_family=s["state_basis"],
        mapping=Mapping(s["mapping"], s["domain"], float(s["scale"])),
        jacobian_weight=s["jacobian_weight"], mean_shift_sizes=s["mean_shift_size"], correct=correct)


def load_data(s) -> RegressionData:
    path = s["data"]
    if not path:
        raise ConfigurationError("--data is required")
    header, cols = read_table(path)
    if s["ar_lags"]:
        require_columns(path, header, [s["series"]])
        times = cols.get("t")
        return RegressionData.autoregression(cols[s["series"]], int(s["ar_lags"]), times)
    require_columns(path, header, [s["response"]])
    xs = sorted((h for h in header if h.startswith("X") and h[1:].isdigit()), key=lambda h: int(h[1:]))
    if not xs:
        raise IngestionError(f"{path}: missing column X1", column="X1")
    expected = [f"X{k}" for k in range(1, len(xs) + 1)]
    require_columns(path, header, expected)
    y = cols[s["response"]]
    t = cols["t"] if "t" in cols else None
    return RegressionData.regression(y, np.column_stack([cols[h] for h in expected]), t)


def bootstrap_from(s, fit) -> tuple[BootstrapConfig, dict]:
    info = {}
    m = s["m"]
    if s["tune_m"] or m is None:
        ladder = s["m_ladder"]
        sel = select_m(fit, ladder, s["h0"]) if (s["tune_m"] or ladder) else None
        if sel is not None:
            m = sel.m
            info["m_table"] = sel.table
        else:
            m = max(1, round(fit.n ** (1 / 3)))
    boot = BootstrapConfig(m=int(m), B=s["B"], M=s["M"], c1=s["c1"], c2=s["c2"], alpha=float(s["alpha"]),
                           seed=s["seed"], x_window=tuple(s["x_window"]))
    return boot, info


def parse_m0_spec(spec: str, fit, j: int):
    """Build the exact-form target surface from its textual description."""
    kind, _, rest = spec.partition(":")
    if kind == "fit":
        return lambda t, x: eval_corrected(fit, j, t, x)
    if kind == "const":
        try:
            value = float(rest)
        except ValueError:
            raise ConfigurationError(f"bad constant in m0 spec {spec!r}") from None
        return lambda t, x: np.full(np.broadcast(t, x).shape, value)
    if kind == "scenario":
        parts = rest.split(":")
        sc = Scenario(parts[0], float(parts[1]) if len(parts) > 1 and parts[1] else 0.0)
        comp = j if sc.lags > 1 else 1
        return lambda t, x: eval_true_m(sc, t, x, comp)
    if kind == "grid":
        header, cols = read_table(rest)
        require_columns(rest, header, ["t", "x", "m0"])
        tt, xx = np.unique(cols["t"]), np.unique(cols["x"])
        if tt.size * xx.size != cols["t"].size:
            raise IngestionError(f"{rest}: (t, x) rows do not form a full grid")
        order = np.lexsort((cols["x"], cols["t"]))
        values = cols["m0"][order].reshape(tt.size, xx.size)
        interp = RegularGridInterpolator((tt, xx), values, bounds_error=False, fill_value=None)
        return lambda t, x: interp(np.stack(np.broadcast_arrays(t, x), axis=-1))
    raise ConfigurationError(f"unknown m0 spec {spec!r}")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _manifest(s, **extra):
    keys = {k: v for k, v in s.items() if k not in ("out_dir", "workers", "command")}
    return {"command": s["command"], "version": __version__, "config_digest": config_digest(keys),
            "settings": keys, **extra}


def run_simulate(s):
    out = Path(s["out_dir"])
    sc = scenario_from(s)
    series = simulate_scenario(sc, s["n"], seed=s["seed"], burn_in=s["burn_in"])
    header = ["index", "t", "X"]
    cols = [np.arange(1, series.n + 1), series.times, series.values]
    for k in range(1, s["lags"] + 1):
        lagged = np.full(series.n, np.nan)
        lagged[k:] = series.values[:-k]
        header.append(f"X_lag{k}")
        cols.append(lagged)
    rows = [[c[i] for c in cols] for i in range(series.n) if all(np.isfinite(c[i]) for c in cols)]
    path = write_csv(out / "simulated.csv", header, rows)
    write_json(out / "simulate_manifest.json",
               _manifest(s, scenario=sc.to_dict(), seed=s["seed"], burn_in=s["burn_in"], rows=len(rows)))
    return {"data": str(path), "rows": len(rows)}


def _fit(s):
    data = load_data(s)
    cfg = sieve_from(s, data.r)
    return data, fit_sieve(data, cfg)


def run_fit(s):
    out = Path(s["out_dir"])
    data, fit = _fit(s)
    cfg = fit.config
    if cfg.r:
        t, x, _ = scr_axes(cfg.mapping, s["grid_t"], s["grid_x"], tuple(s["x_window"]))
    else:
        t, x = np.linspace(0, 1, s["grid_t"]), np.zeros(1)
    T, X = np.meshgrid(t, x, indexing="ij")
    header = ["t", "x", "m0_hat"]
    cols = [T.ravel(), X.ravel(), np.broadcast_to(eval_corrected(fit, 0, T), T.shape).ravel()]
    for j in range(1, cfg.r + 1):
        header += [f"m{j}_hat", f"m{j}_pilot"]
        cols += [eval_corrected(fit, j, T, X).ravel(), eval_pilot(fit, j, T, X).ravel()]
    write_csv(out / "fit_grid.csv", header, zip(*cols))
    diag = None
    if cfg.r:
        diag = compute_basis_norms([cfg.tensor(j).time_basis for j in range(1, cfg.r + 1)],
                                   [cfg.tensor(j).state_basis for j in range(1, cfg.r + 1)]).to_dict()
    write_json(out / "fit_manifest.json", _manifest(
        s, sieve=cfg.to_dict(), n=data.n, beta=fit.beta, condition_number=fit.condition_number,
        residual_variance=float(np.var(fit.residuals)), diagnostics=diag))
    return {"n": data.n, "parameters": cfg.n_params}


def _scr(s):
    data, fit = _fit(s)
    boot, info = bootstrap_from(s, fit)
    return fit, build_scr(fit, boot, s["component"]), boot, info


def run_scr(s):
    out = Path(s["out_dir"])
    fit, scr, boot, info = _scr(s)
    write_csv(out / "scr.csv", ["t", "x", "m_hat", "h_hat", "lower", "upper"], scr.rows())
    summary = _manifest(s, c_alpha=scr.c_alpha, alpha=scr.alpha, n=scr.n, component=scr.j,
                        bootstrap=boot.to_dict(), seed=boot.seed, sieve=fit.config.to_dict(), **info)
    write_json(out / "scr_summary.json", summary)
    return {"c_alpha": scr.c_alpha, "m": boot.m}


def run_test(s):
    out = Path(s["out_dir"])
    fit, scr, boot, info = _scr(s)
    kind = s["kind"]
    if kind == "exact":
        report = test_exact_form(scr, parse_m0_spec(s["m0_spec"], fit, scr.j))
    elif kind == "homogeneity":
        report = test_homogeneity(scr)
    else:
        report = test_separability(scr)
    payload = _manifest(s, report=report.to_dict(), bootstrap=boot.to_dict(), sieve=fit.config.to_dict(),
                        component=scr.j, **info)
    write_json(out / "test_report.json", payload)
    return report.to_dict()


def run_tune(s):
    out = Path(s["out_dir"])
    data = load_data(s)
    base = sieve_from(s, data.r)
    if s["c_range"] or s["d_range"]:
        top = math.ceil(2 * math.log(data.n))
        c_lo, c_hi = s["c_range"] or (2, top)
        d_lo, d_hi = s["d_range"] or (2, top)
        candidates = [(c, d) for c in range(c_lo, c_hi + 1) for d in range(d_lo, d_hi + 1)]
    else:
        candidates = default_cd_candidates(data.n)
    cd = select_cd(data, candidates, s["holdout"], base=base)
    write_csv(out / "tune_cd.csv", ["c", "d", "mse"], cd.table)
    fit = fit_sieve(data, base.with_sizes(cd.c, cd.d))
    ladder = s["m_ladder"] or default_m_ladder(fit.n, s["h0"])
    ms = select_m(fit, ladder, s["h0"])
    write_csv(out / "tune_m.csv", ["m", "se"], ms.table)
    summary = {"c": cd.c, "d": cd.d, "holdout": cd.holdout, "m": ms.m, "m_ladder": list(ladder)}
    write_json(out / "tune_summary.json", _manifest(s, selection=summary))
    return summary


def run_study_cmd(s):
    out = Path(s["out_dir"])
    sc = scenario_from(s)
    sieve = sieve_from(s, sc.lags, study=True)
    candidates = None
    if s["c_range"] or s["d_range"]:
        top = math.ceil(2 * math.log(s["n"]))
        c_lo, c_hi = s["c_range"] or (2, top)
        d_lo, d_hi = s["d_range"] or (2, top)
        candidates = [(c, d) for c in range(c_lo, c_hi + 1) for d in range(d_lo, d_hi + 1)]
    boot = BootstrapConfig(m=s["m"] or max(1, round(s["n"] ** (1 / 3))), B=s["B"], M=s["M"],
                           c1=s["c1"], c2=s["c2"], alpha=float(s["alpha"]), seed=s["seed"],
                           x_window=tuple(s["x_window"]))
    cfg = StudyConfig(
        scenario=sc, n=s["n"], replicates=s["replicates"], mode=s["mode"], sieve=sieve, bootstrap=boot,
        tune_cd=s["tune_cd"], cd_candidates=candidates, holdout=s["holdout"],
        tune_m=s["tune_m"] or s["m"] is None, m_candidates=s["m_ladder"], h0=s["h0"],
        component=s["component"] if sc.lags > 1 else 1, centering=s["centering"],
        centering_samples=s["centering_samples"], seed=s["seed"])
    result = run_study(cfg, workers=s["workers"])
    header, rows = study_table(result)
    write_csv(out / "study.csv", header, rows)
    summary = {"rate": result.rate, "se": result.se, "completed": result.completed,
               "failures": result.failures, "mode": cfg.mode}
    write_json(out / "study_manifest.json",
               {**_manifest(s, study=cfg.to_dict(), summary=summary), "config_digest": cfg.digest})
    return summary


COMMANDS = {"simulate": run_simulate, "fit": run_fit, "scr": run_scr, "test": run_test,
            "tune": run_tune, "study": run_study_cmd}


def _error_record(exc):
    record = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("row", "column", "condition_number", "index"):
        value = getattr(exc, attr, None)
        if value is not None:
            record[attr] = value
    return record


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve_settings(args)
        result = COMMANDS[args.command](settings)
    except (MapsieveError, OSError, np.linalg.LinAlgError) as exc:
        rec = _error_record(exc)
        if isinstance(rec.get("condition_number"), float) and not math.isfinite(rec["condition_number"]):
            rec["condition_number"] = None
        print(json.dumps(rec), file=sys.stderr)
        return 2 if isinstance(exc, ConfigurationError) else 1
    print(json.dumps(result, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
