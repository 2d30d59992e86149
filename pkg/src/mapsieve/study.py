"""Seeded Monte Carlo studies of coverage, size and power."""

from __future__ import annotations

import dataclasses
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, MapsieveError
from .estimator import RegressionData, SieveConfig, fit_sieve
from .inference import (BootstrapConfig, build_scr, test_exact_form, test_homogeneity,
                        test_separability)
from .io import config_digest
from .process import Scenario, centered_true_m, eval_true_m, simulate_scenario
from .tuning import default_cd_candidates, select_cd, select_m

MODES = ("coverage", "exact", "homogeneity", "separability")
FAILURE_BUDGET = 0.05


@dataclass(frozen=True)
class StudyConfig:
    """One Monte Carlo experiment.

    With ``tune_cd`` the sizes are chosen per replicate by hold-out
    forecasting (``cd_candidates``, default all pairs up to ``ceil(2 log n)``);
    with ``tune_m`` the block length is chosen by minimum volatility.
    ``centering`` decides whether the true surface is centered by its mean
    under the frozen-time law before scoring: ``"auto"`` centers exactly when
    the fitted components are corrected and an intercept is present.
    """

    scenario: Scenario = field(default_factory=Scenario)
    n: int = 500
    replicates: int = 100
    mode: str = "coverage"
    sieve: SieveConfig | None = None
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    tune_cd: bool = True
    cd_candidates: tuple | None = None
    holdout: int | None = None
    tune_m: bool = True
    m_candidates: tuple | None = None
    h0: int = 3
    component: int | None = None
    centering: str = "auto"
    centering_samples: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"study mode must be one of {MODES}")
        if self.replicates < 1:
            raise ConfigurationError("need at least one replicate")
        if self.n < 50:
            raise ConfigurationError("study sample size must be >= 50")
        if self.centering not in ("auto", "on", "off"):
            raise ConfigurationError("centering must be auto, on or off")
        if self.sieve is None:
            object.__setattr__(self, "sieve", default_study_sieve(self.scenario))
        if self.sieve.r != self.scenario.lags:
            raise ConfigurationError("sieve covariate count must equal the scenario's lag order")
        if self.cd_candidates is not None:
            object.__setattr__(self, "cd_candidates", tuple(tuple(p) for p in self.cd_candidates))
        if self.m_candidates is not None:
            object.__setattr__(self, "m_candidates", tuple(int(v) for v in self.m_candidates))

    @property
    def j(self) -> int:
        if self.component is not None:
            return self.component
        return self.scenario.lags

    @property
    def centered(self) -> bool:
        if self.centering == "auto":
            return self.sieve.correct and self.sieve.c0 > 0
        return self.centering == "on"

    def to_dict(self):
        return {
            "scenario": self.scenario.to_dict(), "n": self.n, "replicates": self.replicates,
            "mode": self.mode, "sieve": self.sieve.to_dict(), "bootstrap": self.bootstrap.to_dict(),
            "tune_cd": self.tune_cd,
            "cd_candidates": [list(p) for p in self.cd_candidates] if self.cd_candidates else None,
            "holdout": self.holdout, "tune_m": self.tune_m,
            "m_candidates": list(self.m_candidates) if self.m_candidates else None,
            "h0": self.h0, "component": self.j, "centering": self.centering,
            "centering_samples": self.centering_samples, "seed": self.seed,
        }

    @property
    def digest(self) -> str:
        return config_digest(self.to_dict())


def default_study_sieve(sc: Scenario) -> SieveConfig:
    """One lag: no intercept and no correction; two lags: intercept plus correction."""
    if sc.lags == 1:
        return SieveConfig(r=1, c0=0, c=4, d=4, correct=False)
    return SieveConfig(r=2, c0=4, c=4, d=4, correct=True)


def _replicate_seed(seed, rep):
    return int(np.random.SeedSequence([int(seed), int(rep), 0xB007]).generate_state(1)[0])


def true_surface(cfg: StudyConfig, t, x):
    if cfg.centered:
        return centered_true_m(cfg.scenario, t, x, cfg.j, samples=cfg.centering_samples, seed=cfg.seed)
    return eval_true_m(cfg.scenario, t, x, cfg.j)


def run_replicate(cfg: StudyConfig, rep: int) -> dict:
    """Simulate, tune, fit and score one replicate; failures are reported, not raised."""
    out = {"replicate": rep, "ok": False, "outcome": None, "statistic": math.nan,
           "p_value": math.nan, "c_alpha": math.nan, "c": None, "d": None, "m": None, "error": ""}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out.update(_replicate(cfg, rep))
        out["ok"] = True
    except (MapsieveError, np.linalg.LinAlgError, FloatingPointError) as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def _replicate(cfg: StudyConfig, rep: int) -> dict:
    sc = cfg.scenario
    series = simulate_scenario(sc, cfg.n, seed=cfg.seed, replicate=rep)
    data = RegressionData.autoregression(series.values, sc.lags)
    sieve = cfg.sieve
    if cfg.tune_cd:
        candidates = cfg.cd_candidates or default_cd_candidates(data.n)
        sieve = sieve.with_sizes(*select_cd(data, candidates, cfg.holdout, base=sieve).pair)
    fit = fit_sieve(data, sieve)
    m = select_m(fit, cfg.m_candidates, cfg.h0).m if cfg.tune_m else cfg.bootstrap.m
    boot = dataclasses.replace(cfg.bootstrap, m=m, seed=_replicate_seed(cfg.seed, rep))
    scr = build_scr(fit, boot, cfg.j)
    row = {"c": sieve.c[cfg.j - 1], "d": sieve.d[cfg.j - 1], "m": m, "c_alpha": scr.c_alpha}
    if cfg.mode == "coverage":
        T, X = scr.mesh()
        z = scr.standardized(true_surface(cfg, T, X))
        stat = float(z.max())
        row.update(outcome=bool(stat <= scr.c_alpha), statistic=stat,
                   p_value=float(np.mean(scr.sup_stats >= stat)))
        return row
    if cfg.mode == "exact":
        report = test_exact_form(scr, lambda t, x: true_surface(cfg, t, x))
    elif cfg.mode == "homogeneity":
        report = test_homogeneity(scr)
    else:
        report = test_separability(scr)
    row.update(outcome=report.reject, statistic=report.statistic, p_value=report.p_value)
    return row


@dataclass(frozen=True)
class StudyResult:
    config: StudyConfig
    rows: list
    rate: float
    se: float
    failures: int

    @property
    def completed(self) -> int:
        return len(self.rows) - self.failures


class StudyFailure(MapsieveError):
    """Too many replicates failed."""


def run_study(cfg: StudyConfig, workers: int = 1, budget: float = FAILURE_BUDGET) -> StudyResult:
    """Run all replicates and reduce them in replicate order.

    The reported rate is coverage (coverage mode) or rejection frequency
    (test modes) over completed replicates, with binomial standard error.
    """
    reps = range(cfg.replicates)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_replicate, [cfg] * cfg.replicates, reps, chunksize=4))
    else:
        rows = [run_replicate(cfg, rep) for rep in reps]
    rows.sort(key=lambda r: r["replicate"])
    failures = sum(not r["ok"] for r in rows)
    if failures > budget * cfg.replicates:
        first = next(r["error"] for r in rows if not r["ok"])
        raise StudyFailure(f"{failures} of {cfg.replicates} replicates failed (first: {first})")
    done = [r for r in rows if r["ok"]]
    if not done:
        raise StudyFailure("no replicate completed")
    rate = float(np.mean([bool(r["outcome"]) for r in done]))
    se = math.sqrt(rate * (1 - rate) / len(done))
    return StudyResult(cfg, rows, rate, se, failures)


STUDY_COLUMNS = ("replicate", "ok", "outcome", "statistic", "p_value", "c_alpha", "c", "d", "m", "error")


def study_table(result: StudyResult):
    """Per-replicate rows and a final ``summary`` row carrying ``rate`` and ``se``."""
    header = list(STUDY_COLUMNS) + ["rate", "se"]
    rows = [[r[k] for k in STUDY_COLUMNS] + ["", ""] for r in result.rows]
    summary = ["summary", result.completed, "", "", "", "", "", "", "",
               f"failures={result.failures}", result.rate, result.se]
    return header, rows + [summary]
