import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mapsieve import study
from mapsieve.errors import ConfigurationError, MapsieveError
from mapsieve.estimator import SieveConfig
from mapsieve.inference import BootstrapConfig
from mapsieve.process import Scenario, centered_true_m, eval_true_m
from mapsieve.study import StudyConfig, StudyFailure, run_study, study_table

BOOT = BootstrapConfig(m=4, B=100, M=100, c1=10, c2=10)


def small(**kw):
    base = dict(scenario=Scenario("2", 0.0), n=150, replicates=3, mode="homogeneity",
                bootstrap=BOOT, tune_cd=False, tune_m=False,
                sieve=SieveConfig(r=1, c0=0, c=3, d=3, correct=False))
    base.update(kw)
    return StudyConfig(**base)


def test_single_replicate():
    res = run_study(small(replicates=1))
    assert len(res.rows) == 1 and res.rate in (0.0, 1.0) and res.se == 0.0
    header, rows = study_table(res)
    assert rows[-1][0] == "summary" and len(rows) == 2
    assert header[-2:] == ["rate", "se"]


def test_rate_and_standard_error():
    res = run_study(small(replicates=6, mode="coverage"))
    outcomes = [r["outcome"] for r in res.rows]
    assert res.rate == pytest.approx(np.mean(outcomes))
    assert res.se == pytest.approx(math.sqrt(res.rate * (1 - res.rate) / 6))
    assert 0 <= res.rate <= 1


def test_worker_invariance():
    cfg = small(replicates=4, mode="separability", scenario=Scenario("3", 0.0))
    serial = run_study(cfg, workers=1)
    parallel = run_study(cfg, workers=2)
    for a, b in zip(serial.rows, parallel.rows):
        for key in ("replicate", "outcome", "statistic", "p_value", "c_alpha"):
            assert a[key] == b[key]


def test_tuned_replicate_runs():
    cfg = small(replicates=1, tune_cd=True, tune_m=True, cd_candidates=((2, 2), (3, 3)))
    row = run_study(cfg).rows[0]
    assert row["ok"] and row["c"] in (2, 3) and row["m"] >= 1


def test_failure_budget(monkeypatch):
    real = study._replicate

    def flaky(cfg, rep):
        if rep == 0:
            raise MapsieveError("boom")
        return real(cfg, rep)

    monkeypatch.setattr(study, "_replicate", flaky)
    with pytest.raises(StudyFailure):
        run_study(small(replicates=3))
    res = run_study(small(replicates=3), budget=0.5)
    assert res.failures == 1 and res.completed == 2
    assert "boom" in res.rows[0]["error"]


def test_centering_switch():
    sc = Scenario("2", 0.0)
    off = small(scenario=sc, centering="off")
    on = small(scenario=sc, centering="on", centering_samples=20_000)
    assert not off.centered and on.centered
    x = np.linspace(-2, 2, 5)
    assert_allclose(study.true_surface(off, 0.3, x), eval_true_m(sc, 0.3, x))
    assert_allclose(study.true_surface(on, 0.3, x), centered_true_m(sc, 0.3, x, samples=20_000))
    auto = StudyConfig(scenario=Scenario("II", 1.0), n=200)
    assert auto.centered and auto.j == 2


def test_digest_tracks_config():
    assert small().digest == small().digest
    assert small().digest != small(seed=1).digest


def test_invalid():
    with pytest.raises(ConfigurationError):
        small(mode="power")
    with pytest.raises(ConfigurationError):
        small(sieve=SieveConfig(r=2))
    with pytest.raises(ConfigurationError):
        small(replicates=0)
