import dataclasses
import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mapsieve.errors import ConfigurationError, DegenerateNormalizationError
from mapsieve.estimator import RegressionData, SieveConfig, eval_corrected, fit_sieve
from mapsieve.inference import (BootstrapConfig, BootstrapPool, DegenerateVarianceWarning,
                                ResolutionWarning, blocked_scores, bootstrap_pool, build_scr,
                                conditional_covariance, critical_value, draw_xi, estimate_h,
                                eval_T, loadings, p_value, scr_axes, separable_surface,
                                test_exact_form, test_homogeneity, test_separability)
from mapsieve.process import Scenario, simulate_scenario

CFG = SieveConfig(r=1, c0=2, c=3, d=3)


@pytest.fixture(scope="module")
def fit():
    series = simulate_scenario(Scenario("2", 1.0), 400, seed=4)
    return fit_sieve(RegressionData.autoregression(series.values, 1), CFG)


@pytest.fixture(scope="module")
def scr(fit):
    return build_scr(fit, BootstrapConfig(m=5, B=400, M=400, c1=25, c2=25, seed=1))


def direct_scores(fit, m):
    """Blocked score rows written out term by term."""
    cfg, data = fit.config, fit.data
    eps, n = fit.residuals, fit.n
    tb = cfg.tensor(1)
    rows = []
    for i in range(n - m):
        window = range(i, i + m + 1)
        e_sum = sum(eps[o] for o in window)
        v_sum = sum(eps[o] * tb.state_basis(data.x[o, 0]) for o in window)
        if tb.g == 2:
            v_sum = v_sum[1:]
        phi0 = cfg.intercept_basis()(data.t[i])
        phi = tb.time_basis(data.t[i])
        rows.append(np.concatenate([e_sum * phi0, np.outer(phi, v_sum).ravel()]))
    return np.array(rows)


class TestDraws:
    def test_zero_multipliers(self, fit):
        cfg = BootstrapConfig(m=5)
        u = blocked_scores(fit, 5)
        assert_array_equal(draw_xi(fit, cfg, multipliers=np.zeros(u.shape[0])), 0.0)

    def test_scores_match_direct_sums(self, fit):
        assert_allclose(blocked_scores(fit, 4), direct_scores(fit, 4), atol=1e-10)

    def test_covariance_oracle(self, fit):
        m = 5
        u = direct_scores(fit, m)
        oracle = u.T @ u / ((fit.n - m - 1) * m)
        assert_allclose(conditional_covariance(fit, m), oracle, rtol=1e-10, atol=1e-12)
        rng = np.random.default_rng(0)
        cfg = BootstrapConfig(m=m)
        draws = np.array([draw_xi(fit, cfg, rng) for _ in range(5000)])
        mean_sd = draws.std(axis=0, ddof=1) / math.sqrt(5000)
        assert np.linalg.norm(draws.mean(axis=0)) <= 3 * np.linalg.norm(mean_sd)
        emp = np.cov(draws, rowvar=False)
        d = np.diag(oracle)
        se = np.sqrt((np.outer(d, d) + oracle ** 2) / 5000)
        assert np.all(np.abs(emp - oracle) <= 5 * se)

    def test_block_length_checked(self, fit):
        with pytest.raises(ConfigurationError):
            draw_xi(fit, BootstrapConfig(m=math.ceil(fit.n / 2)), np.random.default_rng(0))
        with pytest.raises(ConfigurationError):
            BootstrapConfig(B=50)

    def test_pool(self, fit):
        cfg = BootstrapConfig(m=4, B=120, M=130, seed=9)
        a, b = bootstrap_pool(fit, cfg), bootstrap_pool(fit, cfg)
        assert (a.B, a.M) == (120, 130)
        assert a.h_draws.shape[1] == CFG.n_params
        assert_array_equal(a.h_draws, b.h_draws)
        assert_array_equal(a.c_draws, b.c_draws)
        assert not np.array_equal(a.h_draws, a.c_draws[:120])

    def test_swapping_pools(self, fit):
        cfg = BootstrapConfig(m=5, B=1000, M=1000, c1=15, c2=15, seed=2)
        pool = bootstrap_pool(fit, cfg)
        swapped = BootstrapPool(pool.c_draws, pool.h_draws, pool.m, pool.seed)
        c1 = build_scr(fit, cfg, pool=pool).c_alpha
        c2 = build_scr(fit, cfg, pool=swapped).c_alpha
        assert abs(c1 - c2) / c1 <= 3 / math.sqrt(cfg.M)


class TestStatistic:
    def test_zero_and_linearity(self, fit):
        t, x = np.linspace(0, 1, 6), np.linspace(-3, 3, 6)
        xi = np.random.default_rng(1).standard_normal(CFG.n_params)
        assert_array_equal(eval_T(fit, np.zeros(CFG.n_params), 1, t, x), 0.0)
        assert_array_equal(eval_T(fit, 2 * xi, 1, t, x), 2 * eval_T(fit, xi, 1, t, x))

    def test_dense_recomputation(self, fit):
        rng = np.random.default_rng(2)
        xi = rng.standard_normal(CFG.n_params)
        w_inv = np.linalg.inv(np.linalg.inv(fit.gram_inv))
        for t, x in zip(rng.uniform(size=10), rng.uniform(-10, 10, size=10)):
            b = CFG.tensor(1)(t, x, drop_constant=True)
            f = np.outer(CFG.tensor(1).time_basis(t), fit.theta(1, t)).ravel()
            rbar = np.concatenate([np.zeros(CFG.c0), b - f])
            assert_allclose(eval_T(fit, xi, 1, t, x), xi @ w_inv @ rbar, rtol=1e-8)

    def test_h_oracle(self, fit):
        cfg = BootstrapConfig(m=5, B=2000, M=100, seed=3)
        pool = bootstrap_pool(fit, cfg)
        rng = np.random.default_rng(3)
        t, x = rng.uniform(size=10), rng.uniform(-5, 5, size=10)
        h = estimate_h(pool, fit, 1, t, x)
        L = loadings(fit, 1, t, x)
        h2 = np.einsum("kp,pq,kq->k", L, conditional_covariance(fit, 5), L)
        assert np.all(np.abs(h ** 2 - h2) <= 5 * h2 * math.sqrt(2 / (cfg.B - 1)))

    def test_h_order_invariant(self, fit):
        pool = bootstrap_pool(fit, BootstrapConfig(m=4, B=200, M=100))
        perm = BootstrapPool(pool.h_draws[::-1], pool.c_draws, pool.m, pool.seed)
        t, x = np.linspace(0, 1, 5), np.linspace(-2, 2, 5)
        assert_allclose(estimate_h(perm, fit, 1, t, x), estimate_h(pool, fit, 1, t, x), rtol=1e-10)

    def test_degenerate_h(self, fit):
        pool = BootstrapPool(np.zeros((100, CFG.n_params)), np.zeros((100, CFG.n_params)), 4, 0)
        with pytest.warns(DegenerateVarianceWarning):
            h = estimate_h(pool, fit, 1, np.array([0.5]), np.array([0.0]))
        assert h[0] == 1e-12


class TestCriticalValue:
    def test_monotone_in_alpha(self):
        stats = np.random.default_rng(0).exponential(size=500)
        cs = [critical_value(stats, a) for a in (0.01, 0.05, 0.1, 0.2)]
        assert all(a >= b for a, b in zip(cs, cs[1:]))

    def test_empirical_quantile(self):
        stats = np.arange(1, 101, dtype=float)
        # the 96th order statistic, so exactly 5 draws lie strictly above it
        assert critical_value(stats, 0.05) == 96.0
        assert p_value(stats, 96.0) == 0.05
        assert p_value(stats, 96.5) < 0.05

    def test_gaussian_quantile(self):
        z = np.abs(np.random.default_rng(5).standard_normal(2000))
        assert abs(critical_value(z, 0.05) - 1.96) <= 0.15

    def test_resolution_warning(self):
        with pytest.warns(ResolutionWarning):
            critical_value(np.ones(10), 0.01)


class TestRegion:
    def test_band_contains_estimate(self, scr):
        assert np.all(scr.upper - scr.lower > 0)
        assert np.all((scr.lower < scr.m_hat) & (scr.m_hat < scr.upper))
        assert_allclose(scr.upper - scr.lower, 2 * scr.c_alpha * scr.h_hat / math.sqrt(scr.n))
        assert scr.rows().shape == (25 * 25, 6)

    def test_axes(self):
        from mapsieve.basis import Mapping
        t, x, y = scr_axes(Mapping(), 5, 7, (-10, 10))
        assert_allclose(t, np.linspace(0, 1, 5))
        assert_allclose(x[[0, -1]], [-10, 10])
        assert_allclose(np.diff(y), np.diff(y)[0])
        _, xh, _ = scr_axes(Mapping("algebraic", "half-line"), 3, 4, (-10, 10))
        assert xh[0] > 0

    def test_width_shrinks_with_n(self):
        cfg = BootstrapConfig(m=5, B=200, M=200, c1=15, c2=15)
        widths = []
        for n in (500, 2000):
            series = simulate_scenario(Scenario("2", 1.0), n, seed=6)
            f = fit_sieve(RegressionData.autoregression(series.values, 1), CFG)
            s = build_scr(f, cfg)
            widths.append(np.median(s.upper - s.lower))
        assert widths[1] < widths[0]

    def test_intercept_equivariance(self, fit):
        kappa = 3.25
        data = fit.data
        shifted = fit_sieve(RegressionData(data.y + kappa, data.t, data.x), CFG)
        t = np.linspace(0, 1, 9)
        assert_allclose(eval_corrected(shifted, 0, t), eval_corrected(fit, 0, t) + kappa, atol=1e-8)
        cfg = BootstrapConfig(m=5, B=150, M=150, c1=10, c2=10, seed=4)
        a, b = build_scr(fit, cfg), build_scr(shifted, cfg)
        assert_allclose(b.lower, a.lower, atol=1e-8)
        assert_allclose(b.upper, a.upper, atol=1e-8)

    def test_requires_component(self, fit):
        with pytest.raises(ConfigurationError):
            build_scr(fit, BootstrapConfig(m=4), j=2)


class TestTests:
    def test_exact_form_self(self, scr):
        rep = test_exact_form(scr, lambda t, x: scr.m_hat)
        assert rep.statistic == 0 and rep.p_value == 1 and not rep.reject

    def test_exact_form_far(self, scr):
        far = 10 * (scr.upper - scr.lower).max()
        rep = test_exact_form(scr, lambda t, x: scr.m_hat + far)
        assert rep.reject and rep.p_value == 0 and rep.exits == scr.m_hat.size

    def test_decision_consistency(self, scr):
        width = scr.upper - scr.lower
        for k in np.linspace(0, 1.5, 16):
            for bump in (lambda T: k * width, lambda T: k * width * (T > 0.5)):
                rep = test_exact_form(scr, lambda t, x: scr.m_hat + bump(t))
                assert rep.reject == (rep.p_value < rep.alpha) == (rep.exits > 0)

    def test_homogeneity_in_span(self):
        # component depends on x only and lies in the restricted span
        rng = np.random.default_rng(11)
        n = 600
        t = np.arange(1, n + 1) / n
        x = rng.normal(scale=2, size=n)
        cfg = SieveConfig(r=1, c0=1, c=3, d=3)
        y = cfg.tensor(1).state_basis(x) @ np.array([1.0, -0.5, 0.25]) + 1e-3 * rng.standard_normal(n)
        f = fit_sieve(RegressionData.regression(y, x, t), cfg)
        s = build_scr(f, BootstrapConfig(m=4, B=200, M=200, c1=20, c2=20, seed=0))
        rep = test_homogeneity(s)
        assert not rep.reject and rep.p_value >= 0.05

    def test_homogeneity_detects_time_variation(self):
        series = simulate_scenario(Scenario("2", 4.0), 1000, seed=1)
        f = fit_sieve(RegressionData.autoregression(series.values, 1), CFG)
        rep = test_homogeneity(build_scr(f, BootstrapConfig(m=6, B=300, M=300, c1=30, c2=30)))
        assert rep.reject and rep.p_value < 0.05

    def test_separable_synthetic(self, scr):
        f = 1 + 0.5 * np.cos(2 * np.pi * scr.t)
        g = np.exp(-scr.x ** 2 / 4)
        surface = np.outer(f, g)
        assert_allclose(separable_surface(scr, surface), surface, atol=1e-8)
        sep = dataclasses.replace(scr, m_hat=surface)
        rep = test_separability(sep)
        assert rep.statistic <= 1e-6 and not rep.reject

    def test_separable_degenerate(self, scr):
        surface = np.outer(np.sin(2 * np.pi * scr.t), np.ones_like(scr.x))
        with pytest.raises(DegenerateNormalizationError):
            separable_surface(scr, surface)

    def test_reports_serialize(self, scr):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = test_separability(scr)
        d = rep.to_dict()
        assert set(d) >= {"kind", "statistic", "p_value", "reject", "c_alpha"}
