import math

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from mapsieve.basis import BasisFamily, BasisSet, Mapping, TensorBasis, map_forward, map_inverse
from mapsieve.estimator import (RegressionData, SieveConfig, build_design, eval_corrected, eval_pilot,
                                eval_total, fit_sieve)
from mapsieve.inference import critical_value, p_value
from mapsieve.io import read_table, write_csv
from mapsieve.process import InnovationModel, simulate_innovations

SETTINGS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])

mappings = st.builds(Mapping, st.sampled_from(["algebraic", "logarithmic"]),
                     st.sampled_from(["whole-line", "half-line"]), st.floats(0.25, 4.0))
families = st.sampled_from(["fourier", "legendre", "chebyshev", "db3"])
finite = st.floats(-1e6, 1e6, allow_nan=False)


@SETTINGS
@given(mappings, st.floats(-0.999, 0.999))
def test_forward_inverse_pair(mapping, y):
    assert abs(map_inverse(map_forward(y, mapping), mapping) - y) <= 1e-10


@SETTINGS
@given(mappings, st.lists(st.floats(-0.99, 0.99), min_size=2, max_size=30, unique=True))
def test_inverse_monotone(mapping, ys):
    x = np.sort(map_forward(np.array(ys), mapping))
    assume(np.all(np.diff(x) > 1e-12 * np.maximum(1, np.abs(x[1:]))))
    assert np.all(np.diff(map_inverse(x, mapping)) > 0)


@SETTINGS
@given(families, families, st.integers(1, 6), st.integers(1, 6), mappings, st.booleans(),
       st.floats(0, 1), st.floats(0.01, 50))
def test_tensor_is_outer_product(tf, sf, c, d, mapping, weight, t, x):
    tb = TensorBasis(BasisSet(BasisFamily.parse(tf), c),
                     BasisSet(BasisFamily.parse(sf), d, mapping, weight))
    assert_array_equal(tb(t, x), np.outer(tb.time_basis(t), tb.state_basis(x)).ravel())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 2), st.integers(0, 3), st.integers(1, 4), st.integers(1, 4),
       st.booleans())
def test_telescoping_and_orthogonality(seed, r, c0, c, d, weight):
    rng = np.random.default_rng(seed)
    n = 200
    t = np.arange(1, n + 1) / n
    x = rng.normal(scale=2, size=(n, r))
    y = np.sin(2 * np.pi * t) + np.tanh(x[:, 0]) + rng.standard_normal(n)
    cfg = SieveConfig(r=r, c0=c0, c=c, d=d + (not weight), jacobian_weight=weight)
    data = RegressionData.regression(y, x, t)
    fit = fit_sieve(data, cfg)
    w = build_design(data, cfg).matrix
    assert np.abs(w.T @ fit.residuals).max() / n <= 1e-10
    tt, xx = rng.uniform(size=100), rng.normal(scale=3, size=(100, r))
    corrected = eval_corrected(fit, 0, tt) + sum(eval_corrected(fit, j, tt, xx[:, j - 1]) for j in range(1, r + 1))
    pilot = eval_pilot(fit, 0, tt) + sum(eval_pilot(fit, j, tt, xx[:, j - 1]) for j in range(1, r + 1))
    assert_allclose(corrected, pilot, atol=1e-10)
    assert_allclose(pilot, eval_total(fit, tt, xx), atol=1e-10)


@pytest.mark.filterwarnings("ignore::mapsieve.inference.ResolutionWarning")
@SETTINGS
@given(arrays(float, st.integers(20, 300), elements=st.floats(0, 100)))
def test_critical_value_monotone(stats):
    cs = [critical_value(stats, a) for a in (0.01, 0.05, 0.1, 0.2)]
    assert all(a >= b for a, b in zip(cs, cs[1:]))


@pytest.mark.filterwarnings("ignore::mapsieve.inference.ResolutionWarning")
@SETTINGS
@given(arrays(float, st.integers(20, 300), elements=st.floats(0, 10)), st.floats(0, 12),
       st.sampled_from([0.01, 0.05, 0.1, 0.2]))
def test_decision_matches_p_value(stats, observed, alpha):
    # exits the band exactly when the bootstrap p-value drops below alpha
    assert (observed > critical_value(stats, alpha)) == (p_value(stats, observed) < alpha)


@SETTINGS
@given(st.sampled_from(["tv-ar2", "setar", "bilinear"]), st.integers(1, 200), st.integers(0, 50))
def test_zero_shocks(kind, n, burn):
    path = simulate_innovations(InnovationModel(kind), n, burn_in=burn, shocks=np.zeros(n + burn))
    assert_array_equal(path, 0.0)


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(arrays(float, st.tuples(st.integers(1, 20), st.integers(1, 4)), elements=finite))
def test_csv_round_trip(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "v.csv"
    header = [f"c{k}" for k in range(values.shape[1])]
    write_csv(path, header, values.tolist())
    _, cols = read_table(path)
    assert_array_equal(np.column_stack([cols[h] for h in header]), values)


@SETTINGS
@given(st.floats(-50, 50), st.integers(1, 8))
def test_mapped_basis_bounded_decay(x, k):
    b = BasisSet(BasisFamily("fourier"), 8, Mapping(), True)
    v = b(x)[k - 1]
    bound = math.sqrt(2 * Mapping().unit_derivative(x))
    assert abs(v) <= bound + 1e-12
