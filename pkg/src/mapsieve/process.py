"""Simulation of the locally stationary nonlinear AR designs used in the studies.

Innovations follow a time-varying AR(2), a SETAR or a first-order bilinear
recursion driven by i.i.d. standard Gaussian shocks, with coefficient functions
``a1(t) = 0.3`` and ``a2(t) = 0.3 sin(2 pi t)``.  Responses follow

    X_i = m(t_i, X_{i-1}) + sigma(t_i, X_{i-1}) * eps_i,   t_i = i / n

(setups 1-3), or the two-lag additive form for setups I-III.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, SimulationDivergenceError

BURN_IN = 200
TWO_PI = 2.0 * math.pi
INV_SQRT_PI = 1.0 / math.sqrt(math.pi)

INNOVATION_KINDS = ("tv-ar2", "setar", "bilinear")
_INNOVATION_ALIASES = {"a": "tv-ar2", "b": "setar", "c": "bilinear"}
SETUPS = ("1", "2", "3", "I", "II", "III")


def make_rng(seed: int, replicate: int = 0) -> np.random.Generator:
    """Counter-based stream keyed by ``(seed, replicate)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replicate)])))


def _a1(t):
    return 0.3 + 0.0 * np.asarray(t, dtype=float)


def _a2(t):
    return 0.3 * np.sin(TWO_PI * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class InnovationModel:
    """Locally stationary innovation process; ``kind`` is tv-ar2, setar or bilinear."""

    kind: str = "tv-ar2"

    def __post_init__(self):
        kind = _INNOVATION_ALIASES.get(self.kind, self.kind)
        if kind not in INNOVATION_KINDS:
            raise ConfigurationError(f"unknown innovation model {self.kind!r}")
        object.__setattr__(self, "kind", kind)

    def a1(self, t):
        return _a1(t)

    def a2(self, t):
        return _a2(t)


def innovation_path(model: InnovationModel, shocks, times, trace=None):
    """Run the innovation recursion for given shocks and time arguments.

    ``trace``, when a list, receives the coefficient applied at each step
    (for SETAR this records the active regime's coefficient).
    """
    shocks = np.asarray(shocks, dtype=float)
    times = np.asarray(times, dtype=float)
    a1 = _a1(times).tolist()
    a2 = _a2(times).tolist()
    eta = shocks.tolist()
    out = [0.0] * len(eta)
    e1 = e2 = 0.0
    eta_prev = 0.0
    kind = model.kind
    for i, z in enumerate(eta):
        if kind == "tv-ar2":
            e = a1[i] * e1 + a2[i] * e2 + z
            coef = a1[i]
        elif kind == "setar":
            coef = a1[i] if e1 >= 0 else a2[i]
            e = coef * e1 + z
        else:
            coef = a1[i] * eta_prev + a2[i]
            e = coef * e1 + z
        if trace is not None:
            trace.append(coef)
        out[i] = e
        e2, e1 = e1, e
        eta_prev = z
    return np.array(out)


def simulate_innovations(model: InnovationModel, n: int, seed: int = 0, burn_in: int = BURN_IN,
                         replicate: int = 0, shocks=None):
    """Length-``n`` innovation path; burn-in runs with time frozen at 0 and is discarded.

    ``shocks`` (length ``burn_in + n``) overrides the Gaussian draws.
    """
    if n < 1 or burn_in < 0:
        raise ConfigurationError("need n >= 1 and burn_in >= 0")
    if shocks is None:
        shocks = make_rng(seed, replicate).standard_normal(burn_in + n)
    elif len(shocks) != burn_in + n:
        raise ConfigurationError("shocks must have length burn_in + n")
    times = np.concatenate([np.zeros(burn_in), np.arange(1, n + 1) / n])
    return innovation_path(model, shocks, times)[burn_in:]


# --------------------------------------------------------------------------
# regression surfaces
# --------------------------------------------------------------------------

def _m_setup1(t, x, delta):
    return (1 + x * x) ** -4 + delta * np.sin(TWO_PI * t) * np.exp(-x * x)


def _s_setup1(t, x):
    return 1.5 * np.exp(-x * x / 2) * (2 + np.sin(TWO_PI * t))


def _m_setup2(t, x, delta):
    return (delta * np.sin(TWO_PI * t) + 1) * np.exp(-x * x / 2)


def _s_setup2(t, x):
    return 0.5 * np.exp(-x * x) * np.cos(TWO_PI * t) + 1


def _m_setup3(t, x, delta):
    return 2 * t * (delta * np.exp(-2 * t * x * x) + INV_SQRT_PI * np.exp(-x * x / 2))


def _s_setup3(t, x):
    t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    inner = np.abs(x) <= 1
    return np.where(inner, 0.7 * (1 + x * x), np.where(t < 0.5, 1.4, 2.0))


_SURFACES = {"1": (_m_setup1, _s_setup1), "2": (_m_setup2, _s_setup2), "3": (_m_setup3, _s_setup3)}

# setups I-III: (intercept, first-lag component, second-lag component, sigma family)
_TWO_LAG = {
    "I": (lambda t: 2 * t * np.cos(TWO_PI * t),
          lambda t, x, d: (2 + x * x) ** -4 + 0.0 * t,
          lambda t, x, d: (1 + d * np.sin(TWO_PI * t)) * np.exp(-x * x),
          "1"),
    "II": (lambda t: 2.0 + 0.0 * t,
           lambda t, x, d: np.cos(TWO_PI * t) * np.exp(-x * x),
           lambda t, x, d: (1 + d * np.sin(TWO_PI * t)) * np.exp(-x * x),
           "2"),
    "III": (lambda t: 2 * t,
            lambda t, x, d: np.exp(-x * x) + 0.0 * t,
            lambda t, x, d: _m_setup3(t, x, d),
            "3"),
}


@dataclass(frozen=True)
class Scenario:
    """Data-generating design: setup 1, 2, 3 (one lag) or I, II, III (two lags)."""

    setup: str = "1"
    delta: float = 0.0
    innovation: InnovationModel = field(default_factory=InnovationModel)

    def __post_init__(self):
        setup = str(self.setup).upper()
        if setup not in SETUPS:
            raise ConfigurationError(f"unknown setup {self.setup!r}; expected one of {SETUPS}")
        object.__setattr__(self, "setup", setup)
        if not (self.delta >= 0 and math.isfinite(self.delta)):
            raise ConfigurationError("delta must be a finite number >= 0")
        if isinstance(self.innovation, str):
            object.__setattr__(self, "innovation", InnovationModel(self.innovation))

    @property
    def lags(self) -> int:
        return 1 if self.setup in ("1", "2", "3") else 2

    @property
    def sigma_setup(self) -> str:
        return self.setup if self.lags == 1 else _TWO_LAG[self.setup][3]

    def to_dict(self):
        return {"setup": self.setup, "delta": self.delta, "innovation": self.innovation.kind}


def eval_true_m(sc: Scenario, t, x, j: int = 1):
    """True regression component ``j`` at (t, x).

    For one-lag setups only ``j = 1`` exists; for two-lag setups ``j = 0`` is
    the intercept (``x`` ignored) and ``j = 1, 2`` the lag components.  These
    are the uncentred components as written in the design.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if sc.lags == 1:
        if j != 1:
            raise ConfigurationError("one-lag setups only have component 1")
        return _SURFACES[sc.setup][0](t, x, sc.delta)
    m0, m1, m2, _ = _TWO_LAG[sc.setup]
    if j == 0:
        return m0(t)
    if j == 1:
        return m1(t, x, sc.delta)
    if j == 2:
        return m2(t, x, sc.delta)
    raise ConfigurationError("two-lag setups have components 0, 1, 2")


def eval_true_sigma(sc: Scenario, t, x):
    """Volatility surface at (t, x), where x is the first lag."""
    return _SURFACES[sc.sigma_setup][1](np.asarray(t, dtype=float), np.asarray(x, dtype=float))


def _conditional_mean(sc: Scenario, t, x1, x2):
    if sc.lags == 1:
        return _SURFACES[sc.setup][0](t, x1, sc.delta)
    m0, m1, m2, _ = _TWO_LAG[sc.setup]
    return m0(t) + m1(t, x1, sc.delta) + m2(t, x2, sc.delta)


@dataclass(frozen=True)
class SimulatedSeries:
    values: np.ndarray
    times: np.ndarray
    seed: int
    burn_in: int
    scenario: Scenario
    replicate: int = 0

    @property
    def n(self) -> int:
        return self.values.size


def simulate_scenario(sc: Scenario, n: int, seed: int = 0, replicate: int = 0,
                      burn_in: int = BURN_IN, noiseless: bool = False,
                      check_n: bool = True) -> SimulatedSeries:
    """Simulate ``X_1..X_n`` from ``sc`` starting at ``X_0 = 0`` after ``burn_in`` steps.

    The innovation process gets its own ``burn_in`` warm-up before the
    response recursion starts; during both warm-ups time is frozen at 0.
    ``noiseless`` sets sigma to zero (a test hook).
    """
    if check_n and n < 50:
        raise ConfigurationError("simulate_scenario requires n >= 50")
    if n < 1 or burn_in < 0:
        raise ConfigurationError("need n >= 1 and burn_in >= 0")
    total = burn_in + n
    rng = make_rng(seed, replicate)
    shocks = rng.standard_normal(burn_in + total)
    times = np.concatenate([np.zeros(burn_in), np.arange(1, n + 1) / n])
    eps = innovation_path(sc.innovation, shocks, np.concatenate([np.zeros(burn_in), times]))[burn_in:]
    x = np.empty(total)
    x1 = x2 = 0.0
    lag1 = sc.lags == 1
    if lag1:
        m_fn, s_fn = _SURFACES[sc.setup]
        delta = sc.delta
    else:
        s_fn = _SURFACES[sc.sigma_setup][1]
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(total):
            ti = times[i]
            if lag1:
                mean = m_fn(ti, x1, delta)
            else:
                mean = _conditional_mean(sc, ti, x1, x2)
            val = mean if noiseless else mean + s_fn(ti, x1) * eps[i]
            val = float(val)
            if not math.isfinite(val):
                raise SimulationDivergenceError(i - burn_in + 1)
            x[i] = val
            x2, x1 = x1, val
    return SimulatedSeries(values=x[burn_in:], times=times[burn_in:], seed=seed,
                           burn_in=burn_in, scenario=sc, replicate=replicate)


# --------------------------------------------------------------------------
# centring of the true surface
# --------------------------------------------------------------------------

def _frozen_samples(sc: Scenario, t: float, samples: int, seed: int, chains: int = 2000,
                    warmup: int = 300):
    """Draws of the lags (X_{i-1}, X_{i-2}) from the process frozen at time t."""
    rng = make_rng(seed, 7919)
    steps = warmup + max(1, -(-samples // chains))
    a1 = 0.3
    a2 = 0.3 * math.sin(TWO_PI * t)
    kind = sc.innovation.kind
    s_fn = _SURFACES[sc.sigma_setup][1]
    e1 = np.zeros(chains)
    e2 = np.zeros(chains)
    eta_prev = np.zeros(chains)
    x1 = np.zeros(chains)
    x2 = np.zeros(chains)
    keep1, keep2 = [], []
    for step in range(steps):
        z = rng.standard_normal(chains)
        if kind == "tv-ar2":
            e = a1 * e1 + a2 * e2 + z
        elif kind == "setar":
            e = np.where(e1 >= 0, a1, a2) * e1 + z
        else:
            e = (a1 * eta_prev + a2) * e1 + z
        e2, e1, eta_prev = e1, e, z
        if step >= warmup:
            keep1.append(x1.copy())
            keep2.append(x2.copy())
        new = _conditional_mean(sc, t, x1, x2) + s_fn(t, x1) * e
        x2, x1 = x1, new
    return np.concatenate(keep1)[:samples], np.concatenate(keep2)[:samples]


@functools.lru_cache(maxsize=4096)
def component_mean(sc: Scenario, t: float, j: int = 1, samples: int = 1_000_000, seed: int = 0):
    """Monte Carlo ``E m_j(t, X_t)`` under the law of the process frozen at ``t``; cached."""
    x1, x2 = _frozen_samples(sc, float(t), samples, seed)
    x = x1 if j == 1 else x2
    return float(np.mean(eval_true_m(sc, t, x, j)))


def centered_true_m(sc: Scenario, t, x, j: int = 1, samples: int = 1_000_000, seed: int = 0):
    """``m_j(t, x) - E m_j(t, X_t)``: the component under the mean-zero identification."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    tt, xx = np.broadcast_arrays(t, x)
    means = np.vectorize(lambda s: component_mean(sc, float(s), j, samples, seed))(tt) if tt.size else tt
    return eval_true_m(sc, tt, xx, j) - means
