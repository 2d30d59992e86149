"""Multiplier bootstrap, simultaneous confidence regions and structural tests.

Conditionally on the data, ``Xi = U' R / sqrt((n - m - r) m)`` where the rows of
``U`` are blocked sums of residual-weighted design rows and ``R`` is a vector
of i.i.d. standard normals.  For a component ``j`` the bootstrap analogue of
the normalized estimation error at (t, x) is ``T = Xi' Pi^-1 rbar_j(t, x)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .errors import ConfigurationError, DegenerateNormalizationError
from .estimator import SieveFit, eval_corrected, least_squares

H_FLOOR = 1e-12
_GRID_CHUNK = 2048


class DegenerateVarianceWarning(UserWarning):
    """Some bootstrap standard deviations were floored."""


class ResolutionWarning(UserWarning):
    """Too few bootstrap draws to resolve the requested level."""


@dataclass(frozen=True)
class BootstrapConfig:
    """Settings of the multiplier bootstrap and of the evaluation grid.

    ``x_window`` bounds the covariate range of the grid; the grid is uniform
    in ``t`` (``c1`` points) and in the mapped coordinate (``c2`` points).
    """

    m: int = 8
    B: int = 1000
    M: int = 1000
    c1: int = 100
    c2: int = 100
    alpha: float = 0.05
    seed: int = 0
    x_window: tuple = (-10.0, 10.0)

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ConfigurationError("block length m must be a positive integer")
        if self.B < 100 or self.M < 100:
            raise ConfigurationError("B and M must be at least 100")
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if self.c1 < 1 or self.c2 < 1:
            raise ConfigurationError("grid sizes must be positive")
        lo, hi = (float(v) for v in self.x_window)
        if not lo < hi:
            raise ConfigurationError("x_window must be increasing")
        object.__setattr__(self, "x_window", (lo, hi))

    def check(self, n: int, r: int):
        if not (self.m < n / 2 and self.m + r < n):
            raise ConfigurationError(f"block length m={self.m} must be below n/2 = {n / 2}")

    def to_dict(self):
        return {"m": self.m, "B": self.B, "M": self.M, "c1": self.c1, "c2": self.c2,
                "alpha": self.alpha, "seed": self.seed, "x_window": list(self.x_window)}


# --------------------------------------------------------------------------
# blocked sums and draws
# --------------------------------------------------------------------------

def _block_sums(values, m):
    """Sums over windows ``o = i .. i + m`` for ``i = 0 .. n - m - 1`` along axis 0."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    csum = np.concatenate([np.zeros((1,) + values.shape[1:]), np.cumsum(values, axis=0)])
    return csum[m + 1:n + 1] - csum[:n - m]


def blocked_scores(fit: SieveFit, m: int) -> np.ndarray:
    """Matrix whose row ``i`` is the blocked vector for window start ``i`` (n - m rows)."""
    cfg, data = fit.config, fit.data
    n = data.n
    if not 1 <= m < n:
        raise ConfigurationError(f"block length m={m} outside 1..{n - 1}")
    eps = fit.residuals
    t0 = data.t[:n - m]
    parts = []
    if cfg.c0:
        parts.append(_block_sums(eps, m)[:, None] * cfg.intercept_basis()(t0))
    for j in range(1, cfg.r + 1):
        tb = cfg.tensor(j)
        v = tb.state_basis(data.x[:, j - 1])
        if tb.g == 2:
            v = v[:, 1:]
        u = _block_sums(v * eps[:, None], m)
        phi = tb.time_basis(t0)
        parts.append((phi[:, :, None] * u[:, None, :]).reshape(n - m, -1))
    return np.concatenate(parts, axis=1)


def xi_scale(n: int, m: int, r: int) -> float:
    return 1.0 / math.sqrt((n - m - r) * m)


def conditional_covariance(fit: SieveFit, m: int, scores=None) -> np.ndarray:
    """Exact ``Cov(Xi | data)``."""
    u = blocked_scores(fit, m) if scores is None else scores
    return (u.T @ u) * xi_scale(fit.n, m, fit.config.r) ** 2


def draw_xi(fit: SieveFit, cfg: BootstrapConfig, rng=None, multipliers=None, scores=None):
    """One bootstrap vector ``Xi``; ``multipliers`` overrides the Gaussian draws."""
    cfg.check(fit.n, fit.config.r)
    u = blocked_scores(fit, cfg.m) if scores is None else scores
    if multipliers is None:
        multipliers = rng.standard_normal(u.shape[0])
    multipliers = np.asarray(multipliers, dtype=float)
    if multipliers.shape != (u.shape[0],):
        raise ConfigurationError(f"need {u.shape[0]} multipliers")
    return (u.T @ multipliers) * xi_scale(fit.n, cfg.m, fit.config.r)


@dataclass(frozen=True)
class BootstrapPool:
    """Independent draws of ``Xi``: ``h_draws`` (B rows) for the scale, ``c_draws`` (M rows) for the quantile."""

    h_draws: np.ndarray
    c_draws: np.ndarray
    m: int
    seed: int

    @property
    def B(self) -> int:
        return self.h_draws.shape[0]

    @property
    def M(self) -> int:
        return self.c_draws.shape[0]


def _stream(seed, which):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), which])))


def bootstrap_pool(fit: SieveFit, cfg: BootstrapConfig, scores=None) -> BootstrapPool:
    """Draw ``B + M`` independent ``Xi`` from two disjoint seeded streams."""
    cfg.check(fit.n, fit.config.r)
    u = blocked_scores(fit, cfg.m) if scores is None else scores
    scale = xi_scale(fit.n, cfg.m, fit.config.r)
    draws = []
    for which, count in ((1, cfg.B), (2, cfg.M)):
        rng = _stream(cfg.seed, which)
        draws.append((rng.standard_normal((count, u.shape[0])) @ u) * scale)
    return BootstrapPool(draws[0], draws[1], cfg.m, cfg.seed)


# --------------------------------------------------------------------------
# T, h and the critical value
# --------------------------------------------------------------------------

def loadings(fit: SieveFit, j: int, t, x) -> np.ndarray:
    """``Pi^-1 rbar_j(t, x)`` for each point; shape ``broadcast(t, x).shape + (p,)``."""
    return fit.r_bar(j, t, x) @ fit.gram_inv.T


def eval_T(fit: SieveFit, xi, j: int, t, x):
    """Bootstrap statistic ``Xi' Pi^-1 rbar_j(t, x)``; ``xi`` may hold several draws as rows."""
    return np.asarray(xi, dtype=float) @ np.moveaxis(loadings(fit, j, t, x), -1, 0)


def estimate_h(pool: BootstrapPool, fit: SieveFit, j: int, t, x, load=None):
    """Sample standard deviation of ``T`` over the scale draws at every point."""
    L = loadings(fit, j, t, x) if load is None else load
    return _h_from_loadings(pool.h_draws, L)


def _h_from_loadings(draws, L):
    if draws.shape[0] < 2:
        raise ConfigurationError("need at least two draws to estimate h")
    s = np.cov(draws, rowvar=False, ddof=1)
    s = np.atleast_2d(s)
    h2 = ((L @ s) * L).sum(axis=-1)
    h = np.sqrt(np.clip(h2, 0.0, None))
    low = ~(h > H_FLOOR)
    if np.any(low):
        warnings.warn(f"{int(low.sum())} grid points have degenerate bootstrap variance; "
                      f"floored at {H_FLOOR}", DegenerateVarianceWarning, stacklevel=3)
        h = np.where(low, H_FLOOR, h)
    return h


def sup_statistics(draws, L, h):
    """``max_grid |draw' L / h|`` for every draw; grid axes of ``L`` are flattened."""
    L = L.reshape(-1, L.shape[-1])
    h = np.asarray(h).reshape(-1)
    out = np.zeros(draws.shape[0])
    for s in range(0, L.shape[0], _GRID_CHUNK):
        block = draws @ (L[s:s + _GRID_CHUNK] / h[s:s + _GRID_CHUNK, None]).T
        np.maximum(out, np.abs(block).max(axis=1), out=out)
    return out


def critical_value(stats, alpha: float) -> float:
    """Order statistic ``T_(k)`` with ``k = floor(M (1 - alpha)) + 1`` clamped to [1, M].

    With this index ``stat > c`` holds exactly when the bootstrap p-value
    ``#{T_k >= stat} / M`` falls below ``alpha``.
    """
    stats = np.sort(np.asarray(stats, dtype=float).ravel())
    M = stats.size
    if M == 0:
        raise ConfigurationError("empty bootstrap pool")
    if M < 1 / alpha:
        warnings.warn(f"M={M} draws cannot resolve level {alpha}", ResolutionWarning, stacklevel=2)
    k = min(max(math.floor(M * (1 - alpha)) + 1, 1), M)
    return float(stats[k - 1])


def p_value(stats, observed: float) -> float:
    stats = np.asarray(stats, dtype=float)
    return float(np.count_nonzero(stats >= observed) / stats.size)


# --------------------------------------------------------------------------
# confidence regions
# --------------------------------------------------------------------------

def scr_axes(mapping, c1: int, c2: int, x_window=(-10.0, 10.0)):
    """Time points uniform on [0, 1] and covariate points uniform in the mapped coordinate."""
    lo, hi = x_window
    if mapping.half_line:
        if hi <= 0:
            raise ConfigurationError("half-line mapping needs a positive x window")
        lo = max(lo, 1e-6 * mapping.scale)
    t = np.linspace(0.0, 1.0, c1) if c1 > 1 else np.array([0.5])
    y_lo, y_hi = float(mapping.unit(lo)), float(mapping.unit(hi))
    y = np.linspace(y_lo, y_hi, c2) if c2 > 1 else np.array([(y_lo + y_hi) / 2])
    return t, mapping.from_unit(y), y


@dataclass
class ScrGrid:
    """Simultaneous confidence region for component ``j`` on a ``t`` by ``x`` grid.

    Arrays ``m_hat``, ``h_hat``, ``lower`` and ``upper`` have shape
    ``(len(t), len(x))``.  ``sup_stats`` are the bootstrap sup statistics
    used for ``c_alpha`` and for p-values of tests run against this region.
    """

    j: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    m_hat: np.ndarray
    h_hat: np.ndarray
    c_alpha: float
    alpha: float
    n: int
    sup_stats: np.ndarray
    fit: SieveFit = field(repr=False)
    config: BootstrapConfig = field(repr=False)

    @property
    def half_width(self):
        return self.c_alpha * self.h_hat / math.sqrt(self.n)

    @property
    def lower(self):
        return self.m_hat - self.half_width

    @property
    def upper(self):
        return self.m_hat + self.half_width

    def standardized(self, surface):
        """``sqrt(n) |m_hat - surface| / h`` on the grid."""
        return math.sqrt(self.n) * np.abs(self.m_hat - surface) / self.h_hat

    def mesh(self):
        return np.meshgrid(self.t, self.x, indexing="ij")

    def covers(self, surface) -> bool:
        return bool(np.all(self.standardized(surface) <= self.c_alpha))

    def rows(self):
        """Long-format rows ``(t, x, m_hat, h_hat, lower, upper)``."""
        T, X = self.mesh()
        return np.column_stack([a.ravel() for a in (T, X, self.m_hat, self.h_hat, self.lower, self.upper)])


def build_scr(fit: SieveFit, cfg: BootstrapConfig, j: int = 1, pool: BootstrapPool | None = None,
              scores=None) -> ScrGrid:
    """Bootstrap region ``m_hat_j +- c_alpha h_j / sqrt(n)`` on the configured grid."""
    if not 1 <= j <= fit.config.r:
        raise ConfigurationError(f"no covariate component {j}")
    if fit.mean_shifts is None and fit.config.correct:
        raise ConfigurationError("fit the mean shifts before building a region")
    if pool is None:
        pool = bootstrap_pool(fit, cfg, scores=scores)
    t, x, y = scr_axes(fit.config.mapping, cfg.c1, cfg.c2, cfg.x_window)
    T, X = np.meshgrid(t, x, indexing="ij")
    L = loadings(fit, j, T, X)
    h = _h_from_loadings(pool.h_draws, L)
    stats = sup_statistics(pool.c_draws, L, h)
    c = critical_value(stats, cfg.alpha)
    m_hat = eval_corrected(fit, j, T, X)
    return ScrGrid(j, t, x, y, m_hat, h, c, cfg.alpha, fit.n, stats, fit, cfg)


# --------------------------------------------------------------------------
# tests
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TestReport:
    """Outcome of a sup-norm test against a confidence region."""

    __test__ = False

    kind: str
    statistic: float
    p_value: float
    alpha: float
    reject: bool
    c_alpha: float
    exits: int
    restricted: np.ndarray = field(repr=False)

    def to_dict(self):
        return {"kind": self.kind, "statistic": self.statistic, "p_value": self.p_value,
                "alpha": self.alpha, "reject": self.reject, "c_alpha": self.c_alpha,
                "grid_exits": self.exits}


def _report(kind, scr: ScrGrid, restricted) -> TestReport:
    z = scr.standardized(restricted)
    stat = float(z.max())
    exits = int(np.count_nonzero(z > scr.c_alpha))
    return TestReport(kind, stat, p_value(scr.sup_stats, stat), scr.alpha, exits > 0,
                      scr.c_alpha, exits, restricted)


def test_exact_form(scr: ScrGrid, m0_fn) -> TestReport:
    """Does ``m0_fn(t, x)`` lie inside the region at every grid point?"""
    T, X = scr.mesh()
    target = np.broadcast_to(np.asarray(m0_fn(T, X), dtype=float), T.shape)
    return _report("exact", scr, target)


test_exact_form.__test__ = False


def homogeneous_fit(fit: SieveFit, j: int):
    """Refit with component ``j`` restricted to a function of ``x`` alone.

    Returns a callable ``(t, x) -> restricted m_j``; with the correction on
    the restricted function is centered by the fitted mean shifts.
    """
    cfg, data = fit.config, fit.data
    tb = cfg.tensor(j)
    slices = cfg.block_slices()
    drop = tb.g == 2

    def state(xv):
        v = tb.state_basis(xv)
        return v[..., 1:] if drop else v

    from .estimator import design_rows
    full = design_rows(cfg, data.t, data.x)
    keep = np.ones(full.shape[1], dtype=bool)
    keep[slices[j]] = False
    design = np.concatenate([full[:, keep], state(data.x[:, j - 1])], axis=1)
    if design.shape[0] <= design.shape[1]:
        raise ConfigurationError("restricted design is underdetermined")
    coef = least_squares(design, data.y, what="restricted design").coef
    gamma = coef[keep.sum():]

    def restricted(t, x):
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        out = state(x) @ gamma
        if cfg.correct:
            out = out - fit.theta(j, t) @ gamma
        return out

    return restricted


def test_homogeneity(scr: ScrGrid) -> TestReport:
    """Test that component ``scr.j`` does not vary with time."""
    fn = homogeneous_fit(scr.fit, scr.j)
    T, X = scr.mesh()
    return _report("homogeneity", scr, fn(T, X))


test_homogeneity.__test__ = False


def separable_surface(scr: ScrGrid, surface=None):
    """Product ``(int m dx)(int m dt) / (int int m dt dx)`` over the region's window.

    Integrals use the trapezoid rule in ``t`` and in the mapped coordinate,
    with the Jacobian ``dx/dy`` of the transport.
    """
    m = scr.m_hat if surface is None else surface
    mapping = scr.fit.config.mapping
    jac = 1.0 / mapping.unit_derivative(scr.x)
    int_x = trapezoid(m * jac[None, :], scr.y, axis=1) if scr.x.size > 1 else m[:, 0]
    int_t = trapezoid(m, scr.t, axis=0) if scr.t.size > 1 else m[0]
    total = trapezoid(int_x, scr.t) if scr.t.size > 1 else int_x[0]
    if abs(total) < 1e-8:
        raise DegenerateNormalizationError(f"double integral {total:.3g} too close to zero")
    return np.outer(int_x, int_t) / total


def test_separability(scr: ScrGrid) -> TestReport:
    """Test ``m_j(t, x) = f(t) g(x)`` by embedding the factorized estimate in the region."""
    return _report("separability", scr, separable_surface(scr))


test_separability.__test__ = False
