"""Data-driven choice of the sieve sizes and of the bootstrap block length.

Sizes ``(c, d)`` are chosen by hold-out forecasting: fit on all but the last
``l`` observations and score one-step predictions of the rest.  The block
length ``m`` is chosen by minimum volatility of the blocked covariance
estimate across neighbouring candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, MapsieveError, TuningError
from .estimator import RegressionData, SieveConfig, SieveFit, eval_total, fit_pilot
from .inference import blocked_scores

H0 = 3


def default_holdout(n: int) -> int:
    return int(math.floor(3 * math.log2(n)))


def default_cd_candidates(n: int, upper: int | None = None):
    """All pairs with ``2 <= c, d <= ceil(2 log n)``."""
    top = math.ceil(2 * math.log(n)) if upper is None else upper
    return [(c, d) for c in range(2, top + 1) for d in range(2, top + 1)]


@dataclass(frozen=True)
class CdSelection:
    c: int
    d: int
    holdout: int
    table: list  # (c, d, mse) rows; mse is inf for infeasible candidates

    @property
    def pair(self):
        return self.c, self.d


def _cv_key(row):
    c, d, _ = row
    return (c * d, c, d)


def select_cd(data: RegressionData, candidates, l: int | None = None,
              base: SieveConfig | None = None) -> CdSelection:
    """Hold-out forecast selection of ``(c, d)`` (applied to every covariate).

    Scores within a relative tolerance of 1e-8 count as ties, which go to
    the smaller ``c * d`` and then the smaller ``c``.
    """
    candidates = [(int(c), int(d)) for c, d in candidates]
    if not candidates:
        raise ConfigurationError("no candidate pairs")
    l = default_holdout(data.n) if l is None else int(l)
    if not 1 <= l < data.n / 2:
        raise ConfigurationError(f"hold-out length {l} must satisfy 1 <= l < n/2")
    base = SieveConfig(r=data.r) if base is None else base
    train = data.head(data.n - l)
    t_val, x_val, y_val = data.t[-l:], data.x[-l:], data.y[-l:]
    table = []
    for c, d in sorted(set(candidates), key=lambda cd: (cd[0] * cd[1], cd)):
        try:
            fit = fit_pilot(train, base.with_sizes(c, d))
            mse = float(np.mean((y_val - eval_total(fit, t_val, x_val)) ** 2))
        except (MapsieveError, np.linalg.LinAlgError):
            mse = math.inf
        table.append((c, d, mse))
    finite = [row for row in table if math.isfinite(row[2])]
    if not finite:
        raise TuningError("every candidate (c, d) was infeasible")
    best = min(row[2] for row in finite)
    tied = [row for row in finite if math.isclose(row[2], best, rel_tol=1e-8, abs_tol=1e-12)]
    c, d, _ = min(tied, key=_cv_key)
    return CdSelection(c, d, l, table)


def omega_hat(fit: SieveFit, m: int, scores=None):
    """Blocked covariance estimate with normalization ``(n - m - r + 1) m``."""
    u = blocked_scores(fit, m) if scores is None else scores
    return (u.T @ u) / ((fit.n - m - fit.config.r + 1) * m)


def default_m_ladder(n: int, h0: int = H0, count: int = 9):
    """Strictly increasing integer ladder: ``count`` interior points around ``n^(1/3)``
    plus ``h0`` extension points on each side."""
    centre = n ** (1 / 3)
    raw = np.geomspace(centre / 2, centre * 2, count)
    interior = []
    for v in raw:
        k = max(int(round(v)), h0 + 1)
        if interior and k <= interior[-1]:
            k = interior[-1] + 1
        interior.append(k)
    below = [interior[0] - h0 + i for i in range(h0)]
    ratio = (raw[-1] / raw[0]) ** (1 / (count - 1))
    above = []
    last = interior[-1]
    for _ in range(h0):
        last = max(last + 1, int(round(last * ratio)))
        above.append(last)
    ladder = below + interior + above
    if ladder[-1] >= n / 2:
        raise ConfigurationError(f"n={n} too small for the default block-length ladder")
    return ladder


@dataclass(frozen=True)
class MSelection:
    m: int
    table: list  # (m, se) rows over interior candidates


def select_m(fit: SieveFit, candidates=None, h0: int = H0) -> MSelection:
    """Minimum-volatility block length.

    ``candidates`` is the extended ladder ``m_{-h0+1} < ... < m_{n0+h0}``;
    the interior points are those with ``h0`` neighbours on both sides.
    """
    if h0 < 1:
        raise ConfigurationError("h0 must be >= 1")
    ladder = default_m_ladder(fit.n, h0) if candidates is None else [int(v) for v in candidates]
    if len(ladder) < 2 * h0 + 1:
        raise ConfigurationError(f"need at least {2 * h0 + 1} candidates for h0={h0}")
    if any(b <= a for a, b in zip(ladder, ladder[1:])) or ladder[0] < 1:
        raise ConfigurationError("candidate block lengths must be strictly increasing positive integers")
    if ladder[-1] >= fit.n / 2:
        raise ConfigurationError("candidate block lengths must stay below n/2")
    omegas = [omega_hat(fit, m) for m in ladder]
    table = []
    for i in range(h0, len(ladder) - h0):
        window = omegas[i - h0:i + h0 + 1]
        avg = sum(window) / len(window)
        se = math.sqrt(sum(np.linalg.norm(avg - w, "fro") ** 2 for w in window) / (2 * h0))
        table.append((ladder[i], se))
    best = min(se for _, se in table)
    m = next(m for m, se in table if math.isclose(se, best, rel_tol=1e-8, abs_tol=1e-12))
    return MSelection(m, table)
