"""Orthonormal sieve bases on [0, 1] and their mapped versions on the real line.

A :class:`BasisSet` evaluates ``count`` functions at once and returns an array
whose trailing axis indexes the basis functions (array index 0 holds basis
function 1).  Mapped sets compose a unit-interval family with
``yhat(x) = (u(x; s) + 1) / 2`` and, by default, multiply by
``sqrt(yhat'(x))`` so that the result is orthonormal in L2 of the whole domain.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from ._filters import DAUBECHIES_FILTERS
from .errors import ConfigurationError, DomainError

SQRT2 = math.sqrt(2.0)

# constancy test for the first mapped function (decides whether index g=2)
_CONST_GRID = 512
_CONST_TOL = 1e-8


# --------------------------------------------------------------------------
# mappings
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Mapping:
    """Monotone map ``x = g(y; s)`` from (-1, 1) onto the real line or (0, inf).

    Parameters
    ----------
    kind : {"algebraic", "logarithmic"}
    domain : {"whole-line", "half-line"}
    scale : float
        Positive scale ``s``; 1 is the recommended default.
    """

    kind: str = "algebraic"
    domain: str = "whole-line"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("algebraic", "logarithmic"):
            raise ConfigurationError(f"unknown mapping kind {self.kind!r}")
        if self.domain not in ("whole-line", "half-line"):
            raise ConfigurationError(f"unknown mapping domain {self.domain!r}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ConfigurationError("mapping scale must be a positive finite number")

    @property
    def half_line(self) -> bool:
        return self.domain == "half-line"

    def forward(self, y):
        return map_forward(y, self)

    def inverse(self, x):
        return map_inverse(x, self)

    def inverse_derivative(self, x):
        """``u'(x; s)``, the derivative of the inverse map."""
        x = self._check_x(x)
        s = self.scale
        if self.kind == "algebraic":
            if self.half_line:
                return 2.0 * s / (x + s) ** 2
            return s * s / (x * x + s * s) ** 1.5
        return (2.0 if self.half_line else 1.0) / s * _sech2(x / s)

    def unit(self, x):
        """``yhat(x) = (u(x) + 1) / 2`` in [0, 1]."""
        return 0.5 * (map_inverse(x, self) + 1.0)

    def unit_derivative(self, x):
        return 0.5 * self.inverse_derivative(x)

    def from_unit(self, y01):
        """Inverse of :meth:`unit`: ``g(2 y - 1; s)`` for y in (0, 1)."""
        return map_forward(2.0 * np.asarray(y01, dtype=float) - 1.0, self)

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainError("mapping argument must be finite")
        if self.half_line and np.any(x <= 0):
            raise DomainError("half-line mapping requires x > 0")
        return x

    def to_dict(self):
        return {"kind": self.kind, "domain": self.domain, "scale": self.scale}


def _sech2(z):
    e = np.exp(-2.0 * np.abs(z))
    return 4.0 * e / (1.0 + e) ** 2


def map_forward(y, mapping: Mapping):
    """Evaluate ``x = g(y; s)`` for ``|y| < 1``.

    Raises
    ------
    DomainError
        If any ``|y| >= 1``.
    """
    y = np.asarray(y, dtype=float)
    if np.any(~(np.abs(y) < 1.0)):
        raise DomainError("map_forward requires |y| < 1")
    s = mapping.scale
    if mapping.kind == "algebraic":
        if mapping.half_line:
            out = s * (1.0 + y) / (1.0 - y)
        else:
            out = s * y / np.sqrt((1.0 - y) * (1.0 + y))
    else:
        if mapping.half_line:
            out = 0.5 * s * np.log((3.0 + y) / (1.0 - y))
        else:
            out = s * np.arctanh(y)
    return out[()] if out.ndim == 0 else out


def map_inverse(x, mapping: Mapping):
    """Evaluate ``y = u(x; s)``, the inverse of :func:`map_forward`."""
    x = mapping._check_x(x)
    s = mapping.scale
    if mapping.kind == "algebraic":
        if mapping.half_line:
            out = (x - s) / (x + s)
        else:
            out = x / np.sqrt(x * x + s * s)
    else:
        # half-line: inverse of x = (s/2) log((3 + y) / (1 - y))
        out = 2.0 * np.tanh(x / s) - 1.0 if mapping.half_line else np.tanh(x / s)
    return out[()] if out.ndim == 0 else out


# --------------------------------------------------------------------------
# families
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BasisFamily:
    """Which orthonormal family to use on [0, 1].

    ``kind`` is ``"fourier"``, ``"jacobi"`` (parameters ``alpha``, ``beta``)
    or ``"daubechies"`` (filter ``order`` N and resolution ``level`` J; when
    ``level`` is None it is the smallest J with ``2**J >= count``).
    """

    kind: str = "fourier"
    alpha: float = 0.0
    beta: float = 0.0
    order: int = 9
    level: int | None = None

    def __post_init__(self):
        if self.kind not in ("fourier", "jacobi", "daubechies"):
            raise ConfigurationError(f"unknown basis family {self.kind!r}")
        if self.kind == "jacobi" and not (self.alpha > -1 and self.beta > -1):
            raise ConfigurationError("jacobi parameters must exceed -1")
        if self.kind == "daubechies":
            if self.order not in DAUBECHIES_FILTERS:
                raise ConfigurationError(
                    f"daubechies order must be one of {sorted(DAUBECHIES_FILTERS)}")
            if self.level is not None and self.level < 0:
                raise ConfigurationError("daubechies level must be >= 0")

    @classmethod
    def parse(cls, name: str) -> "BasisFamily":
        """Build a family from a short name.

        Accepted: ``fourier``, ``legendre``, ``chebyshev``, ``jacobi(a,b)``,
        ``daubechies`` / ``db<N>`` / ``daubechies(N)`` / ``daubechies(N,J)``.
        """
        name = name.strip().lower().replace(" ", "")
        if name in ("fourier", "trig", "trigonometric"):
            return cls("fourier")
        if name == "legendre":
            return cls("jacobi", 0.0, 0.0)
        if name == "chebyshev":
            return cls("jacobi", -0.5, -0.5)
        if name.startswith("jacobi(") and name.endswith(")"):
            a, b = (float(v) for v in name[7:-1].split(","))
            return cls("jacobi", a, b)
        if name.startswith("db") and name[2:].isdigit():
            return cls("daubechies", order=int(name[2:]))
        if name == "daubechies":
            return cls("daubechies")
        if name.startswith("daubechies(") and name.endswith(")"):
            args = [int(v) for v in name[11:-1].split(",")]
            return cls("daubechies", order=args[0], level=args[1] if len(args) > 1 else None)
        raise ConfigurationError(f"unknown basis family name {name!r}")

    @property
    def name(self) -> str:
        if self.kind == "fourier":
            return "fourier"
        if self.kind == "jacobi":
            if self.alpha == 0 and self.beta == 0:
                return "legendre"
            if self.alpha == -0.5 and self.beta == -0.5:
                return "chebyshev"
            return f"jacobi({self.alpha:g},{self.beta:g})"
        if self.level is None:
            return f"daubechies({self.order})"
        return f"daubechies({self.order},{self.level})"


def fourier_values(t, count):
    """Constant, then interleaved sqrt(2) cos / sin pairs of increasing frequency."""
    t = np.asarray(t, dtype=float)
    out = np.empty(t.shape + (count,))
    out[..., 0] = 1.0
    for k in range(2, count + 1):
        j = k // 2
        arg = 2.0 * math.pi * j * t
        out[..., k - 1] = SQRT2 * (np.cos(arg) if k % 2 == 0 else np.sin(arg))
    return out


def jacobi_norm_sq(n, alpha, beta):
    """Squared norm of the degree-n Jacobi polynomial under its weight on (-1, 1)."""
    if n == 0:
        return math.exp((alpha + beta + 1) * math.log(2.0) + gammaln(alpha + 1)
                        + gammaln(beta + 1) - gammaln(alpha + beta + 2))
    log_num = ((alpha + beta + 1) * math.log(2.0) + gammaln(n + alpha + 1)
               + gammaln(n + beta + 1))
    log_den = (math.log(2 * n + alpha + beta + 1) + gammaln(n + 1)
               + gammaln(n + alpha + beta + 1))
    return math.exp(log_num - log_den)


def jacobi_polynomials(z, degree, alpha, beta):
    """Values of P_0..P_degree at z by the three-term recurrence; shape z.shape + (degree+1,)."""
    z = np.asarray(z, dtype=float)
    out = np.empty(z.shape + (degree + 1,))
    out[..., 0] = 1.0
    if degree >= 1:
        out[..., 1] = (alpha + 1) + (alpha + beta + 2) * (z - 1) / 2
    ab = alpha + beta
    for n in range(2, degree + 1):
        a = 2 * n * (n + ab) * (2 * n + ab - 2)
        b = (2 * n + ab - 1) * ((2 * n + ab) * (2 * n + ab - 2) * z + alpha ** 2 - beta ** 2)
        c = 2 * (n + alpha - 1) * (n + beta - 1) * (2 * n + ab)
        out[..., n] = (b * out[..., n - 1] - c * out[..., n - 2]) / a
    return out


def jacobi_values(t, count, alpha, beta):
    t = np.asarray(t, dtype=float)
    z = 2.0 * t - 1.0
    polys = jacobi_polynomials(z, count - 1, alpha, beta)
    norms = np.array([jacobi_norm_sq(n, alpha, beta) for n in range(count)])
    if alpha == 0 and beta == 0:
        weight = np.ones_like(z)
    else:
        with np.errstate(divide="ignore"):
            weight = (1.0 - z) ** alpha * (1.0 + z) ** beta
    return polys * np.sqrt(2.0 * weight[..., None] / norms)


@functools.lru_cache(maxsize=64)
def daubechies_scaling(order: int, level: int):
    """Tabulate the Daubechies D-``order`` father wavelet by the cascade algorithm.

    Returns
    -------
    grid, values : ndarray
        Dyadic grid ``k / 2**level`` on ``[0, 2*order - 1]`` and the scaling
        function on it.  Both arrays are read-only.
    """
    if order not in DAUBECHIES_FILTERS:
        raise ConfigurationError(f"unsupported Daubechies order {order}")
    if level < 1:
        raise ConfigurationError("cascade level must be >= 1")
    h = np.asarray(DAUBECHIES_FILTERS[order])
    length = 2 * order - 1
    if order == 1:
        vals = np.array([1.0, 0.0])
    else:
        # values at the interior integers: eigenvector of the two-scale matrix for eigenvalue 1
        idx = np.arange(1, length)
        a = np.zeros((length - 1, length - 1))
        for r, nn in enumerate(idx):
            for c, mm in enumerate(idx):
                k = 2 * nn - mm
                if 0 <= k < h.size:
                    a[r, c] = SQRT2 * h[k]
        _, _, vt = np.linalg.svd(a - np.eye(length - 1))
        v = vt[-1]
        vals = np.concatenate([[0.0], v / v.sum(), [0.0]])
    for j in range(1, level + 1):
        step = 2 ** (j - 1)
        new = np.zeros(length * 2 ** j + 1)
        new[::2] = vals
        q = np.arange(1, new.size, 2)
        acc = np.zeros(q.size)
        for k, hk in enumerate(h):
            src = q - k * step
            ok = (src >= 0) & (src < vals.size)
            acc[ok] += hk * vals[src[ok]]
        new[1::2] = SQRT2 * acc
        vals = new
    grid = np.arange(vals.size) / 2.0 ** level
    grid.setflags(write=False)
    vals.setflags(write=False)
    return grid, vals


def daubechies_values(t, count, order, level):
    """Periodised scaling functions ``phi_{J,k}``, k = 0..count-1, on [0, 1]."""
    t = np.asarray(t, dtype=float)
    cascade_level = max(10, level + 6)
    grid, phi = daubechies_scaling(order, cascade_level)
    support = 2 * order - 1
    scale = 2.0 ** level
    out = np.zeros(t.shape + (count,))
    lmax = int(math.ceil(support / scale)) + 1
    for k in range(count):
        acc = np.zeros(t.shape)
        for l in range(-lmax, lmax + 1):
            z = scale * (t + l) - k
            acc += np.interp(z, grid, phi, left=0.0, right=0.0)
        out[..., k] = 2.0 ** (level / 2.0) * acc
    return out


# --------------------------------------------------------------------------
# basis sets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BasisSet:
    """``count`` orthonormal functions, either on [0, 1] or mapped to ``mapping``'s domain."""

    family: BasisFamily = field(default_factory=BasisFamily)
    count: int = 1
    mapping: Mapping | None = None
    jacobian_weight: bool = True

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 1:
            raise ConfigurationError("basis count must be a positive integer")
        if self.family.kind == "daubechies" and self.count > 2 ** self.wavelet_level:
            raise ConfigurationError(
                f"daubechies level {self.wavelet_level} supports at most "
                f"{2 ** self.wavelet_level} functions")

    @property
    def mapped(self) -> bool:
        return self.mapping is not None

    @property
    def wavelet_level(self) -> int:
        if self.family.level is not None:
            return self.family.level
        return max(0, math.ceil(math.log2(self.count)))

    def unit_values(self, t):
        """Evaluate the underlying unit-interval family (no mapping)."""
        t = np.asarray(t, dtype=float)
        fam = self.family
        if fam.kind == "fourier":
            return fourier_values(t, self.count)
        if fam.kind == "jacobi":
            return jacobi_values(t, self.count, fam.alpha, fam.beta)
        return daubechies_values(t, self.count, fam.order, self.wavelet_level)

    def __call__(self, z):
        """Evaluate all functions at ``z``; shape ``z.shape + (count,)``."""
        z = np.asarray(z, dtype=float)
        if not self.mapped:
            if np.any(~((z >= 0.0) & (z <= 1.0))):
                raise DomainError("unit-interval basis requires t in [0, 1]")
            return self.unit_values(z)
        y = self.mapping.unit(z)
        vals = self.unit_values(y)
        if self.jacobian_weight:
            vals = vals * np.sqrt(self.mapping.unit_derivative(z))[..., None]
        return vals

    @functools.cached_property
    def first_is_constant(self) -> bool:
        """True when the first function is numerically constant over the domain."""
        y = (np.arange(_CONST_GRID) + 0.5) / _CONST_GRID
        z = y if not self.mapped else self.mapping.from_unit(y)
        v = self(z)[:, 0]
        return bool(np.ptp(v) < _CONST_TOL)

    def to_dict(self):
        d = {"family": self.family.name, "count": self.count}
        if self.mapped:
            d.update(mapping=self.mapping.to_dict(), jacobian_weight=self.jacobian_weight)
        return d


def _check_index(basis: BasisSet, k: int):
    if not (1 <= k <= basis.count):
        raise DomainError(f"basis index {k} outside 1..{basis.count}")


def eval_time_basis(basis: BasisSet, k: int, t):
    """Value of the k-th (1-based) unit-interval basis function at ``t``."""
    if basis.mapped:
        raise ConfigurationError("eval_time_basis expects an unmapped basis set")
    _check_index(basis, k)
    out = basis(t)[..., k - 1]
    return out[()] if np.ndim(out) == 0 else out


def eval_mapped_basis(basis: BasisSet, k: int, x):
    """Value of the k-th (1-based) mapped basis function at ``x``."""
    if not basis.mapped:
        raise ConfigurationError("eval_mapped_basis expects a mapped basis set")
    _check_index(basis, k)
    out = basis(x)[..., k - 1]
    return out[()] if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class TensorBasis:
    """Hierarchical products ``phi_l1(t) * varphi_l2(x)``, with l2 running fastest."""

    time_basis: BasisSet
    state_basis: BasisSet

    def __post_init__(self):
        if self.time_basis.mapped:
            raise ConfigurationError("time basis of a tensor must be unmapped")
        if not self.state_basis.mapped:
            raise ConfigurationError("state basis of a tensor must be mapped")

    @property
    def g(self) -> int:
        """First state index used in a design (2 if the first mapped function is constant)."""
        return 2 if self.state_basis.first_is_constant else 1

    @property
    def size(self) -> int:
        return self.time_basis.count * self.state_basis.count

    def __call__(self, t, x, drop_constant=False):
        phi = self.time_basis(t)
        v = self.state_basis(x)
        if drop_constant and self.g == 2:
            v = v[..., 1:]
        return (phi[..., :, None] * v[..., None, :]).reshape(
            np.broadcast_shapes(phi.shape[:-1], v.shape[:-1]) + (-1,))


def tensor_eval(tb: TensorBasis, t, x):
    """Full ``c * d`` tensor vector at (t, x)."""
    return tb(t, x)


def gram_matrix(basis: BasisSet, grid_size: int = 4096):
    """Midpoint-rule Gram matrix of ``basis``.

    Unit-interval sets integrate over [0, 1].  Mapped sets integrate over the
    whole domain by substituting ``x = g(2y - 1)``; with the Jacobian weight on
    this is the plain L2 inner product, with it off it is the inner product
    under the pushed-forward measure ``d yhat(x)``.
    """
    if grid_size < 10 * basis.count:
        raise ConfigurationError("grid_size must be at least 10 * count")
    y = (np.arange(grid_size) + 0.5) / grid_size
    if not basis.mapped:
        vals = basis(y)
        dens = np.ones(grid_size)
    else:
        x = basis.mapping.from_unit(y)
        vals = basis(x)
        dens = 1.0 / basis.mapping.unit_derivative(x) if basis.jacobian_weight else np.ones(grid_size)
    w = dens / grid_size
    g = vals.T @ (vals * w[:, None])
    return 0.5 * (g + g.T)


# --------------------------------------------------------------------------
# norm diagnostics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BasisDiagnostics:
    """Grid sup-norm surrogates for the basis magnitudes entering the error rates."""

    xi: float
    varsigma: float
    iota: float
    gamma: float
    zeta: float

    def to_dict(self):
        return {"xi": self.xi, "varsigma": self.varsigma, "iota": self.iota,
                "gamma": self.gamma, "zeta": self.zeta}


def default_state_grid(mapping: Mapping, size=2001):
    y = (np.arange(size) + 0.5) / size
    return mapping.from_unit(y)


def compute_basis_norms(time_sets, state_sets, t_grid=None, x_grid=None) -> BasisDiagnostics:
    """Compute xi, varsigma, iota, gamma and zeta on evaluation grids.

    ``time_sets`` holds the time bases for the intercept and every covariate;
    ``state_sets`` holds one mapped basis per covariate, paired with
    ``time_sets[-len(state_sets):]`` for zeta.  ``varsigma`` uses a finite
    difference for the derivative of the mapped functions.
    """
    time_sets = list(time_sets)
    state_sets = list(state_sets)
    if not time_sets:
        raise ConfigurationError("at least one time basis is required")
    t = np.linspace(0.0, 1.0, 1001) if t_grid is None else np.asarray(t_grid, dtype=float)
    if t.size == 0:
        raise ConfigurationError("empty t grid")
    phis = [b(t) for b in time_sets]
    xi = max(float(np.max(np.abs(p))) for p in phis)
    gam_sq = [np.sum(p * p, axis=-1) for p in phis]
    gamma = max(float(np.sqrt(np.max(g))) for g in gam_sq)
    varsigma = iota = 0.0
    zeta_sq = np.zeros_like(t)
    for sb, tb_sq in zip(state_sets, [np.sum(p * p, axis=-1) for p in phis[len(phis) - len(state_sets):]]):
        x = default_state_grid(sb.mapping) if x_grid is None else np.sort(np.asarray(x_grid, dtype=float))
        if x.size < 2:
            raise ConfigurationError("x grid needs at least two points")
        v = sb(x)
        dv = np.gradient(v, x, axis=0)
        varsigma = max(varsigma, float(np.max(np.abs(v) + np.abs(dv))))
        v_sq = np.sum(v * v, axis=-1)
        iota = max(iota, float(np.sqrt(np.max(v_sq))))
        zeta_sq = zeta_sq + tb_sq * np.max(v_sq)
    zeta = float(np.sqrt(np.max(zeta_sq))) if state_sets else 0.0
    return BasisDiagnostics(xi=xi, varsigma=varsigma, iota=iota, gamma=gamma, zeta=zeta)
