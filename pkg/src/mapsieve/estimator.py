"""Mapped sieve least squares with the identifiability correction.

The model is ``Y_i = m_0(t_i) + sum_j m_j(t_i, X_{j,i}) + eps_i``.  A pilot
fit regresses ``Y`` on the intercept block ``phi_0(t)`` and, per covariate,
the tensor block ``phi_j(t) (x) varphi_j(x)`` (state index running fastest).
The correction then estimates ``chi_j(t) = E m*_j(t, X_j)`` by regressing the
mapped basis values on the time basis and moves it into the intercept.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .basis import BasisFamily, BasisSet, Mapping, TensorBasis
from .errors import ConfigurationError, NotFittedError, SingularDesignError

RANK_TOL = 1e-10


def _as_tuple(value, r, name):
    if value is None:
        return None
    if np.ndim(value) == 0:
        return (int(value),) * r
    out = tuple(int(v) for v in value)
    if len(out) == 1:
        return out * r
    if len(out) != r:
        raise ConfigurationError(f"{name} needs {r} entries, got {len(out)}")
    return out


@dataclass(frozen=True)
class SieveConfig:
    """Sizes and families of the sieve.

    Parameters
    ----------
    r : int
        Number of covariates (0 gives a pure trend model).
    c0 : int
        Size of the intercept time basis; 0 drops the intercept.
    c, d : int or sequence of int
        Time and state basis sizes per covariate.
    time_family, state_family : str
        Family names understood by :meth:`BasisFamily.parse`.
    mapping : Mapping
        Map from the covariate domain to (-1, 1).
    jacobian_weight : bool
        Multiply mapped functions by ``sqrt(yhat')``.
    mean_shift_sizes : int or sequence, optional
        Time-basis size used to estimate each mean shift; defaults to ``c``.
    correct : bool
        Apply the identifiability correction.
    """

    r: int = 1
    c0: int = 1
    c: tuple = (4,)
    d: tuple = (4,)
    time_family: str = "fourier"
    state_family: str = "fourier"
    mapping: Mapping = field(default_factory=Mapping)
    jacobian_weight: bool = True
    mean_shift_sizes: tuple | None = None
    correct: bool = True

    def __post_init__(self):
        if self.r < 0 or self.c0 < 0:
            raise ConfigurationError("r and c0 must be >= 0")
        if self.r == 0 and self.c0 == 0:
            raise ConfigurationError("model has no parameters")
        c = _as_tuple(self.c, self.r, "c")
        d = _as_tuple(self.d, self.r, "d")
        ms = _as_tuple(self.mean_shift_sizes, self.r, "mean_shift_sizes")
        if any(v < 1 for v in c + d + (ms or ())):
            raise ConfigurationError("basis sizes must be >= 1")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "mean_shift_sizes", ms)
        # validate names early
        BasisFamily.parse(self.time_family)
        BasisFamily.parse(self.state_family)

    # basis objects -------------------------------------------------------
    def time_basis(self, size: int) -> BasisSet:
        return BasisSet(BasisFamily.parse(self.time_family), size)

    def intercept_basis(self) -> BasisSet | None:
        return self.time_basis(self.c0) if self.c0 else None

    def tensor(self, j: int) -> TensorBasis:
        """Tensor basis of covariate ``j`` (1-based)."""
        self._check_j(j)
        state = BasisSet(BasisFamily.parse(self.state_family), self.d[j - 1],
                         mapping=self.mapping, jacobian_weight=self.jacobian_weight)
        return TensorBasis(self.time_basis(self.c[j - 1]), state)

    def shift_basis(self, j: int) -> BasisSet:
        self._check_j(j)
        size = self.mean_shift_sizes[j - 1] if self.mean_shift_sizes else self.c[j - 1]
        return self.time_basis(size)

    def g(self, j: int) -> int:
        return self.tensor(j).g

    def block_size(self, j: int) -> int:
        if j == 0:
            return self.c0
        return self.c[j - 1] * (self.d[j - 1] - self.g(j) + 1)

    def block_slices(self):
        """Column slices of the intercept block and each covariate block."""
        out, start = [], 0
        for j in range(self.r + 1):
            size = self.block_size(j)
            out.append(slice(start, start + size))
            start += size
        return out

    @property
    def n_params(self) -> int:
        return sum(self.block_size(j) for j in range(self.r + 1))

    def _check_j(self, j):
        if not 1 <= j <= self.r:
            raise ConfigurationError(f"covariate index {j} outside 1..{self.r}")

    def with_sizes(self, c, d) -> "SieveConfig":
        return dataclasses.replace(self, c=c, d=d, mean_shift_sizes=None)

    def to_dict(self):
        return {
            "r": self.r, "c0": self.c0, "c": list(self.c), "d": list(self.d),
            "time_family": self.time_family, "state_family": self.state_family,
            "mapping": self.mapping.to_dict(), "jacobian_weight": self.jacobian_weight,
            "mean_shift_sizes": list(self.mean_shift_sizes) if self.mean_shift_sizes else None,
            "correct": self.correct,
        }

    @classmethod
    def from_dict(cls, d) -> "SieveConfig":
        d = dict(d)
        if isinstance(d.get("mapping"), dict):
            d["mapping"] = Mapping(**d["mapping"])
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown sieve settings {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class RegressionData:
    """Response ``y``, rescaled times ``t`` and covariates ``x`` (shape n x r)."""

    y: np.ndarray
    t: np.ndarray
    x: np.ndarray
    ar_lags: int = 0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        t = np.asarray(self.t, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.size == 0:
            x = np.empty((y.size, 0))
        if not (y.size == t.size == x.shape[0]):
            raise ConfigurationError("y, t and x must have the same number of rows")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
            raise ConfigurationError("data contain non-finite values")
        if np.any((t < 0) | (t > 1)):
            raise ConfigurationError("times must lie in [0, 1]")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def r(self) -> int:
        return self.x.shape[1]

    @classmethod
    def regression(cls, y, x, t=None) -> "RegressionData":
        """Exogenous regression with ``t_i = i / n`` unless given."""
        y = np.asarray(y, dtype=float).ravel()
        if t is None:
            t = np.arange(1, y.size + 1) / y.size
        return cls(y, t, x)

    @classmethod
    def autoregression(cls, series, lags: int, times=None) -> "RegressionData":
        """Response ``X_{r+i}`` with covariates ``X_{r+i-j}``, j = 1..lags.

        Times are those of the response in the original series
        (``k / N`` by default), so the first ``lags`` observations are lost.
        """
        z = np.asarray(series, dtype=float).ravel()
        N = z.size
        if lags < 1 or N <= lags:
            raise ConfigurationError("need 1 <= lags < series length")
        if times is None:
            times = np.arange(1, N + 1) / N
        times = np.asarray(times, dtype=float).ravel()
        x = np.column_stack([z[lags - j:N - j] for j in range(1, lags + 1)])
        return cls(z[lags:], times[lags:], x, ar_lags=lags)

    def head(self, rows: int) -> "RegressionData":
        return dataclasses.replace(self, y=self.y[:rows], t=self.t[:rows], x=self.x[:rows])


@dataclass(frozen=True)
class DesignMatrix:
    matrix: np.ndarray
    blocks: list

    @property
    def shape(self):
        return self.matrix.shape


def _block_columns(cfg: SieveConfig, j, t, x):
    if j == 0:
        return cfg.intercept_basis()(t)
    return cfg.tensor(j)(t, x, drop_constant=True)


def design_rows(cfg: SieveConfig, t, x):
    """Design rows at times ``t`` and covariate rows ``x`` (shape ... x r)."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float).reshape(t.shape + (cfg.r,))
    parts = []
    if cfg.c0:
        parts.append(_block_columns(cfg, 0, t, None))
    for j in range(1, cfg.r + 1):
        parts.append(_block_columns(cfg, j, t, x[..., j - 1]))
    return np.concatenate(parts, axis=-1)


def build_design(data: RegressionData, cfg: SieveConfig) -> DesignMatrix:
    """Stack ``[W_0 | W_1 | ... | W_r]`` for the observed rows."""
    if data.r != cfg.r:
        raise ConfigurationError(f"data carry {data.r} covariates, configuration expects {cfg.r}")
    p = cfg.n_params
    if data.n <= p:
        raise ConfigurationError(f"underdetermined design: n={data.n} <= {p} parameters")
    return DesignMatrix(design_rows(cfg, data.t, data.x), cfg.block_slices())


@dataclass(frozen=True)
class LeastSquares:
    """QR solution of a full-rank least squares problem."""

    coef: np.ndarray
    r_inv: np.ndarray
    condition_number: float


def least_squares(a, b, what="design") -> LeastSquares:
    """Solve ``min ||a @ coef - b||`` via QR; refuses numerically singular ``a``."""
    a = np.asarray(a, dtype=float)
    if not np.isfinite(a).all():
        # Jacobi families with negative exponents are unbounded at the interval ends
        raise SingularDesignError(f"{what} has non-finite entries", float("inf"))
    q, rmat = np.linalg.qr(a)
    sv = np.linalg.svd(rmat, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    if not sv[-1] > RANK_TOL * sv[0]:
        raise SingularDesignError(f"{what} is numerically rank deficient (condition number {cond:.3g})", cond)
    coef = solve_triangular(rmat, q.T @ b)
    r_inv = solve_triangular(rmat, np.eye(rmat.shape[0]))
    return LeastSquares(coef, r_inv, cond)


@dataclass(frozen=True)
class MeanShifts:
    """Coefficients of the fitted mean shifts, one matrix per covariate.

    ``coef[j-1]`` has shape (shift basis size, number of used state functions);
    column ``l`` gives the time expansion of ``E varphi_l(X_j)``.
    """

    coef: tuple


@dataclass(frozen=True)
class SieveFit:
    """Pilot coefficients, the cached Gram inverse and, once fitted, mean shifts."""

    config: SieveConfig
    beta: np.ndarray
    gram_inv: np.ndarray
    residuals: np.ndarray
    data: RegressionData
    condition_number: float
    mean_shifts: MeanShifts | None = None

    @property
    def n(self) -> int:
        return self.data.n

    def block(self, j: int) -> np.ndarray:
        return self.beta[self.config.block_slices()[j]]

    def theta(self, j: int, t):
        """Fitted mean shifts ``vartheta_j(t)``; shape ``t.shape + (d_used,)``."""
        if self.mean_shifts is None:
            raise NotFittedError("mean shifts have not been fitted")
        return self.config.shift_basis(j)(t) @ self.mean_shifts.coef[j - 1]

    def f_hat(self, j: int, t):
        """``phi_j(t) (x) vartheta_j(t)``; zero when the correction is off."""
        cfg = self.config
        t = np.asarray(t, dtype=float)
        if not cfg.correct:
            return np.zeros(t.shape + (cfg.block_size(j),))
        phi = cfg.tensor(j).time_basis(t)
        th = self.theta(j, t)
        return (phi[..., :, None] * th[..., None, :]).reshape(t.shape + (-1,))

    def r_bar(self, j: int, t, x):
        """Full-length vector ``(0, ..., b_j(t, x) - f_j(t), ..., 0)`` per point."""
        cfg = self.config
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        out = np.zeros(t.shape + (cfg.n_params,))
        sl = cfg.block_slices()[j]
        out[..., sl] = cfg.tensor(j)(t, x, drop_constant=True) - self.f_hat(j, t)
        return out


def fit_pilot(data: RegressionData, cfg: SieveConfig) -> SieveFit:
    """Ordinary least squares pilot fit with the Gram inverse ``(W'W / n)^-1``."""
    design = build_design(data, cfg)
    ls = least_squares(design.matrix, data.y)
    gram_inv = data.n * (ls.r_inv @ ls.r_inv.T)
    resid = data.y - design.matrix @ ls.coef
    return SieveFit(cfg, ls.coef, gram_inv, resid, data, ls.condition_number)


def fit_mean_shifts(fit: SieveFit, data: RegressionData | None = None) -> SieveFit:
    """Regress each used ``varphi_l(X_j)`` on the shift time basis; returns an updated fit."""
    data = fit.data if data is None else data
    cfg = fit.config
    coefs = []
    for j in range(1, cfg.r + 1):
        tb = cfg.tensor(j)
        v = tb.state_basis(data.x[:, j - 1])
        if tb.g == 2:
            v = v[:, 1:]
        ls = least_squares(cfg.shift_basis(j)(data.t), v, what=f"mean-shift design {j}")
        coefs.append(ls.coef.reshape(-1, v.shape[1]))
    return dataclasses.replace(fit, mean_shifts=MeanShifts(tuple(coefs)))


def fit_sieve(data: RegressionData, cfg: SieveConfig) -> SieveFit:
    """Pilot fit followed by the mean-shift fits."""
    return fit_mean_shifts(fit_pilot(data, cfg), data)


def eval_pilot(fit: SieveFit, j: int, t, x=None):
    """Pilot surface ``m*_j`` (``j = 0`` is the intercept and ignores ``x``)."""
    if fit is None or fit.beta is None:
        raise NotFittedError("model is not fitted")
    cfg = fit.config
    t = np.asarray(t, dtype=float)
    if j == 0:
        if not cfg.c0:
            return np.zeros(t.shape)
        return cfg.intercept_basis()(t) @ fit.block(0)
    if x is None:
        raise ConfigurationError("covariate surfaces need x")
    return cfg.tensor(j)(t, x, drop_constant=True) @ fit.block(j)


def eval_chi(fit: SieveFit, j: int, t):
    """Estimated mean of the pilot component ``j`` at time ``t``."""
    return fit.f_hat(j, t) @ fit.block(j)


def eval_corrected(fit: SieveFit, j: int, t, x=None):
    """Identified estimates: intercept gains every ``chi_j``, components lose theirs."""
    if j == 0:
        out = eval_pilot(fit, 0, t)
        for k in range(1, fit.config.r + 1):
            out = out + eval_chi(fit, k, t)
        return out
    return eval_pilot(fit, j, t, x) - eval_chi(fit, j, t)


def eval_total(fit: SieveFit, t, x):
    """Fitted conditional mean ``m_0(t) + sum_j m_j(t, x_j)``; ``x`` has trailing size r."""
    t = np.asarray(t, dtype=float)
    return design_rows(fit.config, t, x) @ fit.beta


def residuals(fit: SieveFit, data: RegressionData | None = None):
    """Residuals against the pilot surfaces."""
    if data is None:
        return fit.residuals
    return data.y - design_rows(fit.config, data.t, data.x) @ fit.beta
