"""Univariate and central multivariate t probabilities.

Two integration routes are provided:

* :func:`mvt_rect_prob` handles an arbitrary correlation matrix with the
  separation-of-variables transform integrated by randomly scrambled Sobol'
  points; the spread over independent scramblings gives the error estimate.
* :func:`mvt_exch_tail_prob` (and :func:`mvt_exch_rect_prob`) exploit the
  one-factor structure of an exchangeable matrix with nonnegative
  correlation and integrate deterministically over the shared normal factor
  and the chi variate.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special
from scipy.stats import qmc

from supnoninf import kernels
from supnoninf.exceptions import AccuracyNotReachedError, InvalidParameterError

Method = Literal["quadrature", "qmc", "closed_form"]

PSD_TOL = 1e-10
DEFAULT_TARGET_ABS_ERR = 1e-6
EXCH_ABS_ERR = 1e-7


def _check_df(d) -> float:
    d = float(d)
    if not d > 0.0:
        raise InvalidParameterError(f"degrees of freedom must be positive, got {d}")
    return d


def t_tail(a, d):
    """Upper tail ``P(T > a)`` of a central t variate with ``d`` degrees of freedom.

    ``d = inf`` gives the standard normal tail.  Accepts scalars or arrays.
    """
    d = _check_df(d)
    a = np.asarray(a, dtype=float)
    if math.isinf(d):
        out = special.ndtr(-a)
    else:
        out = special.stdtr(d, -a)
    return out if out.ndim else float(out)


def t_cdf(a, d):
    d = _check_df(d)
    a = np.asarray(a, dtype=float)
    out = special.ndtr(a) if math.isinf(d) else special.stdtr(d, a)
    return out if out.ndim else float(out)


def t_quantile(p, d):
    """Upper quantile: the ``a`` with ``t_tail(a, d) == p``."""
    d = _check_df(d)
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise InvalidParameterError(f"tail probability must lie in (0, 1), got {p}")
    if math.isinf(d):
        out = -special.ndtri(p)
    else:
        out = -special.stdtrit(d, p)
    out = np.where(p == 0.5, 0.0, out)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Symmetric, unit-diagonal, positive semidefinite matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=float)
        if mat.ndim == 0:
            mat = mat.reshape(1, 1)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] < 1:
            raise InvalidParameterError("correlation matrix must be square and non-empty")
        if not np.all(np.isfinite(mat)):
            raise InvalidParameterError("correlation matrix has non-finite entries")
        if not np.allclose(mat, mat.T, atol=1e-12, rtol=0):
            raise InvalidParameterError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(mat), 1.0, atol=1e-12, rtol=0):
            raise InvalidParameterError("correlation matrix must have a unit diagonal")
        if np.any(np.abs(mat) > 1.0 + 1e-12):
            raise InvalidParameterError("correlations must lie in [-1, 1]")
        mat = 0.5 * (mat + mat.T)
        if np.linalg.eigvalsh(mat)[0] < -PSD_TOL:
            raise InvalidParameterError("correlation matrix is not positive semidefinite")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def identity(cls, m: int) -> "CorrelationMatrix":
        return cls(np.eye(m))

    @classmethod
    def exchangeable(cls, m: int, rho: float) -> "CorrelationMatrix":
        mat = np.full((m, m), float(rho))
        np.fill_diagonal(mat, 1.0)
        return cls(mat)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def common_rho(self) -> float | None:
        """Shared off-diagonal value, or None when the matrix is not exchangeable."""
        if self.dim == 1:
            return 0.0
        off = self.matrix[~np.eye(self.dim, dtype=bool)]
        if np.ptp(off) <= 1e-12:
            return float(off.mean())
        return None

    def submatrix(self, idx) -> "CorrelationMatrix":
        idx = np.asarray(idx, dtype=int)
        return CorrelationMatrix(self.matrix[np.ix_(idx, idx)])

    def __eq__(self, other):
        return isinstance(other, CorrelationMatrix) and np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash(self.matrix.tobytes())


def as_correlation(R, m: int | None = None) -> CorrelationMatrix:
    """Accept a :class:`CorrelationMatrix`, an array, or a scalar exchangeable rho."""
    if isinstance(R, CorrelationMatrix):
        out = R
    elif np.ndim(R) == 0:
        if m is None:
            raise InvalidParameterError("a scalar correlation needs the dimension m")
        out = CorrelationMatrix.exchangeable(m, float(R))
    else:
        out = CorrelationMatrix(np.asarray(R, dtype=float))
    if m is not None and out.dim != m:
        raise InvalidParameterError(f"correlation matrix has dimension {out.dim}, expected {m}")
    return out


@dataclass(frozen=True)
class Rectangle:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InvalidParameterError("rectangle bounds must be vectors of equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise InvalidParameterError("rectangle bounds must not be NaN")
        if np.any(lo > hi):
            raise InvalidParameterError("rectangle lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def upper_orthant(cls, bounds) -> "Rectangle":
        bounds = np.atleast_1d(np.asarray(bounds, dtype=float))
        return cls(bounds, np.full_like(bounds, np.inf))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


@dataclass(frozen=True)
class ProbEstimate:
    value: float
    abs_error: float
    method: Method
    n_evals: int = 0

    def __float__(self):
        return float(self.value)


@dataclass
class AccuracyReport:
    """Running summary of the kernel calls made on behalf of one computation."""

    n_calls: int = 0
    max_abs_error: float = 0.0
    total_abs_error: float = 0.0
    n_evals: int = 0
    methods: Counter = field(default_factory=Counter)

    def record(self, est: ProbEstimate, weight: float = 1.0) -> None:
        self.n_calls += 1
        err = abs(weight) * est.abs_error
        self.max_abs_error = max(self.max_abs_error, err)
        self.total_abs_error += err
        self.n_evals += est.n_evals
        self.methods[est.method] += 1

    def as_dict(self) -> dict:
        return {
            "n_calls": self.n_calls,
            "max_abs_error": self.max_abs_error,
            "total_abs_error": self.total_abs_error,
            "n_evals": self.n_evals,
            "methods": dict(self.methods),
        }


# --------------------------------------------------------------------------
# general correlation: randomized QMC over the separation-of-variables form
# --------------------------------------------------------------------------

def _cholesky_psd(mat: np.ndarray) -> np.ndarray:
    jitter = 0.0
    eye = np.eye(mat.shape[0])
    for _ in range(6):
        try:
            L = np.linalg.cholesky(mat + jitter * eye)
            break
        except np.linalg.LinAlgError:
            jitter = 1e-13 if jitter == 0.0 else jitter * 10.0
    else:  # pragma: no cover - guarded by the PSD check
        raise InvalidParameterError("correlation matrix could not be factorised")
    # rescale so the implied correlation keeps a unit diagonal
    return L / np.sqrt(np.sum(L * L, axis=1))[:, None]


def _chi_scale(u: np.ndarray, d: float) -> np.ndarray:
    """``sqrt(chi2_d / d)`` at probability levels ``u`` (lower tail)."""
    half = 0.5 * d
    lower = u <= 0.5
    x = np.empty_like(u)
    x[lower] = special.gammaincinv(half, u[lower])
    x[~lower] = special.gammainccinv(half, 1.0 - u[~lower])
    return np.sqrt(x / half)


def mvt_rect_prob(
    rect: Rectangle,
    R,
    d: float,
    target_abs_err: float = DEFAULT_TARGET_ABS_ERR,
    seed: int = 0,
    randomizations: int = 16,
    max_evals: int = 2**26,
) -> ProbEstimate:
    """``P(lower < T < upper)`` for a central multivariate t.

    The reported ``abs_error`` is 3.5 standard errors of the mean over
    ``randomizations`` independently scrambled Sobol' point sets (each with
    antithetic pairing).  Results are a deterministic function of ``seed``.

    Raises
    ------
    AccuracyNotReachedError
        When ``max_evals`` integrand evaluations do not bring the error
        estimate under ``target_abs_err``.
    """
    if not isinstance(rect, Rectangle):
        rect = Rectangle(*rect)
    R = as_correlation(R, rect.dim)
    d = _check_df(d)
    if not target_abs_err > 0:
        raise InvalidParameterError("target_abs_err must be positive")
    if randomizations < 2:
        raise InvalidParameterError("at least two randomizations are needed for an error estimate")

    lower, upper = rect.lower, rect.upper
    if np.any(lower == upper) or np.any(lower == np.inf) or np.any(upper == -np.inf):
        return ProbEstimate(0.0, 0.0, "closed_form")
    keep = ~(np.isneginf(lower) & np.isposinf(upper))
    if not keep.any():
        return ProbEstimate(1.0, 0.0, "closed_form")
    lower, upper = lower[keep], upper[keep]
    mat = R.matrix[np.ix_(keep, keep)]
    m = lower.shape[0]
    if m == 1:
        val = t_tail(lower[0], d) - t_tail(upper[0], d)
        return ProbEstimate(float(min(max(val, 0.0), 1.0)), 1e-15, "closed_form")

    # integrate the least likely coordinates first
    marg = np.asarray(t_tail(lower, d)) - np.asarray(t_tail(upper, d))
    order = np.argsort(marg, kind="stable")
    lower, upper = lower[order], upper[order]
    L = _cholesky_psd(mat[np.ix_(order, order)])

    with_chi = not math.isinf(d)
    dim = m - 1 + int(with_chi)
    children = np.random.SeedSequence(seed).spawn(randomizations)
    log2n = 10
    n_evals = 0
    while True:
        means = np.empty(randomizations)
        for r, child in enumerate(children):
            pts = qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(child)).random_base2(log2n)
            vals = 0.0
            for u in (pts, 1.0 - pts):
                if with_chi:
                    s = _chi_scale(np.clip(u[:, -1], 1e-300, 1.0 - 1e-16), d)
                    w = u[:, :-1]
                else:
                    s = np.ones(u.shape[0])
                    w = u
                vals = vals + kernels.sov_integrand(lower, upper, L, s, w)
            means[r] = 0.5 * vals.mean()
            n_evals += 2 * pts.shape[0]
        value = float(means.mean())
        err = 3.5 * float(means.std(ddof=1)) / math.sqrt(randomizations)
        est = ProbEstimate(min(max(value, 0.0), 1.0), err, "qmc", n_evals)
        if err <= target_abs_err:
            return est
        next_cost = 2 * randomizations * 2 ** (log2n + 1)
        if n_evals + next_cost > max_evals:
            raise AccuracyNotReachedError(
                f"QMC error {err:.3g} above target {target_abs_err:.3g} after {n_evals} evaluations", est
            )
        log2n += 1


# --------------------------------------------------------------------------
# exchangeable correlation: one-factor quadrature
# --------------------------------------------------------------------------

_Z_HALF_WIDTH = 9.0
_GL_NODES, _GL_WEIGHTS = leggauss(12)


def _z_rule(rho: float):
    if rho == 0.0:
        return np.zeros(1), np.ones(1)
    scale = math.sqrt((1.0 - rho) / rho)
    width = min(1.0, scale)
    panels = int(math.ceil(2 * _Z_HALF_WIDTH / width))
    edges = np.linspace(-_Z_HALF_WIDTH, _Z_HALF_WIDTH, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    z = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel() * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    return z, w


def _chi_rule(d: float, step: float, half_range: float = 3.6):
    """Tanh-sinh nodes for the chi scale: ``(s, weight, k)`` with node ``x = k * step``."""
    if math.isinf(d):
        return np.ones(1), np.ones(1), np.zeros(1, dtype=int)
    n_half = int(round(half_range / step))
    k = np.arange(-n_half, n_half + 1)
    x = k * step
    arg = 0.5 * math.pi * np.sinh(x)
    # u = (1 + tanh(arg)) / 2 and its complement, both without cancellation
    u = 1.0 / (1.0 + np.exp(-2.0 * arg))
    v = 1.0 / (1.0 + np.exp(2.0 * arg))
    w = step * 0.5 * math.pi * np.cosh(x) / (2.0 * np.cosh(arg) ** 2)
    half = 0.5 * d
    with np.errstate(all="ignore"):
        xq = np.where(u <= 0.5, special.gammaincinv(half, u), special.gammainccinv(half, v))
        s = np.sqrt(xq / half)
    good = (u > 0.0) & (v > 0.0) & (w > 0.0) & np.isfinite(s) & (s > 0)
    return s[good], w[good], k[good]


def _exch_quadrature(lower, upper, rho, d):
    z, wz = _z_rule(rho)
    if math.isinf(d):
        inner = kernels.onefactor_inner(lower, upper, rho, np.ones(1), z, wz)
        return float(inner[0]), 1e-13, z.size
    step = 1.0 / 16.0
    s, ws, k = _chi_rule(d, step)
    inner = kernels.onefactor_inner(lower, upper, rho, s, z, wz)
    fine = float(inner @ ws)
    even = k % 2 == 0
    coarse = float(inner[even] @ (2.0 * ws[even]))
    err = abs(fine - coarse) + 1e-13
    evals = s.size * z.size
    if err > EXCH_ABS_ERR:
        s2, ws2, _ = _chi_rule(d, step / 4.0, half_range=4.2)
        inner2 = kernels.onefactor_inner(lower, upper, rho, s2, z, wz)
        finer = float(inner2 @ ws2)
        err = abs(finer - fine) + 1e-13
        fine = finer
        evals += s2.size * z.size
    return fine, err, evals


def mvt_exch_rect_prob(lower, upper, rho: float, d: float) -> ProbEstimate:
    """``P(lower < T <= upper)`` under exchangeable correlation ``rho``."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    rect = Rectangle(lower, upper)
    d = _check_df(d)
    m = rect.dim
    rho = float(rho)
    lo_lim = -1.0 / (m - 1) if m > 1 else -1.0
    if rho < lo_lim - 1e-12 or rho > 1.0 + 1e-12:
        raise InvalidParameterError(f"exchangeable rho={rho} is not a valid correlation for m={m}")
    if np.any(lower == upper) or np.any(lower == np.inf) or np.any(upper == -np.inf):
        return ProbEstimate(0.0, 0.0, "closed_form")
    if m == 1:
        val = t_tail(lower[0], d) - t_tail(upper[0], d)
        return ProbEstimate(float(max(val, 0.0)), 1e-15, "closed_form")
    if rho < 0.0:
        return mvt_rect_prob(rect, CorrelationMatrix.exchangeable(m, rho), d, target_abs_err=EXCH_ABS_ERR)
    if rho >= 1.0 - 1e-12:
        lo, hi = float(lower.max()), float(upper.min())
        val = t_tail(lo, d) - t_tail(hi, d) if lo < hi else 0.0
        return ProbEstimate(float(max(val, 0.0)), 1e-15, "closed_form")
    value, err, evals = _exch_quadrature(lower, upper, rho, d)
    return ProbEstimate(min(max(value, 0.0), 1.0), err, "quadrature", evals)


def mvt_exch_tail_prob(bounds: Sequence[float], rho: float, d: float) -> ProbEstimate:
    """``P(T_k > bounds[k] for all k)`` under exchangeable correlation ``rho``.

    Negative ``rho`` has no one-factor representation and is routed to
    :func:`mvt_rect_prob` (visible as ``method == "qmc"``).
    """
    bounds = np.atleast_1d(np.asarray(bounds, dtype=float))
    return mvt_exch_rect_prob(bounds, np.full_like(bounds, np.inf), rho, d)


def orthant_prob(lower, R: CorrelationMatrix, d: float, upper=None, target_abs_err=DEFAULT_TARGET_ABS_ERR,
                 seed: int = 0, report: AccuracyReport | None = None) -> float:
    """Rectangle probability routed to the fastest applicable engine."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.full_like(lower, np.inf) if upper is None else np.atleast_1d(np.asarray(upper, dtype=float))
    rho = R.common_rho
    if rho is not None and rho >= 0.0:
        est = mvt_exch_rect_prob(lower, upper, rho, d)
    else:
        est = mvt_rect_prob(Rectangle(lower, upper), R, d, target_abs_err=target_abs_err, seed=seed)
    if report is not None:
        report.record(est)
    return est.value
