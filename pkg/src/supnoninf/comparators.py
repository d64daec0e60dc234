"""Competing procedures for superiority on one endpoint plus non-inferiority on all.

* ``tl_test``: max-t superiority test gated by the non-inferiority IU test, with
  the max-t critical value calibrated by bootstrap conditional on the gate.
* ``blt_test``: one-sided Hotelling-type statistic (unequal covariances)
  times the non-inferiority gate, bootstrap calibrated.
* ``pw_test``: one-sided likelihood-ratio statistic (distance to the
  non-positive orthant) against a chi-square-ratio mixture critical value,
  plus the non-inferiority gate.

Bootstrap resampling is within group and the resampled statistics are pivots
``(mean difference* - mean difference) / SE*``, which places the resampled
effects exactly at the superiority boundary ``theta = epsilon``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from supnoninf import kernels
from supnoninf.exceptions import BracketError, InvalidParameterError, NumericalError
from supnoninf.mvt import t_quantile
from supnoninf.trial import MarginSpec

MAX_REDRAWS = 10
RIDGE = 1e-8
CALIBRATIONS = ("joint", "marginal")


class Method(str, enum.Enum):
    CCZQ = "CCZQ"
    TL = "TL"
    BLT = "BLT"
    PW = "PW"


@dataclass(frozen=True)
class ComparatorDecision:
    method: Method
    reject_h0: bool
    statistics: dict
    critical_values: dict
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TwoGroupSample:
    x_trt: np.ndarray
    x_ctl: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.x_trt, dtype=float))
        b = np.atleast_2d(np.asarray(self.x_ctl, dtype=float))
        if a.shape[1] != b.shape[1]:
            raise InvalidParameterError("groups have different numbers of endpoints")
        if a.shape[0] < 2 or b.shape[0] < 2:
            raise InvalidParameterError("each group needs at least two subjects")
        object.__setattr__(self, "x_trt", np.ascontiguousarray(a))
        object.__setattr__(self, "x_ctl", np.ascontiguousarray(b))

    @property
    def n1(self) -> int:
        return self.x_trt.shape[0]

    @property
    def n2(self) -> int:
        return self.x_ctl.shape[0]

    @property
    def m(self) -> int:
        return self.x_trt.shape[1]

    @property
    def df(self) -> float:
        return float(self.n1 + self.n2 - 2)


@dataclass(frozen=True)
class SampleStats:
    delta: np.ndarray
    se: np.ndarray
    cov_trt: np.ndarray
    cov_ctl: np.ndarray
    t_sup: np.ndarray
    t_ni: np.ndarray


def sample_stats(sample: TwoGroupSample, margins: MarginSpec) -> SampleStats:
    if margins.dim != sample.m:
        raise InvalidParameterError("margins do not match the number of endpoints")
    n1, n2 = sample.n1, sample.n2
    s1 = np.cov(sample.x_trt, rowvar=False).reshape(sample.m, sample.m)
    s2 = np.cov(sample.x_ctl, rowvar=False).reshape(sample.m, sample.m)
    delta = sample.x_trt.mean(axis=0) - sample.x_ctl.mean(axis=0)
    pooled = ((n1 - 1) * np.diag(s1) + (n2 - 1) * np.diag(s2)) / (n1 + n2 - 2)
    se = np.sqrt(pooled * (1.0 / n1 + 1.0 / n2))
    if np.any(se <= 0.0):
        raise InvalidParameterError("an endpoint has zero variance in both groups")
    t_sup = (delta - margins.epsilon) / se
    return SampleStats(delta, se, s1, s2, t_sup, t_sup + (margins.epsilon + margins.eta) / se)


@dataclass(frozen=True)
class BootDraws:
    """Resampled pivots shared by the bootstrap procedures."""

    tstar: np.ndarray
    sestar: np.ndarray
    t2: np.ndarray
    ridged: int
    redraws: int


def bootstrap_draws(sample: TwoGroupSample, centre, boot_reps: int, rng: np.random.Generator) -> BootDraws:
    """Within-group resamples; rows with a zero SE are redrawn up to ``MAX_REDRAWS`` times."""
    if boot_reps < 1:
        raise InvalidParameterError("boot_reps must be positive")
    n1, n2 = sample.n1, sample.n2
    idx1 = rng.integers(0, n1, size=(boot_reps, n1))
    idx2 = rng.integers(0, n2, size=(boot_reps, n2))
    tstar, sestar, t2, ridged = kernels.boot_stats(sample.x_trt, sample.x_ctl, idx1, idx2, centre, RIDGE)
    redraws = 0
    bad = np.flatnonzero(np.isnan(tstar).any(axis=1) | np.isnan(t2))
    for _ in range(MAX_REDRAWS):
        if bad.size == 0:
            break
        redraws += bad.size
        j1 = rng.integers(0, n1, size=(bad.size, n1))
        j2 = rng.integers(0, n2, size=(bad.size, n2))
        ts, ss, tt, rr = kernels.boot_stats(sample.x_trt, sample.x_ctl, j1, j2, centre, RIDGE)
        tstar[bad], sestar[bad], t2[bad], ridged[bad] = ts, ss, tt, rr
        bad = bad[np.isnan(ts).any(axis=1) | np.isnan(tt)]
    if bad.size:
        raise NumericalError(f"{bad.size} bootstrap resamples stayed degenerate after {MAX_REDRAWS} redraws")
    return BootDraws(tstar, sestar, t2, int(ridged.sum()), redraws)


def _upper_quantile(values: np.ndarray, alpha: float) -> float:
    """Empirical (1 - alpha) quantile as an order statistic, so -inf entries survive."""
    return float(np.quantile(values, 1.0 - alpha, method="inverted_cdf"))


def _check_calibration(calibration):
    if calibration not in CALIBRATIONS:
        raise InvalidParameterError(f"calibration must be one of {CALIBRATIONS}")


def _draws_for(sample, st, boot_reps, seed, draws):
    if draws is not None:
        return draws
    return bootstrap_draws(sample, st.delta, boot_reps, np.random.default_rng(seed))


def tl_test(sample: TwoGroupSample, margins: MarginSpec, alpha: float = 0.05, boot_reps: int = 1000,
            seed: int = 0, *, draws: BootDraws | None = None,
            stats: SampleStats | None = None, calibration: str = "joint") -> ComparatorDecision:
    """Reject iff ``min t_NI > d3`` and ``max t_S > d4``, with ``d3 = t_{d, alpha}``.

    With ``calibration="joint"`` ``d4`` is the bootstrap (1 - alpha) quantile of
    ``max T*`` where resamples failing the gate ``min(T* + c*) > d3`` count as
    never exceeding it, so the joint event has resampled probability ``alpha``.
    ``"marginal"`` ignores the gate when calibrating ``d4``.
    """
    _check_calibration(calibration)
    st = stats or sample_stats(sample, margins)
    d3 = t_quantile(alpha, sample.df)
    bd = _draws_for(sample, st, boot_reps, seed, draws)
    cstar = (margins.epsilon + margins.eta) / bd.sestar
    gate = np.min(bd.tstar + cstar, axis=1) > d3
    if calibration == "marginal":
        gate = np.ones_like(gate)
    d4 = _upper_quantile(np.where(gate, bd.tstar.max(axis=1), -np.inf), alpha)
    reject = bool(st.t_ni.min() > d3 and st.t_sup.max() > d4)
    return ComparatorDecision(
        Method.TL, reject,
        {"max_t_sup": float(st.t_sup.max()), "min_t_ni": float(st.t_ni.min())},
        {"d3": d3, "d4": d4},
        {"boot_reps": bd.tstar.shape[0], "redraws": bd.redraws, "gate_rate": float(gate.mean())},
    )


def _t2_statistic(st: SampleStats, margins, n1, n2):
    diff = st.delta - margins.epsilon
    V = st.cov_trt / n1 + st.cov_ctl / n2
    ridged = False
    try:
        L = np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        V = V + RIDGE * np.trace(V) / V.shape[0] * np.eye(V.shape[0])
        L = np.linalg.cholesky(V)
        ridged = True
    z = np.linalg.solve(L, diff)
    return float(z @ z), ridged


def blt_test(sample: TwoGroupSample, margins: MarginSpec, alpha: float = 0.05, boot_reps: int = 1000,
             seed: int = 0, *, draws: BootDraws | None = None,
             stats: SampleStats | None = None, calibration: str = "joint") -> ComparatorDecision:
    """Reject iff ``T^2 * I(max t_S > 0) * I(min t_NI > t_{d, alpha}) > d1``.

    ``T^2`` uses the unequal-covariance form ``S1/n1 + S2/n2``; ``d1`` is the
    bootstrap (1 - alpha) quantile of the same gated statistic, or of
    ``T^2* I(max T* > 0)`` alone when ``calibration="marginal"``.
    """
    _check_calibration(calibration)
    st = stats or sample_stats(sample, margins)
    crit = t_quantile(alpha, sample.df)
    t2, ridged = _t2_statistic(st, margins, sample.n1, sample.n2)
    gated = t2 * float(st.t_sup.max() > 0.0) * float(st.t_ni.min() > crit)
    bd = _draws_for(sample, st, boot_reps, seed, draws)
    cstar = (margins.epsilon + margins.eta) / bd.sestar
    gate = bd.tstar.max(axis=1) > 0.0
    if calibration == "joint":
        gate &= np.min(bd.tstar + cstar, axis=1) > crit
    d1 = _upper_quantile(np.where(gate, bd.t2, 0.0), alpha)
    return ComparatorDecision(
        Method.BLT, bool(gated > d1),
        {"t2": t2, "gated_t2": gated, "min_t_ni": float(st.t_ni.min())},
        {"d1": d1, "ni": crit},
        {"boot_reps": bd.tstar.shape[0], "redraws": bd.redraws, "ridged": ridged,
         "boot_ridged": bd.ridged},
    )


def _ratio_tail(a: int, b: int, x: float) -> float:
    """``P(chi2_a / chi2_b > x)`` through the F distribution."""
    if a == 0:
        return 0.0
    return float(stats.f.sf(x * b / a, a, b))


def pw_mixture(x: float, m: int, N: int) -> float:
    return 0.5 * _ratio_tail(m - 1, N - m, x) + 0.5 * _ratio_tail(m, N - m - 1, x)


def pw_critical_value(m: int, N: int, alpha: float) -> float:
    """``d2`` solving the half/half chi-square-ratio mixture equation at level ``alpha``."""
    if not 0 < alpha < 0.5:
        raise InvalidParameterError("alpha must lie in (0, 0.5)")
    if m < 1 or N - m - 1 < 1:
        raise InvalidParameterError("need m >= 1 and n1 + n2 - m - 1 >= 1")
    g = lambda x: pw_mixture(x, m, N) - alpha
    trace = [(0.0, g(0.0))]
    hi = 1.0
    while g(hi) > 0:
        trace.append((hi, g(hi)))
        hi *= 2.0
        if hi > 1e12:
            raise BracketError("could not bracket the mixture root", trace)
    try:
        return optimize.brentq(g, 0.0, hi, xtol=1e-14, rtol=1e-14, maxiter=500)
    except (ValueError, RuntimeError) as exc:
        raise BracketError(f"root finding failed: {exc}", trace) from None


def pw_u2(sample: TwoGroupSample, margins: MarginSpec) -> float:
    """``h * min_{theta <= 0} (D - theta)' A^{-1} (D - theta)`` with ``D = mean diff - epsilon``.

    ``A`` is the pooled within-group sum-of-squares-and-products matrix and
    ``h = 1 / (1/n1 + 1/n2)``.
    """
    st = sample_stats(sample, margins)
    return _u2(st, margins, sample.n1, sample.n2)


def _u2(st, margins, n1, n2):
    A = (n1 - 1) * st.cov_trt + (n2 - 1) * st.cov_ctl
    h = 1.0 / (1.0 / n1 + 1.0 / n2)
    W = h * np.linalg.inv(A)
    return float(kernels.orthant_dist2((st.delta - margins.epsilon)[None, :], W)[0])


def pw_test(sample: TwoGroupSample, margins: MarginSpec, alpha: float = 0.05,
            *, d2: float | None = None, stats: SampleStats | None = None) -> ComparatorDecision:
    st = stats or sample_stats(sample, margins)
    m, N = sample.m, sample.n1 + sample.n2
    if m > N - 2:
        raise InvalidParameterError("more endpoints than residual degrees of freedom")
    crit = t_quantile(alpha, sample.df)
    d2 = pw_critical_value(m, N, alpha) if d2 is None else d2
    u2 = _u2(st, margins, sample.n1, sample.n2)
    reject = bool(u2 > d2 and st.t_ni.min() > crit)
    return ComparatorDecision(Method.PW, reject, {"u2": u2, "min_t_ni": float(st.t_ni.min())},
                              {"d2": d2, "ni": crit})


def cczq_test(sample: TwoGroupSample, margins: MarginSpec, critical_value: float, p: int = 1,
              *, stats: SampleStats | None = None) -> ComparatorDecision:
    """The unified rule at a pre-solved critical value (sample-estimated SEs)."""
    st = stats or sample_stats(sample, margins)
    n_sup = int(np.sum(st.t_sup > critical_value))
    reject = bool(np.all(st.t_ni > critical_value) and n_sup >= p)
    return ComparatorDecision(Method.CCZQ, reject,
                              {"max_t_sup": float(st.t_sup.max()), "min_t_ni": float(st.t_ni.min())},
                              {"critical_value": critical_value})
