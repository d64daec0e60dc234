"""Power of the unified test at a fixed alternative, and minimum sample size."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from supnoninf.error_rates import ThetaConfig, mc_rejection_rate
from supnoninf.exceptions import InvalidParameterError, UnreachableTargetError
from supnoninf.mvt import AccuracyReport, as_correlation, orthant_prob
from supnoninf.solver import SolverConfig, solve_adjusted_alpha
from supnoninf.trial import DF_MODES, MarginSpec

SCALES = ("sd_units", "outcome")
MAX_N = 10**6


@dataclass(frozen=True)
class PowerSpec:
    """Design for a two-arm trial with known standard deviations.

    With ``scale == "sd_units"`` the effects ``theta1`` and the margins are
    multiples of ``sd``; with ``"outcome"`` they are in outcome units.
    """

    theta1: np.ndarray
    sd: np.ndarray
    margins: MarginSpec
    R: object
    n_trt: int = 100
    n_ctl: int = 100
    alpha: float = 0.05
    p: int = 1
    scale: str = "sd_units"
    df_mode: str = "per_endpoint"
    mc_reps: int = 200_000
    seed: int = 0

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta1, dtype=float))
        sd = np.atleast_1d(np.asarray(self.sd, dtype=float))
        m = self.margins.dim
        if sd.size == 1 and m > 1:
            sd = np.full(m, sd[0])
        if theta.shape != (m,) or sd.shape != (m,):
            raise InvalidParameterError("theta1, sd and margins must have the same length")
        if np.any(~(sd > 0)):
            raise InvalidParameterError("standard deviations must be positive")
        if np.any(np.isnan(theta)):
            raise InvalidParameterError("theta1 contains NaN")
        for name in ("n_trt", "n_ctl"):
            n = getattr(self, name)
            if int(n) != n or n < 2:
                raise InvalidParameterError(f"{name} must be an integer >= 2")
        if not 0 < self.alpha < 1:
            raise InvalidParameterError("alpha must lie in (0, 1)")
        if int(self.p) != self.p or not 1 <= self.p <= m:
            raise InvalidParameterError(f"p must be an integer in [1, {m}]")
        if self.scale not in SCALES:
            raise InvalidParameterError(f"scale must be one of {SCALES}")
        if self.df_mode not in DF_MODES:
            raise InvalidParameterError(f"df_mode must be one of {DF_MODES}")
        object.__setattr__(self, "theta1", theta)
        object.__setattr__(self, "sd", sd)
        object.__setattr__(self, "R", as_correlation(self.R, m))

    @property
    def m(self) -> int:
        return self.margins.dim

    @property
    def df(self) -> float:
        d = self.n_trt + self.n_ctl - 2
        return float(d * self.m if self.df_mode == "multiplied" else d)

    def std_errors(self) -> np.ndarray:
        unit = np.ones(self.m) if self.scale == "sd_units" else self.sd
        return unit * math.sqrt(1.0 / self.n_trt + 1.0 / self.n_ctl)

    def standardized(self) -> tuple[np.ndarray, np.ndarray]:
        """``(c, eta_std)``: combined margins and non-inferiority shifts in SE units."""
        se = self.std_errors()
        c = (self.margins.epsilon + self.margins.eta) / se
        with np.errstate(invalid="ignore"):
            shift = (self.margins.eta + self.theta1) / se
        return c, shift


@dataclass(frozen=True)
class PowerResult:
    power: float
    method: str
    alpha_prime: float
    critical_value: float
    df: float
    n_trt: int
    n_ctl: int
    std_error: float = 0.0
    abs_error: float = 0.0
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "power": self.power,
            "method": self.method,
            "alpha_prime": self.alpha_prime,
            "critical_value": self.critical_value,
            "df": self.df,
            "n_trt": self.n_trt,
            "n_ctl": self.n_ctl,
            "std_error": self.std_error,
            "abs_error": self.abs_error,
            **self.details,
        }


def success_probability(shift, c, crit, R, d, *, report: AccuracyReport | None = None, seed: int = 0) -> float:
    """P(non-inferior on all and superior on at least one) for shifted statistics.

    ``P(T_k > t - shift_k for all k) - P(t - shift_k < T_k <= t - shift_k + c_k for all k)``.
    """
    shift = np.asarray(shift, dtype=float)
    c = np.asarray(c, dtype=float)
    lower = crit - shift
    if np.any(lower == np.inf):
        return 0.0
    lower = np.where(np.isnan(lower), -np.inf, lower)
    rep = report if report is not None else AccuracyReport()
    all_ni = orthant_prob(lower, R, d, seed=seed, report=rep)
    none_sup = orthant_prob(lower, R, d, upper=lower + c, seed=seed, report=rep)
    return min(max(all_ni - none_sup, 0.0), 1.0)


def analytic_power(spec: PowerSpec, *, solver_cfg: SolverConfig | None = None) -> PowerResult:
    """Power at ``spec.theta1`` with the adjusted level solved for this design.

    For ``p > 1`` no closed form is used; a seeded Monte Carlo estimate is
    returned with its standard error and ``method == "monte_carlo"``.
    """
    c, shift = spec.standardized()
    d = spec.df
    cfg = solver_cfg or SolverConfig(alpha=spec.alpha, p=spec.p, seed=spec.seed)
    if cfg.alpha != spec.alpha or cfg.p != spec.p:
        cfg = replace(cfg, alpha=spec.alpha, p=spec.p)
    sol = solve_adjusted_alpha(spec.m, c, spec.R, d, cfg)
    common = dict(alpha_prime=sol.alpha_prime, critical_value=sol.critical_value, df=d,
                  n_trt=spec.n_trt, n_ctl=spec.n_ctl)
    if spec.p == 1:
        report = AccuracyReport()
        pw = success_probability(shift, c, sol.critical_value, spec.R, d, report=report, seed=spec.seed)
        return PowerResult(pw, "analytic", abs_error=report.total_abs_error, **common)
    cfg_theta = ThetaConfig(np.where(np.isnan(shift), -np.inf, shift))
    mc = mc_rejection_rate(cfg_theta, c, sol.alpha_prime, spec.R, d, p=spec.p, reps=spec.mc_reps, seed=spec.seed)
    return PowerResult(mc.rate, "monte_carlo", std_error=mc.std_error, details={"mc_reps": mc.reps}, **common)


def _sizes(n: int, ratio: float) -> tuple[int, int]:
    return n, max(2, int(math.ceil(ratio * n - 1e-9)))


def min_sample_size(spec: PowerSpec, target_power: float, allocation_ratio: float = 1.0,
                    *, n_min: int = 2, n_max: int = MAX_N) -> PowerResult:
    """Smallest treatment-arm size (control = ceil(ratio * n)) reaching ``target_power``.

    The adjusted level is re-solved at every candidate since both the
    standardized margins and the degrees of freedom move with n.  Doubling
    brackets the answer, then integer bisection narrows it.
    """
    if not 0 < target_power < 1:
        raise InvalidParameterError("target_power must lie in (0, 1)")
    if not allocation_ratio > 0:
        raise InvalidParameterError("allocation_ratio must be positive")

    cache: dict[int, PowerResult] = {}

    def power_at(n):
        if n not in cache:
            n1, n2 = _sizes(n, allocation_ratio)
            cache[n] = analytic_power(replace(spec, n_trt=n1, n_ctl=n2))
        return cache[n]

    lo = n_min
    if power_at(lo).power >= target_power:
        return power_at(lo)
    hi = lo
    while power_at(hi).power < target_power:
        lo = hi
        if hi >= n_max:
            raise UnreachableTargetError(
                f"power {power_at(hi).power:.4f} at n = {hi} is still below {target_power}"
            )
        hi = min(2 * hi, n_max)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if power_at(mid).power >= target_power:
            hi = mid
        else:
            lo = mid
    return power_at(hi)
