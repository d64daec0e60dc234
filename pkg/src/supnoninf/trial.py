"""Trial-level analysis: statistics, per-endpoint decisions and simultaneous lower limits."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from supnoninf.exceptions import InvalidParameterError
from supnoninf.mvt import CorrelationMatrix, as_correlation, t_quantile
from supnoninf.solver import AdjustedAlpha, SolverConfig, solve_adjusted_alpha


class Direction(str, enum.Enum):
    HIGHER = "higher_is_better"
    LOWER = "lower_is_better"


class Decision(str, enum.Enum):
    SUPERIOR = "superior"
    NONINFERIOR_ONLY = "noninferior_only"
    FAIL = "fail"


SE_MODES = ("pooled", "unpooled")
DF_MODES = ("per_endpoint", "multiplied")
CORRELATION_SOURCES = ("pooled_matrix", "supplied_matrix", "rho0_exchangeable")


def _nonneg(name, value):
    if value is None:
        return None
    value = float(value)
    if not value >= 0.0:
        raise InvalidParameterError(f"{name} must be nonnegative, got {value}")
    return value


@dataclass(frozen=True)
class EndpointSummary:
    mean_trt: float
    mean_ctl: float
    n_trt: int
    n_ctl: int
    var_trt: float | None = None
    var_ctl: float | None = None
    pooled_sd: float | None = None
    direction: Direction = Direction.HIGHER
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        for attr in ("var_trt", "var_ctl", "pooled_sd"):
            object.__setattr__(self, attr, _nonneg(attr, getattr(self, attr)))
        for attr in ("n_trt", "n_ctl"):
            n = getattr(self, attr)
            if int(n) != n or n < 2:
                raise InvalidParameterError(f"{attr} must be an integer >= 2, got {n}")
            object.__setattr__(self, attr, int(n))
        if (self.var_trt is None) != (self.var_ctl is None):
            raise InvalidParameterError("var_trt and var_ctl must be given together")
        if self.var_trt is None and self.pooled_sd is None:
            raise InvalidParameterError("need group variances or a pooled SD")

    @property
    def effect(self) -> float:
        """Mean difference oriented so that positive favours treatment."""
        diff = self.mean_trt - self.mean_ctl
        return -diff if self.direction is Direction.LOWER else diff

    def default_se_mode(self) -> str:
        return "pooled" if self.pooled_sd is not None else "unpooled"

    def std_error(self, se_mode: str) -> float:
        if se_mode == "pooled":
            if self.pooled_sd is None:
                raise InvalidParameterError(f"endpoint {self.name or '?'} has no pooled SD")
            se = self.pooled_sd * math.sqrt(1.0 / self.n_trt + 1.0 / self.n_ctl)
        elif se_mode == "unpooled":
            if self.var_trt is None:
                raise InvalidParameterError(f"endpoint {self.name or '?'} has no group variances")
            se = math.sqrt(self.var_trt / self.n_trt + self.var_ctl / self.n_ctl)
        else:
            raise InvalidParameterError(f"unknown se_mode {se_mode!r}")
        if not se > 0.0:
            raise InvalidParameterError(f"endpoint {self.name or '?'} has zero standard error")
        return se


@dataclass(frozen=True)
class MarginSpec:
    epsilon: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        eps = np.atleast_1d(np.asarray(self.epsilon, dtype=float))
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if eps.shape != eta.shape or eps.ndim != 1:
            raise InvalidParameterError("epsilon and eta must be vectors of equal length")
        if np.any(~(eps >= 0)) or np.any(~(eta >= 0)):
            raise InvalidParameterError("margins must be nonnegative")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "eta", eta)

    @property
    def dim(self) -> int:
        return self.epsilon.size


@dataclass(frozen=True)
class TrialResult:
    t_stats: np.ndarray
    t_ni: np.ndarray
    c: np.ndarray
    std_errors: np.ndarray
    alpha_prime: float
    critical_value: float
    decisions: tuple[Decision, ...]
    overall_success: bool
    ci_lower: np.ndarray
    df_used: float
    correlation: CorrelationMatrix
    rho0: float | None = None
    solver: AdjustedAlpha | None = field(default=None, repr=False)
    settings: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "t_stats": self.t_stats.tolist(),
            "t_ni": self.t_ni.tolist(),
            "c": self.c.tolist(),
            "std_errors": self.std_errors.tolist(),
            "alpha_prime": self.alpha_prime,
            "critical_value": self.critical_value,
            "decisions": [d.value for d in self.decisions],
            "overall_success": self.overall_success,
            "ci_lower": self.ci_lower.tolist(),
            "df_used": self.df_used,
            "correlation": self.correlation.matrix.tolist(),
            "settings": dict(self.settings),
        }
        if self.rho0 is not None:
            out["rho0"] = self.rho0
        if self.solver is not None:
            out["solver"] = self.solver.as_dict()
        return out


def pooled_correlation(cov_trt, cov_ctl) -> CorrelationMatrix:
    """Correlation of the summed group covariance matrices."""
    a = np.asarray(cov_trt, dtype=float)
    b = np.asarray(cov_ctl, dtype=float)
    if a.ndim != 2 or a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise InvalidParameterError("covariance matrices must be square and of equal shape")
    for name, s in (("cov_trt", a), ("cov_ctl", b)):
        if not np.allclose(s, s.T, atol=1e-10 * max(1.0, np.abs(s).max())):
            raise InvalidParameterError(f"{name} is not symmetric")
        if np.linalg.eigvalsh(0.5 * (s + s.T)).min() < -1e-10 * max(1.0, np.abs(s).max()):
            raise InvalidParameterError(f"{name} is not positive semidefinite")
    s = a + b
    diag = np.diag(s)
    if np.any(diag <= 0.0):
        raise InvalidParameterError("a variance on the diagonal is zero")
    scale = np.sqrt(diag)
    r = s / np.outer(scale, scale)
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 1.0)
    return CorrelationMatrix(np.clip(r, -1.0, 1.0))


def armitage_parmar_rho0(R) -> float:
    """Mean absolute pairwise correlation plus a dispersion term."""
    R = as_correlation(R)
    m = R.dim
    if m < 2:
        raise InvalidParameterError("need at least two endpoints")
    r = np.abs(R.matrix[np.triu_indices(m, 1)])
    mean = r.mean()
    return float(mean + 4.0 * np.sum((r - mean) ** 2) / (m * (m - 1)))


def _resolve_se_mode(summaries, se_mode):
    if se_mode is None:
        modes = {s.default_se_mode() for s in summaries}
        se_mode = "pooled" if "pooled" in modes else "unpooled"
    if se_mode not in SE_MODES:
        raise InvalidParameterError(f"se_mode must be one of {SE_MODES}")
    return se_mode


def _check_lengths(summaries, margins):
    if len(summaries) == 0:
        raise InvalidParameterError("no endpoints supplied")
    if margins.dim != len(summaries):
        raise InvalidParameterError(
            f"margins have length {margins.dim} but there are {len(summaries)} endpoints"
        )


def standardize_margins(summaries: Sequence[EndpointSummary], margins: MarginSpec,
                        se_mode: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(c, se)`` with ``c_k = (epsilon_k + eta_k) / SE_k``."""
    _check_lengths(summaries, margins)
    se_mode = _resolve_se_mode(summaries, se_mode)
    se = np.array([s.std_error(se_mode) for s in summaries])
    return (margins.epsilon + margins.eta) / se, se


def t_statistics(summaries: Sequence[EndpointSummary], margins: MarginSpec,
                 se_mode: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Superiority and non-inferiority statistics ``(t_sup, t_ni)``."""
    c, se = standardize_margins(summaries, margins, se_mode)
    effect = np.array([s.effect for s in summaries])
    t_sup = (effect - margins.epsilon) / se
    return t_sup, t_sup + c


def degrees_of_freedom(summaries: Sequence[EndpointSummary], df_mode: str = "per_endpoint") -> float:
    if df_mode not in DF_MODES:
        raise InvalidParameterError(f"df_mode must be one of {DF_MODES}")
    # with unequal per-endpoint counts the smallest is the conservative choice
    d = min(s.n_trt + s.n_ctl - 2 for s in summaries)
    return float(d * len(summaries)) if df_mode == "multiplied" else float(d)


def simultaneous_ci(summaries: Sequence[EndpointSummary], alpha_prime: float, df: float,
                    se_mode: str | None = None) -> np.ndarray:
    """Lower limits ``L_k``; each interval is ``[L_k, inf)`` on the benefit scale."""
    se_mode = _resolve_se_mode(summaries, se_mode)
    crit = t_quantile(alpha_prime, df)
    effect = np.array([s.effect for s in summaries])
    se = np.array([s.std_error(se_mode) for s in summaries])
    return effect - crit * se


def decide(t_sup, t_ni, crit, p: int = 1) -> tuple[tuple[Decision, ...], bool]:
    out = []
    for ts, tn in zip(t_sup, t_ni):
        if ts > crit:
            out.append(Decision.SUPERIOR)
        elif tn > crit:
            out.append(Decision.NONINFERIOR_ONLY)
        else:
            out.append(Decision.FAIL)
    success = Decision.FAIL not in out and out.count(Decision.SUPERIOR) >= p
    return tuple(out), success


def analyze(summaries: Sequence[EndpointSummary], margins: MarginSpec, alpha: float = 0.025,
            p: int = 1, correlation_source: str = "pooled_matrix", se_mode: str | None = None,
            df_mode: str = "per_endpoint", *, R=None, cov_trt=None, cov_ctl=None,
            zeta: float = 1e-5, max_iters: int = 200, seed: int = 0) -> TrialResult:
    """Solve the adjusted level for this trial and apply the decision rule.

    ``correlation_source`` picks the matrix handed to the solver:
    ``pooled_matrix`` builds it from ``cov_trt`` and ``cov_ctl``,
    ``supplied_matrix`` uses ``R`` as given and ``rho0_exchangeable`` replaces
    ``R`` by the exchangeable matrix at its Armitage-Parmar average.
    """
    summaries = list(summaries)
    _check_lengths(summaries, margins)
    m = len(summaries)
    if int(p) != p or not 1 <= p <= m:
        raise InvalidParameterError(f"p must be an integer in [1, {m}]")
    se_mode = _resolve_se_mode(summaries, se_mode)
    rho0 = None
    if correlation_source == "pooled_matrix":
        if cov_trt is None or cov_ctl is None:
            raise InvalidParameterError("pooled_matrix needs cov_trt and cov_ctl")
        corr = pooled_correlation(cov_trt, cov_ctl)
    elif correlation_source == "supplied_matrix":
        if R is None:
            raise InvalidParameterError("supplied_matrix needs R")
        corr = as_correlation(R, m)
    elif correlation_source == "rho0_exchangeable":
        if R is None:
            raise InvalidParameterError("rho0_exchangeable needs R")
        if m == 1:
            corr = CorrelationMatrix.identity(1)
        else:
            rho0 = armitage_parmar_rho0(as_correlation(R, m))
            corr = CorrelationMatrix.exchangeable(m, min(rho0, 1.0))
    else:
        raise InvalidParameterError(f"correlation_source must be one of {CORRELATION_SOURCES}")
    if corr.dim != m:
        raise InvalidParameterError(f"correlation matrix is {corr.dim}x{corr.dim}, expected {m}")

    c, se = standardize_margins(summaries, margins, se_mode)
    t_sup, t_ni = t_statistics(summaries, margins, se_mode)
    d = degrees_of_freedom(summaries, df_mode)
    cfg = SolverConfig(alpha=alpha, zeta=zeta, max_iters=max_iters, p=int(p), seed=seed)
    sol = solve_adjusted_alpha(m, c, corr, d, cfg)
    decisions, success = decide(t_sup, t_ni, sol.critical_value, int(p))
    lower = simultaneous_ci(summaries, sol.alpha_prime, d, se_mode)
    settings = {"alpha": alpha, "p": int(p), "correlation_source": correlation_source,
                "se_mode": se_mode, "df_mode": df_mode, "zeta": zeta}
    return TrialResult(t_sup, t_ni, c, se, sol.alpha_prime, sol.critical_value, decisions,
                       success, lower, d, corr, rho0, sol, settings)


TRT_LABELS = {"trt", "treatment", "test", "t"}
CTL_LABELS = {"ctl", "control", "placebo", "c"}


@dataclass(frozen=True)
class RawTrial:
    summaries: list[EndpointSummary]
    cov_trt: np.ndarray
    cov_ctl: np.ndarray

    @property
    def correlation(self) -> CorrelationMatrix:
        return pooled_correlation(self.cov_trt, self.cov_ctl)


def summarize_groups(x_trt, x_ctl, directions=None, names=None) -> RawTrial:
    """Summaries and covariance blocks from per-subject arrays of shape (n, m)."""
    x_trt = np.atleast_2d(np.asarray(x_trt, dtype=float))
    x_ctl = np.atleast_2d(np.asarray(x_ctl, dtype=float))
    if x_trt.shape[1] != x_ctl.shape[1]:
        raise InvalidParameterError("groups have different numbers of endpoints")
    if not (np.isfinite(x_trt).all() and np.isfinite(x_ctl).all()):
        raise InvalidParameterError("raw data contain missing or non-finite values")
    n1, m = x_trt.shape
    n2 = x_ctl.shape[0]
    if n1 < 2 or n2 < 2:
        raise InvalidParameterError("each group needs at least two subjects")
    directions = list(directions) if directions is not None else [Direction.HIGHER] * m
    names = list(names) if names is not None else [f"endpoint_{k + 1}" for k in range(m)]
    if len(directions) != m or len(names) != m:
        raise InvalidParameterError("directions/names do not match the number of endpoints")
    s1 = np.cov(x_trt, rowvar=False, ddof=1).reshape(m, m)
    s2 = np.cov(x_ctl, rowvar=False, ddof=1).reshape(m, m)
    pooled = np.sqrt(((n1 - 1) * np.diag(s1) + (n2 - 1) * np.diag(s2)) / (n1 + n2 - 2))
    mu1, mu2 = x_trt.mean(axis=0), x_ctl.mean(axis=0)
    summaries = [
        EndpointSummary(mu1[k], mu2[k], n1, n2, s1[k, k], s2[k, k], pooled[k], directions[k], names[k])
        for k in range(m)
    ]
    return RawTrial(summaries, s1, s2)


def read_raw_csv(path, directions=None) -> RawTrial:
    """Per-subject CSV with columns ``subject_id, group, endpoint_1..endpoint_m``."""
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if len(header) < 3 or header[0] != "subject_id" or header[1] != "group":
            raise InvalidParameterError("raw CSV must start with columns subject_id, group")
        names = header[2:]
        groups = {"trt": [], "ctl": []}
        for line_no, row in enumerate(reader, start=2):
            label = (row["group"] or "").strip().lower()
            if label in TRT_LABELS:
                key = "trt"
            elif label in CTL_LABELS:
                key = "ctl"
            else:
                raise InvalidParameterError(f"line {line_no}: unknown group label {row['group']!r}")
            try:
                groups[key].append([float(row[n]) for n in names])
            except (TypeError, ValueError) as exc:
                raise InvalidParameterError(f"line {line_no}: {exc}") from None
    return summarize_groups(np.array(groups["trt"]).reshape(-1, len(names)),
                            np.array(groups["ctl"]).reshape(-1, len(names)), directions, names)
