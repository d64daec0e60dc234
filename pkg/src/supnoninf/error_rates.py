"""Type I error bounds for the unified superiority / non-inferiority test.

Notation: ``t`` is the critical value ``t_quantile(alpha_prime, d)``, ``c`` the
vector of combined margins in standard-error units, and ``eta_std`` the
standardized shift ``(eta_k + theta_k) / SE_k`` of the non-inferiority
statistic.  Endpoint ``k`` is declared superior when ``T_k + eta_std_k - c_k > t``
and non-inferior when ``T_k + eta_std_k > t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from supnoninf.exceptions import InvalidParameterError
from supnoninf.mvt import (
    DEFAULT_TARGET_ABS_ERR,
    AccuracyReport,
    CorrelationMatrix,
    as_correlation,
    orthant_prob,
    t_quantile,
    t_tail,
)

# stand-in for theta_k -> +infinity, in standard-error units
THETA_INF = 1e6


def margin_vector(c, m: int | None = None) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.ndim != 1 or c.size == 0:
        raise InvalidParameterError("margin vector must be a non-empty vector")
    if np.any(np.isnan(c)) or np.any(c < 0):
        raise InvalidParameterError("standardized margins c_k must be nonnegative")
    if m is not None and c.size != m:
        raise InvalidParameterError(f"margin vector has length {c.size}, expected {m}")
    return c


@dataclass(frozen=True)
class ThetaConfig:
    """True effects and the implied standardized shifts ``eta_std``."""

    eta_std: np.ndarray
    theta: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "eta_std", np.atleast_1d(np.asarray(self.eta_std, dtype=float)))
        if self.theta is not None:
            object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))

    @classmethod
    def from_raw(cls, theta, eta, se) -> "ThetaConfig":
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        se = np.atleast_1d(np.asarray(se, dtype=float))
        return cls((eta + theta) / se, theta)

    @classmethod
    def superiority_lfc(cls, c) -> "ThetaConfig":
        """theta_k = epsilon_k for every k."""
        return cls(margin_vector(c))

    @classmethod
    def noninferiority_lfc(cls, m: int, k: int) -> "ThetaConfig":
        """theta_k = -eta_k, every other effect at +infinity."""
        shift = np.full(m, THETA_INF)
        shift[k] = 0.0
        return cls(shift)

    @property
    def dim(self) -> int:
        return self.eta_std.size


def _critical(alpha_prime: float, d: float) -> float:
    if not 0.0 < alpha_prime < 1.0:
        raise InvalidParameterError(f"alpha_prime must lie in (0, 1), got {alpha_prime}")
    return t_quantile(alpha_prime, d)


def _tail_prob(lower, R: CorrelationMatrix, d, target_abs_err, seed, report) -> float:
    return orthant_prob(lower, R, d, target_abs_err=target_abs_err, seed=seed, report=report)


def gamma1(alpha_prime, c, R, d, *, target_abs_err=DEFAULT_TARGET_ABS_ERR, seed=0,
           report: AccuracyReport | None = None) -> float:
    """Bound at the superiority least favourable configuration.

    Sum over k of ``P(T_k > t, T_i > t - c_i for all i != k)``.
    """
    c = margin_vector(c)
    m = c.size
    R = as_correlation(R, m)
    t = _critical(alpha_prime, d)
    rho = R.common_rho
    if rho is not None and rho >= 0.0 and np.ptp(c) == 0.0:
        lower = np.full(m, t - c[0])
        lower[0] = t
        return m * _tail_prob(lower, R, d, target_abs_err, seed, report)
    total = 0.0
    for k in range(m):
        lower = t - c
        lower[k] = t
        total += _tail_prob(lower, R, d, target_abs_err, seed, report)
    return total


def gamma2(alpha_prime, c, d) -> float:
    """Bound at the non-inferiority least favourable configurations.

    ``max_k P(T > t + c_k) + (m - 1) P(T > t)``; no correlation enters.
    """
    c = margin_vector(c)
    t = _critical(alpha_prime, d)
    return float(np.max(t_tail(t + c, d))) + (c.size - 1) * t_tail(t, d)


def _check_p(p, m):
    if not (isinstance(p, (int, np.integer)) and 1 <= p <= m):
        raise InvalidParameterError(f"p must be an integer in [1, {m}], got {p}")


def gamma1_p_term(alpha_prime, subset, c, R, d, *, target_abs_err=DEFAULT_TARGET_ABS_ERR, seed=0,
                  report=None) -> float:
    """``P(T_k > t for k in subset, T_i > t - c_i otherwise)``."""
    c = margin_vector(c)
    R = as_correlation(R, c.size)
    t = _critical(alpha_prime, d)
    lower = t - c
    lower[list(subset)] = t
    return _tail_prob(lower, R, d, target_abs_err, seed, report)


def gamma1_p(alpha_prime, p, c, R, d, *, target_abs_err=DEFAULT_TARGET_ABS_ERR, seed=0,
             report: AccuracyReport | None = None) -> float:
    """Superiority-LFC bound when at least ``p`` superior endpoints are required.

    Sums the subset probability over all size-``p`` index sets.  Any outcome
    with ``p`` or more superior endpoints lies in at least one of these events,
    so the sum bounds the rejection probability; with ``p == 1`` it is exactly
    :func:`gamma1` and with ``p == m`` it is the pure superiority event.
    """
    c = margin_vector(c)
    m = c.size
    _check_p(p, m)
    R = as_correlation(R, m)
    t = _critical(alpha_prime, d)
    rho = R.common_rho
    if rho is not None and rho >= 0.0 and np.ptp(c) == 0.0:
        lower = np.full(m, t - c[0])
        lower[:p] = t
        return math.comb(m, p) * _tail_prob(lower, R, d, target_abs_err, seed, report)
    total = 0.0
    for subset in combinations(range(m), p):
        lower = t - c
        lower[list(subset)] = t
        total += _tail_prob(lower, R, d, target_abs_err, seed, report)
    return total


def gamma2_p(alpha_prime, p, c, d) -> float:
    """Non-inferiority-LFC bound for the at-least-``p`` rule.

    Max over size-``p`` subsets S of ``sum_{k in S} P(T > t + c_k) + (m - p) P(T > t)``;
    the maximum takes the ``p`` smallest margins.
    """
    c = margin_vector(c)
    m = c.size
    _check_p(p, m)
    t = _critical(alpha_prime, d)
    tails = np.sort(np.asarray(t_tail(t + c, d)))[::-1]
    return float(tails[:p].sum()) + (m - p) * t_tail(t, d)


@dataclass(frozen=True)
class WorsleyBound:
    value: float
    raw: float
    first_order: float
    pairwise: float
    abs_error: float


def worsley_bound(theta_cfg: ThetaConfig, c, alpha_prime, R, d, *, hub: int = 0,
                  target_abs_err=DEFAULT_TARGET_ABS_ERR, seed=0) -> WorsleyBound:
    """Improved-Bonferroni (spanning star at ``hub``) bound on the rejection probability.

    ``raw = sum_k P(A_k) - sum_{k != hub} P(A_hub & A_k)`` with
    ``A_k = {T_k > u_k + c_k} & {T_i > u_i, i != k}`` and ``u = t - eta_std``.
    For two endpoints this is the exact probability of the union.
    """
    c = margin_vector(c)
    m = c.size
    if theta_cfg.dim != m:
        raise InvalidParameterError("theta configuration and margins differ in length")
    if not 0 <= hub < m:
        raise InvalidParameterError(f"hub index {hub} out of range")
    R = as_correlation(R, m)
    t = _critical(alpha_prime, d)
    report = AccuracyReport()
    with np.errstate(invalid="ignore"):
        u = t - theta_cfg.eta_std
    u = np.where(np.isnan(u), np.inf, u)
    first = 0.0
    for k in range(m):
        lower = u.copy()
        lower[k] += c[k]
        first += _tail_prob(lower, R, d, target_abs_err, seed, report)
    pair = 0.0
    for k in range(m):
        if k == hub:
            continue
        lower = u.copy()
        lower[hub] += c[hub]
        lower[k] += c[k]
        pair += _tail_prob(lower, R, d, target_abs_err, seed, report)
    raw = first - pair
    return WorsleyBound(min(max(raw, 0.0), 1.0), raw, first, pair, report.total_abs_error)


@dataclass(frozen=True)
class MCRate:
    rate: float
    std_error: float
    reps: int
    hits: int


MC_BLOCK = 1 << 16


def _mvt_block(L, d, n, rng):
    z = rng.standard_normal((n, L.shape[0])) @ L.T
    if math.isinf(d):
        return z
    s = np.sqrt(rng.chisquare(d, size=n) / d)
    return z / s[:, None]


def _count_block(args):
    L, d, n, child, eta_std, c, t, p = args
    rng = np.random.default_rng(child)
    T = _mvt_block(L, d, n, rng)
    ni = T + eta_std > t
    sup = T + eta_std - c > t
    hit = ni.all(axis=1) & (sup.sum(axis=1) >= p)
    return int(hit.sum())


def mc_rejection_rate(theta_cfg: ThetaConfig, c, alpha_prime, R, d, p: int = 1, reps: int = 100_000,
                      seed: int = 0, workers: int = 1) -> MCRate:
    """Monte Carlo frequency of declaring trial success at the given effects.

    Success means at least ``p`` superior endpoints and non-inferiority on all.
    Replicates are generated in fixed blocks of ``MC_BLOCK`` draws, each from its
    own spawned seed, so the answer does not depend on ``workers``.
    """
    c = margin_vector(c)
    m = c.size
    _check_p(p, m)
    if reps < 1:
        raise InvalidParameterError("reps must be at least 1")
    R = as_correlation(R, m)
    t = _critical(alpha_prime, d)
    L = np.linalg.cholesky(R.matrix + 1e-14 * np.eye(m))
    n_blocks = -(-reps // MC_BLOCK)
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    sizes = [min(MC_BLOCK, reps - i * MC_BLOCK) for i in range(n_blocks)]
    jobs = [(L, float(d), n, ch, theta_cfg.eta_std, c, t, p) for n, ch in zip(sizes, children)]
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            hits = sum(pool.map(_count_block, jobs))
    else:
        hits = sum(map(_count_block, jobs))
    rate = hits / reps
    return MCRate(rate, math.sqrt(rate * (1.0 - rate) / reps), reps, hits)
