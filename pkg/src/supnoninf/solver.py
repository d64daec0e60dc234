"""Adjusted significance level by bisection, plus the grid and curve generators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from supnoninf import error_rates as er
from supnoninf.exceptions import (
    AccuracyNotReachedError,
    ConvergenceError,
    InvalidParameterError,
)
from supnoninf.mvt import DEFAULT_TARGET_ABS_ERR, CorrelationMatrix, as_correlation, t_quantile

GRID_COLUMNS = ("m", "rho", "c", "d", "alpha", "alpha_prime", "critical_value")


@dataclass(frozen=True)
class SolverConfig:
    alpha: float = 0.05
    zeta: float = 1e-5
    max_iters: int = 200
    p: int = 1
    target_abs_err: float = DEFAULT_TARGET_ABS_ERR
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.zeta > 0.0:
            raise InvalidParameterError("zeta must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise InvalidParameterError("max_iters must be a positive integer")
        if int(self.p) != self.p or self.p < 1:
            raise InvalidParameterError("p must be a positive integer")


@dataclass(frozen=True)
class AdjustedAlpha:
    alpha_prime: float
    critical_value: float
    achieved_bound: float
    iterations: int
    bracket: tuple[float, float]
    gamma1: float = math.nan
    gamma2: float = math.nan
    trace: tuple = field(default=(), repr=False, compare=False)

    def as_dict(self) -> dict:
        return {
            "alpha_prime": self.alpha_prime,
            "critical_value": self.critical_value,
            "achieved_bound": self.achieved_bound,
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "iterations": self.iterations,
            "bracket": list(self.bracket),
        }


def bound_pair(alpha_prime, c, R, d, p=1, *, target_abs_err=DEFAULT_TARGET_ABS_ERR, seed=0):
    """``(gamma1, gamma2)`` at ``alpha_prime``; the ``_p`` forms when ``p > 1``."""
    if p == 1:
        g1 = er.gamma1(alpha_prime, c, R, d, target_abs_err=target_abs_err, seed=seed)
        g2 = er.gamma2(alpha_prime, c, d)
    else:
        g1 = er.gamma1_p(alpha_prime, p, c, R, d, target_abs_err=target_abs_err, seed=seed)
        g2 = er.gamma2_p(alpha_prime, p, c, d)
    return g1, g2


def max_iterations_needed(m: int, cfg: SolverConfig) -> int:
    a = cfg.alpha
    width = a - a / m
    if width <= 0:
        return 0
    return max(0, math.ceil(math.log2(width / (cfg.zeta * a)))) + 2


_cache: dict = {}
_cache_enabled = True


def set_cache(enabled: bool) -> None:
    global _cache_enabled
    _cache_enabled = bool(enabled)


def clear_cache() -> None:
    _cache.clear()


def solve_adjusted_alpha(m: int, c, R, d, cfg: SolverConfig = SolverConfig()) -> AdjustedAlpha:
    """Largest ``alpha'`` in ``[alpha/m, alpha]`` whose bound ``max(gamma1, gamma2)`` stays at ``alpha``.

    Plain bisection on ``f = max(gamma1, gamma2) - alpha``, stopping once
    ``|f| <= zeta`` at the midpoint or the bracket is narrower than
    ``zeta * alpha``.  If ``f(alpha) <= 0`` the unadjusted level is returned.
    """
    if int(m) != m or m < 1:
        raise InvalidParameterError(f"m must be a positive integer, got {m}")
    m = int(m)
    c = er.margin_vector(c, m)
    R = as_correlation(R, m)
    d = float(d)
    if not d > 0:
        raise InvalidParameterError(f"degrees of freedom must be positive, got {d}")
    if cfg.p > m:
        raise InvalidParameterError(f"p = {cfg.p} exceeds the number of endpoints {m}")

    key = (m, c.tobytes(), R, d, cfg)
    if _cache_enabled and key in _cache:
        return _cache[key]
    result = _bisect(m, c, R, d, cfg)
    if _cache_enabled:
        _cache[key] = result
    return result


def _bisect(m, c, R, d, cfg: SolverConfig) -> AdjustedAlpha:
    alpha, zeta = cfg.alpha, cfg.zeta
    lo, hi = alpha / m, alpha
    trace = []

    def evaluate(a):
        try:
            g1, g2 = bound_pair(a, c, R, d, cfg.p, target_abs_err=cfg.target_abs_err, seed=cfg.seed)
        except AccuracyNotReachedError as exc:
            exc.bracket = (lo, hi)
            raise
        trace.append((a, g1, g2))
        return g1, g2

    def done(a, g, iters):
        return AdjustedAlpha(a, t_quantile(a, d), max(g), iters, (lo, hi), g[0], g[1], tuple(trace))

    g_hi = evaluate(hi)
    if max(g_hi) - alpha <= 0.0:
        return done(hi, g_hi, 0)
    g_lo = evaluate(lo)
    if max(g_lo) - alpha >= -zeta:
        # the bound is already (numerically) binding at alpha / m
        return done(lo, g_lo, 0)

    for it in range(1, cfg.max_iters + 1):
        mid = 0.5 * (lo + hi)
        g_mid = evaluate(mid)
        f_mid = max(g_mid) - alpha
        if abs(f_mid) <= zeta:
            return done(mid, g_mid, it)
        if f_mid < 0:
            lo, g_lo = mid, g_mid
        else:
            hi = mid
        if hi - lo <= zeta * alpha:
            return done(lo, g_lo, it)
    raise ConvergenceError(
        f"bisection did not converge in {cfg.max_iters} iterations", (lo, hi)
    )


def _grid_cell(args):
    m, rho, c, d, alpha, cfg = args
    R = CorrelationMatrix.exchangeable(m, rho)
    cell_cfg = SolverConfig(alpha=alpha, zeta=cfg.zeta, max_iters=cfg.max_iters, p=cfg.p,
                            target_abs_err=cfg.target_abs_err, seed=cfg.seed)
    res = solve_adjusted_alpha(m, np.full(m, float(c)), R, d, cell_cfg)
    return {"m": m, "rho": rho, "c": c, "d": d, "alpha": alpha,
            "alpha_prime": res.alpha_prime, "critical_value": res.critical_value}


def table1_grid(m_list: Iterable[int], rho_list: Iterable[float], c_list: Iterable[float],
                d_list: Iterable[float], alpha: float = 0.05, *, cfg: SolverConfig | None = None,
                workers: int = 1) -> list[dict]:
    """Adjusted levels over the cross product of exchangeable designs with a common margin.

    Rows come back in ``m, rho, c, d`` order regardless of ``workers``.
    """
    cfg = cfg or SolverConfig(alpha=alpha)
    cells = [(int(m), float(r), float(c), float(d), float(alpha), cfg)
             for m, r, c, d in product(m_list, rho_list, c_list, d_list)]
    if workers > 1 and len(cells) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_grid_cell, cells))
    return [_grid_cell(cell) for cell in cells]


def figure1_curve(m: int, rho: float, d: float, c_range: Sequence[float] = (0.0, 5.0),
                  alpha: float = 0.05, steps: int = 51, *, cfg: SolverConfig | None = None) -> list[tuple[float, float]]:
    """``(c, critical value)`` pairs on an even grid of common margins."""
    lo, hi = float(c_range[0]), float(c_range[1])
    if not 0.0 <= lo < hi <= 5.0:
        raise InvalidParameterError("c_range must satisfy 0 <= low < high <= 5")
    if int(steps) != steps or steps < 2:
        raise InvalidParameterError("steps must be an integer >= 2")
    cfg = cfg or SolverConfig(alpha=alpha)
    rows = table1_grid([m], [rho], np.linspace(lo, hi, int(steps)), [d], alpha, cfg=cfg)
    return [(r["c"], r["critical_value"]) for r in rows]
