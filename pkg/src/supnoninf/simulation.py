"""Seeded Monte Carlo comparison of the unified test with the competing procedures."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from functools import cached_property
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from supnoninf import comparators as cmp
from supnoninf.comparators import Method, TwoGroupSample
from supnoninf.exceptions import InvalidParameterError, NumericalError
from supnoninf.mvt import CorrelationMatrix
from supnoninf.solver import SolverConfig, solve_adjusted_alpha
from supnoninf.trial import MarginSpec, pooled_correlation

ALPHA_MARGIN_SCALES = ("sigma", "nominal")
CSV_COLUMNS = ("scenario_id", "method", "rho", "c", "theta1", "theta2", "rate", "se", "reps", "seed")


def sample_mvn_group(n: int, mean, sd, R, rng: np.random.Generator) -> np.ndarray:
    """``n`` iid multivariate normal rows with the given means, SDs and correlation."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    m = mean.size
    sd = np.broadcast_to(np.asarray(sd, dtype=float), (m,))
    if np.any(sd < 0):
        raise InvalidParameterError("standard deviations must be nonnegative")
    R = R.matrix if isinstance(R, CorrelationMatrix) else np.asarray(R, dtype=float)
    try:
        L = np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(R)
        if w.min() < -1e-10:
            raise InvalidParameterError("correlation matrix is not positive semidefinite") from None
        L = v * np.sqrt(np.clip(w, 0.0, None))
    z = rng.standard_normal((n, m))
    return mean + (z @ L.T) * sd


@dataclass(frozen=True)
class SimScenario:
    """Two-arm simulation setting; effects and margins are in SD units (SD = 1).

    ``alpha_margin_scale`` controls only how the unified test's adjusted level
    is solved: ``"sigma"`` standardizes the margin by ``sqrt(1/n1 + 1/n2)``
    exactly as the test statistics do; ``"nominal"`` feeds the margin number
    to the solver as if it were already in standard-error units.
    """

    m: int = 2
    rho: float = 0.0
    theta: tuple = (0.0, 0.0)
    margin_c: float = 0.2
    epsilon: float = 0.0
    n_trt: int = 100
    n_ctl: int = 100
    alpha: float = 0.05
    reps: int = 10_000
    seed: int = 20240101
    methods: tuple = ("CCZQ", "TL", "PW", "BLT")
    boot_reps: int = 1000
    alpha_margin_scale: str = "sigma"
    plug_in_alpha: bool = False
    calibration: str = "joint"
    scenario_id: int = 0

    def __post_init__(self):
        theta = tuple(float(v) for v in np.atleast_1d(self.theta))
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "methods", tuple(Method(m).value for m in self.methods))
        if int(self.m) != self.m or self.m < 1 or len(theta) != self.m:
            raise InvalidParameterError("theta must have m entries")
        if int(self.reps) != self.reps or self.reps < 1:
            raise InvalidParameterError("reps must be a positive integer")
        if not (-1.0 / max(self.m - 1, 1) <= self.rho <= 1.0):
            raise InvalidParameterError("rho outside the exchangeable range")
        if self.margin_c < 0 or self.epsilon < 0:
            raise InvalidParameterError("margins must be nonnegative")
        if self.alpha_margin_scale not in ALPHA_MARGIN_SCALES:
            raise InvalidParameterError(f"alpha_margin_scale must be one of {ALPHA_MARGIN_SCALES}")
        if self.calibration not in cmp.CALIBRATIONS:
            raise InvalidParameterError(f"calibration must be one of {cmp.CALIBRATIONS}")
        if min(self.n_trt, self.n_ctl) < 2:
            raise InvalidParameterError("group sizes must be at least 2")

    @cached_property
    def margins(self) -> MarginSpec:
        return MarginSpec(np.full(self.m, self.epsilon), np.full(self.m, self.margin_c))

    @cached_property
    def R(self) -> CorrelationMatrix:
        return CorrelationMatrix.exchangeable(self.m, self.rho)

    @property
    def df(self) -> float:
        return float(self.n_trt + self.n_ctl - 2)

    def design_c(self) -> np.ndarray:
        total = self.epsilon + self.margin_c
        if self.alpha_margin_scale == "nominal":
            return np.full(self.m, total)
        return np.full(self.m, total / np.sqrt(1.0 / self.n_trt + 1.0 / self.n_ctl))

    @classmethod
    def from_dict(cls, doc: dict) -> "SimScenario":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise InvalidParameterError(f"unknown scenario fields: {sorted(unknown)}")
        doc = dict(doc)
        for key in ("theta", "methods"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["theta"] = list(self.theta)
        out["methods"] = list(self.methods)
        return out


@dataclass(frozen=True)
class MethodRate:
    method: str
    rate: float
    std_error: float
    reps_used: int
    rejections: int
    wall_time: float


@dataclass
class SimReport:
    scenario: SimScenario
    rates: dict = field(default_factory=dict)
    alpha_prime: float | None = None
    critical_value: float | None = None
    complete: bool = True
    error: str | None = None

    def rows(self) -> list[dict]:
        sc = self.scenario
        out = []
        for name in sc.methods:
            if name not in self.rates:
                continue
            r = self.rates[name]
            row = {"scenario_id": sc.scenario_id, "method": name, "rho": sc.rho, "c": sc.margin_c}
            for k, th in enumerate(sc.theta):
                row[f"theta{k + 1}"] = th
            row.update(rate=r.rate, se=r.std_error, reps=r.reps_used, seed=sc.seed)
            out.append(row)
        return out


class SimulationAborted(NumericalError):
    def __init__(self, message, partial: SimReport):
        super().__init__(message)
        self.partial = partial


def replicate_rng(seed: int, scenario_id: int, r: int) -> np.random.Generator:
    """Counter-based stream: replicate ``r`` of a scenario is reproducible on its own."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(scenario_id, r))
    return np.random.Generator(np.random.Philox(ss))


def _critical_for(sc: SimScenario, cfg: SolverConfig, c: np.ndarray, R) -> float:
    return solve_adjusted_alpha(sc.m, c, R, sc.df, cfg).critical_value


def run_replicate(sc: SimScenario, r: int, crit: float | None, cfg: SolverConfig, d2: float | None) -> dict:
    """Rejection indicator per method for replicate ``r``."""
    rng = replicate_rng(sc.seed, sc.scenario_id, r)
    x1 = sample_mvn_group(sc.n_trt, sc.theta, 1.0, sc.R, rng)
    x2 = sample_mvn_group(sc.n_ctl, np.zeros(sc.m), 1.0, sc.R, rng)
    sample = TwoGroupSample(x1, x2)
    margins = sc.margins
    st = cmp.sample_stats(sample, margins)
    out = {}
    if "CCZQ" in sc.methods:
        if sc.plug_in_alpha:
            R_hat = pooled_correlation(st.cov_trt, st.cov_ctl)
            if sc.alpha_margin_scale == "nominal":
                c_hat = margins.epsilon + margins.eta
            else:
                c_hat = (margins.epsilon + margins.eta) / st.se
            crit_r = solve_adjusted_alpha(sc.m, c_hat, R_hat, sc.df, cfg).critical_value
        else:
            crit_r = crit
        out["CCZQ"] = cmp.cczq_test(sample, margins, crit_r, stats=st).reject_h0
    draws = None
    if "TL" in sc.methods or "BLT" in sc.methods:
        draws = cmp.bootstrap_draws(sample, st.delta, sc.boot_reps, rng)
    if "TL" in sc.methods:
        out["TL"] = cmp.tl_test(sample, margins, sc.alpha, draws=draws, stats=st,
                                calibration=sc.calibration).reject_h0
    if "BLT" in sc.methods:
        out["BLT"] = cmp.blt_test(sample, margins, sc.alpha, draws=draws, stats=st,
                                calibration=sc.calibration).reject_h0
    if "PW" in sc.methods:
        out["PW"] = cmp.pw_test(sample, margins, sc.alpha, d2=d2, stats=st).reject_h0
    return out


def _run_chunk(args):
    sc, start, stop, crit, cfg, d2 = args
    tallies = {m: 0 for m in sc.methods}
    times = {m: 0.0 for m in sc.methods}
    done = 0
    try:
        for r in range(start, stop):
            t0 = time.perf_counter()
            res = run_replicate(sc, r, crit, cfg, d2)
            dt = (time.perf_counter() - t0) / max(len(res), 1)
            for m, hit in res.items():
                tallies[m] += int(hit)
                times[m] += dt
            done += 1
    except (NumericalError, InvalidParameterError, np.linalg.LinAlgError) as exc:
        return tallies, times, done, f"replicate {start + done}: {exc}"
    return tallies, times, done, None


def run_scenario(sc: SimScenario, *, workers: int = 1, chunk: int = 250) -> SimReport:
    """Tally rejections of the null for every selected method.

    The unified test's critical value is solved once from the design constants
    (known SD) unless ``plug_in_alpha`` is set.  Results are identical for any
    ``workers`` because each replicate owns its random stream.
    """
    cfg = SolverConfig(alpha=sc.alpha)
    crit = alpha_prime = None
    if "CCZQ" in sc.methods:
        sol = solve_adjusted_alpha(sc.m, sc.design_c(), sc.R, sc.df, cfg)
        crit, alpha_prime = sol.critical_value, sol.alpha_prime
    d2 = cmp.pw_critical_value(sc.m, sc.n_trt + sc.n_ctl, sc.alpha) if "PW" in sc.methods else None
    jobs = [(sc, s, min(s + chunk, sc.reps), crit, cfg, d2) for s in range(0, sc.reps, chunk)]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_chunk(job))
            if results[-1][3]:
                break
    tallies = {m: 0 for m in sc.methods}
    times = {m: 0.0 for m in sc.methods}
    used = 0
    error = None
    for tal, tim, done, err in results:
        for m in sc.methods:
            tallies[m] += tal[m]
            times[m] += tim[m]
        used += done
        if err and error is None:
            error = err
    report = SimReport(sc, alpha_prime=alpha_prime, critical_value=crit)
    for m in sc.methods:
        rate = tallies[m] / used if used else float("nan")
        se = float(np.sqrt(rate * (1 - rate) / used)) if used else float("nan")
        report.rates[m] = MethodRate(m, rate, se, used, tallies[m], times[m])
    if error:
        report.complete = False
        report.error = error
        raise SimulationAborted(error, report)
    return report


def _reference(name: str) -> dict:
    return json.loads(resources.files("supnoninf.data").joinpath(name).read_text())


def table2_scenarios(reps: int = 10_000, seed: int = 20240101, boot_reps: int = 1000,
                     methods=("CCZQ", "TL", "PW", "BLT"), **overrides) -> list[SimScenario]:
    ref = _reference("table2.json")
    return [SimScenario(rho=cell["rho"], theta=(0.0, 0.0), margin_c=cell["c"], reps=reps, seed=seed,
                        boot_reps=boot_reps, methods=methods, scenario_id=i, **overrides)
            for i, cell in enumerate(ref["cells"])]


def table3_scenarios(reps: int = 10_000, seed: int = 20240101, boot_reps: int = 1000,
                     methods=("CCZQ", "TL", "PW", "BLT"), **overrides) -> list[SimScenario]:
    ref = _reference("table3.json")
    return [SimScenario(rho=cell["rho"], theta=tuple(cell["theta"]), margin_c=cell["eta"], reps=reps,
                        seed=seed, boot_reps=boot_reps, methods=methods, scenario_id=100 + i, **overrides)
            for i, cell in enumerate(ref["cells"])]


def reference_table(name: str) -> list[dict]:
    return _reference(f"{name}.json")["cells"]


def write_rows_csv(rows: Iterable[dict], fh, comments: Sequence[str] = ()) -> None:
    rows = list(rows)
    for line in comments:
        fh.write(f"# {line}\n")
    columns = list(CSV_COLUMNS)
    extra = [k for r in rows for k in r if k not in columns]
    for k in extra:
        if k not in columns:
            columns.insert(columns.index("rate"), k)
    writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(r)
