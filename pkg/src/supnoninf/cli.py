"""Command-line entry point.

Every artifact (JSON or CSV) embeds a run manifest with the resolved
parameters, so ``supnoninf replay --artifact FILE`` regenerates it.
Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from supnoninf import __version__
from supnoninf.exceptions import InvalidParameterError, NumericalError
from supnoninf.manifest import RunManifest, csv_artifact, json_artifact, read_manifest

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
TABLE1_GRID = {
    "m": [2, 3],
    "rho": [0.0, 0.5],
    "c": [0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
    "d": [10, 20, 30, 40, 50, 100, 200],
}
# output-only settings; precision and diagnostics stay in the manifest so replays match
PRESENTATION = {"out", "threads", "command", "handler"}


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def read_matrix_csv(path) -> np.ndarray:
    """Square correlation matrix from CSV; a header row/column of names and a
    lower-triangular layout with blank upper cells are both accepted."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]

    def num(v):
        v = v.strip()
        return float(v) if v else None

    try:
        num(rows[0][-1])
    except ValueError:
        rows = rows[1:]
    parsed = []
    for r in rows:
        try:
            vals = [num(v) for v in r]
        except ValueError:
            vals = [num(v) for v in r[1:]]
        parsed.append(vals)
    m = len(parsed)
    out = np.full((m, m), np.nan)
    for i, vals in enumerate(parsed):
        for j, v in enumerate(vals[:m]):
            if v is not None:
                out[i, j] = v
    out = np.where(np.isnan(out), out.T, out)
    np.fill_diagonal(out, np.where(np.isnan(np.diag(out)), 1.0, np.diag(out)))
    if np.isnan(out).any():
        raise InvalidParameterError(f"{path}: correlation matrix has missing entries")
    return out


# --------------------------------------------------------------------------
# handlers: each returns ("json", result_dict) or ("csv", (columns, rows))
# --------------------------------------------------------------------------

def _correlation_from(p):
    from supnoninf.mvt import CorrelationMatrix

    if p.get("corr"):
        return CorrelationMatrix(read_matrix_csv(p["corr"]))
    return CorrelationMatrix.exchangeable(p["m"], p["rho"])


def cmd_adjust_alpha(p, diagnostics):
    from supnoninf.solver import SolverConfig, solve_adjusted_alpha

    R = _correlation_from(p)
    m = p["m"] if p.get("m") else R.dim
    c = p["c"] * m if len(p["c"]) == 1 else p["c"]
    cfg = SolverConfig(alpha=p["alpha"], zeta=p["zeta"], max_iters=p["max_iters"], p=p["p"], seed=p["seed"])
    res = solve_adjusted_alpha(m, c, R, p["d"], cfg)
    out = res.as_dict()
    if diagnostics:
        out["trace"] = [{"alpha_prime": a, "gamma1": g1, "gamma2": g2} for a, g1, g2 in res.trace]
    return "json", out


def cmd_analyze(p, diagnostics):
    from supnoninf.specdoc import analysis_inputs, load_spec
    from supnoninf.trial import analyze

    spec = load_spec(p["spec"])
    res = analyze(**analysis_inputs(spec))
    out = res.as_dict()
    out["superior_endpoints"] = [k + 1 for k, d in enumerate(res.decisions) if d.value == "superior"]
    if not diagnostics:
        out.pop("solver", None)
    else:
        out["normalized_spec"] = spec
    return "json", out


def _power_spec(path, require_n=True):
    from supnoninf.specdoc import SpecError, SpecValidationError, power_inputs, validate_power_spec

    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SpecValidationError([SpecError("", f"not valid JSON: {exc}")]) from None
    spec = validate_power_spec(doc)
    return spec, power_inputs(spec, require_n=require_n)


def cmd_power(p, diagnostics):
    from supnoninf.power import analytic_power

    _, ps = _power_spec(p["spec"])
    return "json", analytic_power(ps).as_dict()


def cmd_sample_size(p, diagnostics):
    from supnoninf.power import min_sample_size
    from supnoninf.specdoc import SpecError, SpecValidationError

    spec, ps = _power_spec(p["spec"], require_n=False)
    target = p.get("target_power") or spec.get("target_power")
    if target is None:
        raise SpecValidationError([SpecError("/target_power", "required for sample-size")])
    res = min_sample_size(ps, target, spec["allocation_ratio"])
    out = res.as_dict()
    out["target_power"] = target
    return "json", out


def cmd_simulate(p, diagnostics, workers=1):
    from supnoninf import simulation as sim

    overrides = {}
    if p.get("alpha_margin_scale"):
        overrides["alpha_margin_scale"] = p["alpha_margin_scale"]
    if p.get("plug_in_alpha"):
        overrides["plug_in_alpha"] = True
    if p.get("calibration"):
        overrides["calibration"] = p["calibration"]
    common = dict(reps=p["reps"], seed=p["seed"], boot_reps=p["boot_reps"])
    if p.get("method"):
        common["methods"] = tuple(p["method"])
    if p.get("preset") == "table2":
        scenarios = sim.table2_scenarios(**common, **overrides)
    elif p.get("preset") == "table3":
        scenarios = sim.table3_scenarios(**common, **overrides)
    else:
        try:
            doc = json.loads(Path(p["scenarios"]).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidParameterError(f"{p['scenarios']}: not valid JSON: {exc}") from None
        items = doc["scenarios"] if isinstance(doc, dict) else doc
        scenarios = []
        for i, item in enumerate(items):
            merged = {"scenario_id": i, **common, **overrides, **item}
            scenarios.append(sim.SimScenario.from_dict(merged))
    rows = []
    for sc in scenarios:
        rep = sim.run_scenario(sc, workers=workers)
        rows.extend(rep.rows())
    m = max(sc.m for sc in scenarios)
    columns = ["scenario_id", "method", "rho", "c"] + [f"theta{k + 1}" for k in range(m)] + ["rate", "se", "reps", "seed"]
    return "csv", (columns, rows)


def cmd_table1(p, diagnostics, workers=1):
    from supnoninf.solver import GRID_COLUMNS, table1_grid

    rows = table1_grid(p["m"], p["rho"], p["c"], p["d"], p["alpha"], workers=workers)
    return "csv", (list(GRID_COLUMNS), rows)


def cmd_figure1(p, diagnostics):
    from supnoninf.solver import figure1_curve

    columns = ["m", "rho", "d", "alpha", "c", "critical_value"]
    rows = []
    for m in p["m"]:
        for rho in p["rho"]:
            for c, crit in figure1_curve(m, rho, p["d"], (p["c_min"], p["c_max"]), p["alpha"], p["steps"]):
                rows.append({"m": m, "rho": rho, "d": p["d"], "alpha": p["alpha"], "c": c, "critical_value": crit})
    return "csv", (columns, rows)


def cmd_rho0(p, diagnostics):
    from supnoninf.trial import armitage_parmar_rho0

    R = read_matrix_csv(p["corr"])
    return "json", {"rho0": armitage_parmar_rho0(R), "m": int(R.shape[0])}


HANDLERS = {
    "adjust-alpha": cmd_adjust_alpha,
    "analyze": cmd_analyze,
    "power": cmd_power,
    "sample-size": cmd_sample_size,
    "simulate": cmd_simulate,
    "table1": cmd_table1,
    "figure1": cmd_figure1,
    "rho0": cmd_rho0,
}
PARALLEL = {"simulate", "table1"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="supnoninf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="write the artifact here instead of stdout")
    common.add_argument("--full-precision", action="store_true", help="17 significant digits instead of 6")
    common.add_argument("--diagnostics", action="store_true", help="include solver traces and accuracy details")
    common.add_argument("--threads", type=int, default=1, help="worker processes for grids and simulations")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("adjust-alpha", parents=[common], help="solve the adjusted significance level")
    a.add_argument("--m", type=int)
    a.add_argument("--rho", type=float, default=0.0, help="common correlation")
    a.add_argument("--corr", help="CSV correlation matrix (overrides --rho)")
    a.add_argument("--c", type=_floats, required=True, help="standardized margins, comma separated")
    a.add_argument("--d", type=float, required=True, help="degrees of freedom")
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--p", type=int, default=1, help="endpoints required superior")
    a.add_argument("--zeta", type=float, default=1e-5)
    a.add_argument("--max-iters", type=int, default=200)
    a.add_argument("--seed", type=int, default=0)

    a = sub.add_parser("analyze", parents=[common], help="analyze a trial from a JSON spec")
    a.add_argument("--spec", required=True)

    a = sub.add_parser("power", parents=[common], help="power at an assumed alternative")
    a.add_argument("--spec", required=True)

    a = sub.add_parser("sample-size", parents=[common], help="minimum sample size for a target power")
    a.add_argument("--spec", required=True)
    a.add_argument("--target-power", type=float)

    a = sub.add_parser("simulate", parents=[common], help="Monte Carlo rejection rates (CSV)")
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenarios", help="JSON list of scenarios")
    src.add_argument("--preset", choices=["table2", "table3"])
    a.add_argument("--reps", type=int, default=10_000)
    a.add_argument("--seed", type=int, default=20240101)
    a.add_argument("--boot-reps", type=int, default=1000)
    a.add_argument("--method", action="append", choices=["CCZQ", "TL", "PW", "BLT"])
    a.add_argument("--alpha-margin-scale", choices=["sigma", "nominal"])
    a.add_argument("--calibration", choices=["joint", "marginal"])
    a.add_argument("--plug-in-alpha", action="store_true", help="re-solve alpha' per replicate")

    a = sub.add_parser("table1", parents=[common], help="grid of adjusted levels (CSV)")
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--m", type=_ints, default=TABLE1_GRID["m"])
    a.add_argument("--rho", type=_floats, default=TABLE1_GRID["rho"])
    a.add_argument("--c", type=_floats, default=TABLE1_GRID["c"])
    a.add_argument("--d", type=_floats, default=TABLE1_GRID["d"])

    a = sub.add_parser("figure1", parents=[common], help="critical value against margin (CSV)")
    a.add_argument("--m", type=_ints, default=[2, 3])
    a.add_argument("--rho", type=_floats, default=[0.0, 0.5])
    a.add_argument("--d", type=float, default=50)
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--c-min", type=float, default=0.0)
    a.add_argument("--c-max", type=float, default=5.0)
    a.add_argument("--steps", type=int, default=51)

    a = sub.add_parser("rho0", parents=[common], help="Armitage-Parmar common correlation of a CSV matrix")
    a.add_argument("--corr", required=True)

    a = sub.add_parser("replay", parents=[common], help="re-run the command recorded in an artifact")
    a.add_argument("--artifact", required=True)
    return parser


def _params(ns: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(ns).items() if k not in PRESENTATION}


def execute(command: str, params: dict, *, threads=1) -> str:
    handler = HANDLERS[command]
    diagnostics = bool(params.get("diagnostics"))
    full_precision = bool(params.get("full_precision"))
    if command in PARALLEL:
        kind, payload = handler(params, diagnostics, workers=max(1, threads))
    else:
        kind, payload = handler(params, diagnostics)
    manifest = RunManifest(command, params, int(params.get("seed") or 0))
    digits = 17 if full_precision else 6
    if kind == "json":
        return json_artifact(manifest, payload, digits)
    columns, rows = payload
    return csv_artifact(manifest, columns, rows, digits)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if ns.command == "replay":
            man = read_manifest(Path(ns.artifact).read_text())
            if man.command not in HANDLERS:
                raise InvalidParameterError(f"cannot replay command {man.command!r}")
            text = execute(man.command, man.params, threads=ns.threads)
        else:
            text = execute(ns.command, _params(ns), threads=ns.threads)
    except InvalidParameterError as exc:
        errors = getattr(exc, "errors", None)
        if errors:
            for e in errors:
                print(f"error: {e}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        bracket = getattr(exc, "bracket", None)
        if bracket is not None:
            print(f"bracket: {list(bracket)}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if ns.out:
        Path(ns.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
