"""Validation and normalization of JSON analysis documents."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from supnoninf.exceptions import InvalidParameterError
from supnoninf.trial import CORRELATION_SOURCES, DF_MODES, SE_MODES, EndpointSummary, MarginSpec

_NONNEG_VEC = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}
_MATRIX = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}, "minItems": 1}

ANALYSIS_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["endpoints", "margins", "alpha", "correlation"],
    "properties": {
        "endpoints": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["mean_trt", "mean_ctl", "n_trt", "n_ctl"],
                "properties": {
                    "name": {"type": "string"},
                    "mean_trt": {"type": "number"},
                    "mean_ctl": {"type": "number"},
                    "var_trt": {"type": "number", "minimum": 0},
                    "var_ctl": {"type": "number", "minimum": 0},
                    "pooled_sd": {"type": "number", "minimum": 0},
                    "n_trt": {"type": "integer", "minimum": 2},
                    "n_ctl": {"type": "integer", "minimum": 2},
                    "direction": {"enum": ["higher_is_better", "lower_is_better"]},
                },
                "additionalProperties": False,
            },
        },
        "margins": {
            "type": "object",
            "required": ["epsilon"],
            "properties": {
                "epsilon": _NONNEG_VEC,
                "eta": _NONNEG_VEC,
                "eta_sd_fraction": {"type": "number", "minimum": 0},
            },
            "oneOf": [{"required": ["eta"]}, {"required": ["eta_sd_fraction"]}],
            "additionalProperties": False,
        },
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "p": {"type": "integer", "minimum": 1},
        "correlation": {
            "type": "object",
            "required": ["source"],
            "properties": {
                "source": {"enum": list(CORRELATION_SOURCES)},
                "matrix": _MATRIX,
                "cov_trt": _MATRIX,
                "cov_ctl": _MATRIX,
            },
            "additionalProperties": False,
        },
        "modes": {
            "type": "object",
            "properties": {
                "se_mode": {"enum": list(SE_MODES)},
                "df_mode": {"enum": list(DF_MODES)},
            },
            "additionalProperties": False,
        },
        "solver": {
            "type": "object",
            "properties": {
                "zeta": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

_NEGATIVE_HINTS = {
    "eta": "non-inferiority margins must satisfy eta_k >= 0",
    "epsilon": "superiority margins must satisfy epsilon_k >= 0",
}


@dataclass(frozen=True)
class SpecError:
    pointer: str
    message: str

    def __str__(self):
        return f"{self.pointer or '/'}: {self.message}"


class SpecValidationError(InvalidParameterError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(str(e) for e in self.errors))


def _pointer(parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def _schema_errors(doc):
    out = []
    for err in Draft202012Validator(ANALYSIS_SCHEMA).iter_errors(doc):
        path = list(err.absolute_path)
        msg = err.message
        if err.validator == "required":
            missing = err.message.split("'")[1]
            path.append(missing)
            msg = "required field is missing"
        elif err.validator == "minimum" and len(path) >= 2 and path[-2] in _NEGATIVE_HINTS:
            msg = f"{err.instance} is negative; {_NEGATIVE_HINTS[path[-2]]}"
        elif err.validator == "oneOf" and path == ["margins"]:
            msg = "give exactly one of eta or eta_sd_fraction"
        out.append(SpecError(_pointer(path), msg))
    return sorted(out, key=lambda e: e.pointer)


def _square(mat, m, pointer, errors):
    arr = np.asarray(mat, dtype=float) if mat is not None else None
    if arr is None or arr.shape != (m, m):
        errors.append(SpecError(pointer, f"expected a {m}x{m} matrix"))
        return None
    return arr


def validate_spec(doc) -> dict:
    """Return a normalized copy of ``doc`` or raise :class:`SpecValidationError` listing every problem."""
    errors = _schema_errors(doc)
    if errors:
        raise SpecValidationError(errors)
    spec = copy.deepcopy(doc)
    eps = spec["margins"]["epsilon"]
    m = len(spec["endpoints"])
    if len(eps) != m:
        errors.append(SpecError("/margins/epsilon", f"length {len(eps)} does not match {m} endpoints"))
    if "eta" in spec["margins"] and len(spec["margins"]["eta"]) != m:
        errors.append(SpecError("/margins/eta", f"length {len(spec['margins']['eta'])} does not match {m} endpoints"))
    if spec.get("p", 1) > m:
        errors.append(SpecError("/p", f"p exceeds the number of endpoints ({m})"))

    spec.setdefault("p", 1)
    modes = spec.setdefault("modes", {})
    modes.setdefault("df_mode", "per_endpoint")
    solver = spec.setdefault("solver", {})
    solver.setdefault("zeta", 1e-5)
    solver.setdefault("max_iters", 200)
    solver.setdefault("seed", 0)

    has_pooled = [("pooled_sd" in e) for e in spec["endpoints"]]
    has_vars = [("var_trt" in e and "var_ctl" in e) for e in spec["endpoints"]]
    for k, e in enumerate(spec["endpoints"]):
        e.setdefault("direction", "higher_is_better")
        e.setdefault("name", f"endpoint_{k + 1}")
        if ("var_trt" in e) != ("var_ctl" in e):
            errors.append(SpecError(f"/endpoints/{k}", "var_trt and var_ctl must be given together"))
    if "se_mode" not in modes:
        if all(has_pooled):
            modes["se_mode"] = "pooled"
        elif all(has_vars):
            modes["se_mode"] = "unpooled"
        else:
            errors.append(SpecError("/modes/se_mode", "cannot infer: endpoints mix pooled SDs and group variances"))
    need = {"pooled": has_pooled, "unpooled": has_vars}.get(modes.get("se_mode"))
    if need is not None:
        for k, ok in enumerate(need):
            if not ok:
                field_name = "pooled_sd" if modes["se_mode"] == "pooled" else "var_trt/var_ctl"
                errors.append(SpecError(f"/endpoints/{k}", f"se_mode {modes['se_mode']} needs {field_name}"))

    if "eta_sd_fraction" in spec["margins"]:
        if not all(has_pooled):
            errors.append(SpecError("/margins/eta_sd_fraction", "needs a pooled_sd on every endpoint"))
        else:
            frac = spec["margins"].pop("eta_sd_fraction")
            spec["margins"]["eta"] = [frac * e["pooled_sd"] for e in spec["endpoints"]]

    corr = spec["correlation"]
    if corr["source"] == "pooled_matrix":
        for key in ("cov_trt", "cov_ctl"):
            if key not in corr:
                errors.append(SpecError(f"/correlation/{key}", "required for source pooled_matrix"))
            else:
                _square(corr[key], m, f"/correlation/{key}", errors)
    else:
        if "matrix" not in corr:
            errors.append(SpecError("/correlation/matrix", f"required for source {corr['source']}"))
        else:
            _square(corr["matrix"], m, "/correlation/matrix", errors)

    if errors:
        raise SpecValidationError(errors)
    return spec


def load_spec(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SpecValidationError([SpecError("", f"not valid JSON: {exc}")]) from None
    return validate_spec(doc)


def analysis_inputs(spec: dict) -> dict:
    """Keyword arguments for :func:`supnoninf.trial.analyze` from a normalized spec."""
    summaries = [EndpointSummary(**e) for e in spec["endpoints"]]
    margins = MarginSpec(spec["margins"]["epsilon"], spec["margins"]["eta"])
    corr = spec["correlation"]
    return dict(
        summaries=summaries,
        margins=margins,
        alpha=spec["alpha"],
        p=spec["p"],
        correlation_source=corr["source"],
        se_mode=spec["modes"]["se_mode"],
        df_mode=spec["modes"]["df_mode"],
        R=corr.get("matrix"),
        cov_trt=corr.get("cov_trt"),
        cov_ctl=corr.get("cov_ctl"),
        zeta=spec["solver"]["zeta"],
        max_iters=spec["solver"]["max_iters"],
        seed=spec["solver"]["seed"],
    )


POWER_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["endpoints", "margins", "alpha", "correlation", "theta1"],
    "properties": {
        "endpoints": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["pooled_sd"],
                "properties": {
                    "name": {"type": "string"},
                    "pooled_sd": {"type": "number", "exclusiveMinimum": 0},
                    "n_trt": {"type": "integer", "minimum": 2},
                    "n_ctl": {"type": "integer", "minimum": 2},
                },
                "additionalProperties": True,
            },
        },
        "margins": ANALYSIS_SCHEMA["properties"]["margins"],
        "alpha": ANALYSIS_SCHEMA["properties"]["alpha"],
        "p": {"type": "integer", "minimum": 1},
        "correlation": {
            "type": "object",
            "properties": {
                "source": {"enum": ["supplied_matrix", "rho0_exchangeable", "exchangeable"]},
                "matrix": _MATRIX,
                "rho": {"type": "number", "minimum": -1, "maximum": 1},
            },
            "additionalProperties": False,
        },
        "modes": {
            "type": "object",
            "properties": {"df_mode": {"enum": list(DF_MODES)}},
            "additionalProperties": True,
        },
        "theta1": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "scale": {"enum": ["sd_units", "outcome"]},
        "target_power": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "allocation_ratio": {"type": "number", "exclusiveMinimum": 0},
        "mc_reps": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}


def validate_power_spec(doc) -> dict:
    errors = []
    for err in Draft202012Validator(POWER_SCHEMA).iter_errors(doc):
        path = list(err.absolute_path)
        msg = err.message
        if err.validator == "required":
            path.append(err.message.split("'")[1])
            msg = "required field is missing"
        elif err.validator == "minimum" and len(path) >= 2 and path[-2] in _NEGATIVE_HINTS:
            msg = f"{err.instance} is negative; {_NEGATIVE_HINTS[path[-2]]}"
        errors.append(SpecError(_pointer(path), msg))
    if errors:
        raise SpecValidationError(sorted(errors, key=lambda e: e.pointer))
    spec = copy.deepcopy(doc)
    m = len(spec["endpoints"])
    for key in ("theta1",):
        if len(spec[key]) != m:
            errors.append(SpecError(f"/{key}", f"length {len(spec[key])} does not match {m} endpoints"))
    if len(spec["margins"]["epsilon"]) != m:
        errors.append(SpecError("/margins/epsilon", f"length does not match {m} endpoints"))
    if "eta_sd_fraction" in spec["margins"]:
        frac = spec["margins"].pop("eta_sd_fraction")
        spec["margins"]["eta"] = [frac * e["pooled_sd"] for e in spec["endpoints"]]
    elif len(spec["margins"]["eta"]) != m:
        errors.append(SpecError("/margins/eta", f"length does not match {m} endpoints"))
    spec.setdefault("p", 1)
    if spec["p"] > m:
        errors.append(SpecError("/p", f"p exceeds the number of endpoints ({m})"))
    spec.setdefault("scale", "outcome")
    spec.setdefault("allocation_ratio", 1.0)
    spec.setdefault("mc_reps", 200_000)
    spec.setdefault("seed", 0)
    spec.setdefault("modes", {}).setdefault("df_mode", "per_endpoint")
    corr = spec["correlation"]
    if "rho" in corr:
        corr.setdefault("source", "exchangeable")
    elif "matrix" in corr:
        corr.setdefault("source", "supplied_matrix")
        _square(corr["matrix"], m, "/correlation/matrix", errors)
    else:
        errors.append(SpecError("/correlation", "give rho or matrix"))
    if corr.get("source") == "exchangeable" and "rho" not in corr:
        errors.append(SpecError("/correlation/rho", "required for source exchangeable"))
    ns = {(e.get("n_trt"), e.get("n_ctl")) for e in spec["endpoints"]}
    if len(ns) > 1:
        errors.append(SpecError("/endpoints", "all endpoints must share n_trt and n_ctl"))
    if errors:
        raise SpecValidationError(errors)
    return spec


def power_inputs(spec: dict, *, require_n: bool = True):
    """``PowerSpec`` from a normalized power document."""
    from supnoninf.mvt import CorrelationMatrix
    from supnoninf.power import PowerSpec
    from supnoninf.trial import armitage_parmar_rho0

    m = len(spec["endpoints"])
    corr = spec["correlation"]
    if corr["source"] == "exchangeable":
        R = CorrelationMatrix.exchangeable(m, corr["rho"])
    elif corr["source"] == "rho0_exchangeable":
        R = CorrelationMatrix.exchangeable(m, armitage_parmar_rho0(corr["matrix"]))
    else:
        R = CorrelationMatrix(np.asarray(corr["matrix"], dtype=float))
    first = spec["endpoints"][0]
    if require_n and ("n_trt" not in first or "n_ctl" not in first):
        raise SpecValidationError([SpecError("/endpoints/0/n_trt", "sample sizes are required for power")])
    return PowerSpec(
        theta1=spec["theta1"],
        sd=[e["pooled_sd"] for e in spec["endpoints"]],
        margins=MarginSpec(spec["margins"]["epsilon"], spec["margins"]["eta"]),
        R=R,
        n_trt=first.get("n_trt", 2),
        n_ctl=first.get("n_ctl", 2),
        alpha=spec["alpha"],
        p=spec["p"],
        scale=spec["scale"],
        df_mode=spec["modes"]["df_mode"],
        mc_reps=spec["mc_reps"],
        seed=spec["seed"],
    )
