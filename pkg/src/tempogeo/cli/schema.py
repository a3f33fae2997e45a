"""JSON schema for scenario files and full validation without simulation."""

from __future__ import annotations

import difflib
import json
from typing import Any

from jsonschema import Draft202012Validator

from tempogeo import fields as F

ANALYSES = [
    "test_antidevelopment",
    "test_hessian",
    "intrinsic_qv",
    "orthonormality",
    "transport_oracle",
    "representation",
    "liouville",
    "counterexample_qv",
    "lift_relation",
    "gprocess_crosscheck",
    "heat",
    "roundtrip",
    "damped_transport",
]

_dsl = {"type": "string", "minLength": 1}
_num = {"type": "number"}
_range = {"type": "array", "items": {"anyOf": [_num, {"type": "null"}]}, "minItems": 2, "maxItems": 2}

_analysis = {
    "type": "object",
    "required": ["type"],
    "additionalProperties": False,
    "properties": {
        "type": {"enum": ANALYSES},
        "expect": {"enum": ["consistent", "rejected"]},
        "min_statistic": _num,
        "threshold": _num,
        "buckets": {"type": "integer", "minimum": 1},
        "test_functions": {"type": "array", "items": _dsl},
        "bilinear": {
            "oneOf": [
                {"enum": ["metric"]},
                {"type": "array", "items": {"type": "array", "items": _dsl}},
            ]
        },
        "expected": _num,
        "tolerance": _num,
        "paths": {"type": "integer", "minimum": 1},
        "halvings": {"type": "integer", "minimum": 1},
        "max_defect": _num,
        "ratio_range": _range,
        "flavor": {"enum": ["connection_horizontal", "riemann_horizontal"]},
        "x": _num,
        "v": _num,
        "K": _num,
        "g0_qv": _range,
        "g_qv": _range,
        "displacement": _range,
        "oracle": _dsl,
        "decay_rate": _num,
        "agreement": _num,
        "csv_every": {"type": "integer", "minimum": 1},
        "horizon": _num,
        "steps": {"type": "integer", "minimum": 1},
    },
}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "tempogeo scenario",
    "type": "object",
    "required": ["name", "manifold", "geometry", "grid", "ensemble", "analysis"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "description": {"type": "string"},
        "anchor": {"type": "string"},
        "manifold": {
            "type": "object",
            "required": ["dim"],
            "additionalProperties": False,
            "properties": {
                "dim": {"type": "integer", "minimum": 1, "maximum": 8},
                "domain": {"enum": ["euclidean", "circle", "torus"]},
                "period": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "metric": {"type": "array", "items": {"type": "array", "items": _dsl}},
                "christoffel": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "array", "items": _dsl}},
                },
            },
        },
        "process": {
            "type": "object",
            "required": ["kind", "x0"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["sde", "gt_brownian"]},
                "x0": {"type": "array", "items": _num, "minItems": 1},
                "drift": {"type": "array", "items": _dsl},
                "diffusion": {"type": "array", "items": {"type": "array", "items": _dsl}},
                "convention": {"enum": ["ito", "stratonovich"]},
            },
        },
        "heat": {
            "type": "object",
            "required": ["u_init", "T1", "T2"],
            "additionalProperties": False,
            "properties": {
                "u_init": _dsl,
                "T1": _num,
                "T2": _num,
                "n_theta": {"type": "integer", "minimum": 8},
            },
        },
        "grid": {
            "type": "object",
            "required": ["T", "n"],
            "additionalProperties": False,
            "properties": {"t0": _num, "T": _num, "n": {"type": "integer", "minimum": 1}},
        },
        "ensemble": {
            "type": "object",
            "required": ["N", "seed"],
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "chunk": {"type": "integer", "minimum": 1},
            },
        },
        "analysis": {"type": "array", "items": _analysis, "minItems": 1},
        "output": {"type": "string"},
    },
}

_NEEDS_METRIC = {
    "intrinsic_qv",
    "orthonormality",
    "transport_oracle",
    "representation",
    "liouville",
    "lift_relation",
    "heat",
    "damped_transport",
}
_NEEDS_PROCESS = {
    "test_antidevelopment",
    "test_hessian",
    "intrinsic_qv",
    "orthonormality",
    "transport_oracle",
    "counterexample_qv",
    "lift_relation",
    "gprocess_crosscheck",
    "damped_transport",
}
_NEEDS_HEAT = {"representation", "liouville", "heat"}


def _path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _check_dsl(diags: list, where: str, source: str, dim: int):
    try:
        F.ScalarField.parse(source, dim)
    except F.FieldError as err:
        diags.append(f"{where}: {err}")


def _check_matrix(diags, where, rows, d, cols=None):
    if len(rows) != d or any(len(r) != (d if cols is None else cols) for r in rows):
        shape = f"{d}x{d}" if cols is None else f"{d}x{cols}"
        diags.append(f"{where}: expected a {shape} matrix")
        return False
    return True


def _format(err) -> list[str]:
    """Unknown keys are reported at their own path with the closest known key."""
    if err.validator != "additionalProperties" or not isinstance(err.instance, dict):
        return [f"{_path(err.absolute_path)}: {err.message}"]
    known = list(err.schema.get("properties", {}))
    out = []
    for key in sorted(set(err.instance) - set(known)):
        msg = f"{_path([*err.absolute_path, key])}: unknown field"
        close = difflib.get_close_matches(key, known, n=1)
        out.append(msg + (f" (did you mean `{close[0]}`?)" if close else ""))
    return out


def diagnostics(doc: Any) -> list[str]:
    """All schema, DSL and consistency problems of a scenario document."""
    validator = Draft202012Validator(SCHEMA)
    diags = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))):
        diags.extend(_format(err))
    if diags:
        return diags
    d = doc["manifold"]["dim"]
    geo = doc["geometry"]
    if ("metric" in geo) == ("christoffel" in geo):
        diags.append("$.geometry: give exactly one of `metric` or `christoffel`")
    if "metric" in geo and _check_matrix(diags, "$.geometry.metric", geo["metric"], d):
        for i, row in enumerate(geo["metric"]):
            for j, src in enumerate(row):
                _check_dsl(diags, f"$.geometry.metric[{i}][{j}]", src, d)
    if "christoffel" in geo:
        sym = geo["christoffel"]
        if len(sym) != d:
            diags.append(f"$.geometry.christoffel: expected {d} blocks")
        else:
            for i, block in enumerate(sym):
                if _check_matrix(diags, f"$.geometry.christoffel[{i}]", block, d):
                    for j, row in enumerate(block):
                        for k, src in enumerate(row):
                            _check_dsl(diags, f"$.geometry.christoffel[{i}][{j}][{k}]", src, d)
    proc = doc.get("process")
    if proc is not None:
        if len(proc["x0"]) != d:
            diags.append(f"$.process.x0: expected {d} coordinates")
        if proc["kind"] == "sde":
            if "drift" not in proc or "diffusion" not in proc:
                diags.append("$.process: an sde process needs `drift` and `diffusion`")
            else:
                if len(proc["drift"]) != d:
                    diags.append(f"$.process.drift: expected {d} components")
                for i, src in enumerate(proc["drift"]):
                    _check_dsl(diags, f"$.process.drift[{i}]", src, d)
                diff = proc["diffusion"]
                cols = len(diff[0]) if diff else 0
                if cols == 0:
                    diags.append("$.process.diffusion: expected a non-empty matrix")
                elif _check_matrix(diags, "$.process.diffusion", diff, d, cols):
                    for i, row in enumerate(diff):
                        for j, src in enumerate(row):
                            _check_dsl(diags, f"$.process.diffusion[{i}][{j}]", src, d)
        elif "metric" not in geo:
            diags.append("$.process: a gt_brownian process needs a metric")
    grid = doc["grid"]
    if not grid["T"] > grid.get("t0", 0.0):
        diags.append("$.grid: need T > t0")
    heat = doc.get("heat")
    if heat is not None:
        _check_dsl(diags, "$.heat.u_init", heat["u_init"], 1)
        if not heat["T2"] >= heat["T1"]:
            diags.append("$.heat: need T2 >= T1")
        if d != 1:
            diags.append("$.heat: the heat solver needs dim 1")
    for i, a in enumerate(doc["analysis"]):
        kind = a["type"]
        where = f"$.analysis[{i}]"
        if kind in _NEEDS_METRIC and "metric" not in geo:
            diags.append(f"{where}: `{kind}` needs a metric")
        if kind in _NEEDS_PROCESS and proc is None:
            diags.append(f"{where}: `{kind}` needs a process")
        if kind in _NEEDS_HEAT and heat is None:
            diags.append(f"{where}: `{kind}` needs a heat section")
        if kind == "transport_oracle" and d != 1:
            diags.append(f"{where}: `transport_oracle` needs dim 1")
        for j, src in enumerate(a.get("test_functions", [])):
            _check_dsl(diags, f"{where}.test_functions[{j}]", src, d)
        if "oracle" in a:
            _check_dsl(diags, f"{where}.oracle", a["oracle"], d)
        b = a.get("bilinear")
        if isinstance(b, list) and _check_matrix(diags, f"{where}.bilinear", b, d):
            for r, row in enumerate(b):
                for c, src in enumerate(row):
                    _check_dsl(diags, f"{where}.bilinear[{r}][{c}]", src, d)
    return diags


def load(path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
