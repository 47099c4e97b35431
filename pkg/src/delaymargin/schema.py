"""JSON system descriptions: schema, loading and dumping.

Example::

    {
      "n": 1, "p": 1,
      "A": [[0.0]], "B": [[1.0]],
      "discrete": [{"delay": 1.0, "matrix": [[-1.0]]}],
      "perturbation": {"mu": [0.3], "one_sided": true},
      "controller": [{"delay": 0.0, "matrix": [[-1.0]]}]
    }

Matrices are row-major nested arrays.  ``neutral``, ``discrete`` and
``input_delays`` are lists of {delay, matrix}; ``distributed`` is
{D, coeffs} with h(theta) = sum coeffs[k] theta^k.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .errors import SchemaError
from .model import (
    Constant,
    Controller,
    DelayRealization,
    DelaySystem,
    Distributed,
    PerturbationBounds,
    PiecewiseLinear,
    Sinusoid,
)

_NUM = {"type": "number"}
_MATRIX = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": _NUM}}
_TERMS = {
    "type": "array",
    "items": {
        "type": "object",
        "properties": {"delay": {"type": "number", "minimum": 0}, "matrix": _MATRIX},
        "required": ["delay", "matrix"],
        "additionalProperties": False,
    },
}
_RADII = {"type": "array", "items": {"type": "number", "minimum": 0}}

SYSTEM_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "delay system",
    "type": "object",
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "p": {"type": "integer", "minimum": 1},
        "A": _MATRIX,
        "B": _MATRIX,
        "neutral": _TERMS,
        "discrete": _TERMS,
        "distributed": {
            "type": ["object", "null"],
            "properties": {"D": {"type": "number", "exclusiveMinimum": 0},
                           "coeffs": {"type": "array", "minItems": 1, "items": _NUM}},
            "required": ["D", "coeffs"],
            "additionalProperties": False,
        },
        "input_delays": _TERMS,
        "perturbation": {
            "type": "object",
            "properties": {"eta": _RADII, "mu": _RADII, "eps": {"type": "number", "minimum": 0}, "nu": _RADII,
                           "one_sided": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "controller": _TERMS,
        "name": {"type": "string"},
    },
    "required": ["n", "p", "A", "B"],
    "additionalProperties": False,
}

_TRAJ = {
    "type": "object",
    "oneOf": [
        {"properties": {"kind": {"const": "constant"}, "value": _NUM}, "required": ["kind", "value"]},
        {"properties": {"kind": {"const": "sinusoid"}, "center": _NUM, "amplitude": _NUM, "omega": _NUM,
                        "phase": _NUM}, "required": ["kind", "center", "amplitude", "omega"]},
        {"properties": {"kind": {"const": "piecewise_linear"}, "times": {"type": "array", "items": _NUM},
                        "values": {"type": "array", "items": _NUM}}, "required": ["kind", "times", "values"]},
    ],
}
REALIZATION_SCHEMA = {
    "type": "object",
    "properties": {
        "neutral": {"type": "array", "items": _TRAJ},
        "discrete": {"type": "array", "items": _TRAJ},
        "input": {"type": "array", "items": _TRAJ},
        "distributed": {"oneOf": [_TRAJ, {"type": "null"}]},
    },
    "additionalProperties": False,
}


@dataclass(frozen=True)
class SystemFile:
    system: DelaySystem
    perturbation: PerturbationBounds
    controller: Controller | None
    digest: str
    name: str = ""


def _path(err) -> str:
    out = "$"
    for part in err.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def _validate(doc, schema, what):
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{_path(e)}: {e.message}" for e in errors[:10]]
        raise SchemaError(f"invalid {what}:\n  " + "\n  ".join(lines))


def _loads(text: str, source: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def digest(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _terms(items):
    return [(t["delay"], t["matrix"]) for t in items or ()]


def parse_system(doc: dict) -> SystemFile:
    """Validate a parsed JSON document and build the domain objects."""
    _validate(doc, SYSTEM_SCHEMA, "system description")
    n, p = doc["n"], doc["p"]
    A, B = doc["A"], doc["B"]
    if len(A) != n or any(len(r) != n for r in A):
        raise SchemaError(f"$.A: expected a {n}x{n} matrix")
    if len(B) != n or any(len(r) != p for r in B):
        raise SchemaError(f"$.B: expected a {n}x{p} matrix")
    dist = doc.get("distributed")
    sys = DelaySystem(
        A, B,
        neutral=_terms(doc.get("neutral")),
        discrete=_terms(doc.get("discrete")),
        distributed=Distributed(float(dist["D"]), tuple(dist["coeffs"])) if dist else None,
        input_delays=_terms(doc.get("input_delays")),
    )
    pd = doc.get("perturbation", {})
    pert = PerturbationBounds(tuple(pd.get("eta", ())), tuple(pd.get("mu", ())), float(pd.get("eps", 0.0)),
                              tuple(pd.get("nu", ())), bool(pd.get("one_sided", False))).for_system(sys)
    ctrl = None
    if doc.get("controller"):
        ctrl = Controller(tuple(_terms(doc["controller"])))
        for i, (_, K) in enumerate(ctrl.kernel):
            if K.shape != (p, n):
                raise SchemaError(f"$.controller[{i}].matrix: expected a {p}x{n} matrix, got {K.shape}")
    return SystemFile(sys, pert, ctrl, digest(doc), doc.get("name", ""))


def load_system(path: str | Path) -> SystemFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"{path}: {exc.strerror}") from None
    return parse_system(_loads(text, str(path)))


def _mat(M):
    return [[float(v) for v in row] for row in M]


def dump_system(sys: DelaySystem, pert: PerturbationBounds | None = None, ctrl: Controller | None = None,
                name: str = "") -> dict:
    doc = {"n": sys.n, "p": sys.p, "A": _mat(sys.A), "B": _mat(sys.B)}
    for key, terms in (("neutral", sys.neutral), ("discrete", sys.discrete), ("input_delays", sys.input_delays)):
        if terms:
            doc[key] = [{"delay": float(d), "matrix": _mat(M)} for d, M in terms]
    if sys.distributed is not None:
        doc["distributed"] = {"D": sys.distributed.D, "coeffs": list(sys.distributed.coeffs)}
    if pert is not None:
        doc["perturbation"] = {"eta": list(pert.eta), "mu": list(pert.mu), "eps": pert.eps, "nu": list(pert.nu),
                               "one_sided": pert.one_sided}
    if ctrl is not None and ctrl.kernel:
        doc["controller"] = [{"delay": float(t), "matrix": _mat(K)} for t, K in ctrl.kernel]
    if name:
        doc["name"] = name
    return doc


def _trajectory(d):
    kind = d["kind"]
    if kind == "constant":
        return Constant(float(d["value"]))
    if kind == "sinusoid":
        return Sinusoid(float(d["center"]), float(d["amplitude"]), float(d["omega"]), float(d.get("phase", 0.0)))
    return PiecewiseLinear(tuple(d["times"]), tuple(d["values"]))


def parse_realization(doc: dict, sys: DelaySystem) -> DelayRealization:
    """Trajectories per delay group; omitted groups stay at their nominal constants."""
    _validate(doc, REALIZATION_SCHEMA, "delay realization")
    nom = DelayRealization.nominal(sys)
    real = DelayRealization(
        tuple(_trajectory(d) for d in doc["neutral"]) if "neutral" in doc else nom.neutral,
        tuple(_trajectory(d) for d in doc["discrete"]) if "discrete" in doc else nom.discrete,
        _trajectory(doc["distributed"]) if doc.get("distributed") else nom.distributed,
        tuple(_trajectory(d) for d in doc["input"]) if "input" in doc else nom.inputs,
    )
    real.check(sys)
    return real


def load_realization(spec: str, sys: DelaySystem) -> DelayRealization:
    """``spec`` is a path to a JSON file or an inline JSON object."""
    text = spec if spec.lstrip().startswith("{") else Path(spec).read_text(encoding="utf-8")
    return parse_realization(_loads(text, "delays"), sys)
