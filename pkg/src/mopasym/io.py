"""File formats: strict model / band / run-config JSON and lossless CSV.

Every JSON document is checked against a closed schema (unknown keys are
errors) and then against the numerical invariants the library needs, so a
bad file is rejected with the name of the invariant it breaks.  The formats
are described with examples in ``docs/formats.md``.
"""

from __future__ import annotations

import hashlib
import io as _io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .core_linalg import hermitian_defect
from .ensembles import BandEnsembleSpec, VaryingProfile
from .recurrence import CoefficientSequence, Perturbation
from .symbol import PeriodicSymbol, make_symbol

HERMITIAN_RTOL = 1e-12
SINGULAR_RTOL = 1e-12


class ModelError(ValueError):
    """A configuration document breaks a schema rule or a model invariant."""

    def __init__(self, message: str, invariant: str, details: dict | None = None):
        super().__init__(message)
        self.invariant = invariant
        self.details = details or {}

    def to_dict(self) -> dict:
        return {"error": str(self), "invariant": self.invariant, **self.details}


# ---------------------------------------------------------------------------
# schemas
# ---------------------------------------------------------------------------

_COMPLEX = {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number"}}
_MATRIX = {"type": "array", "minItems": 1,
           "items": {"type": "array", "minItems": 1, "items": _COMPLEX}}
_BLOCK = {"type": "object", "additionalProperties": False, "required": ["A", "B"],
          "properties": {"A": _MATRIX, "B": _MATRIX}}
_R = {"type": "integer", "minimum": 1}

PLAIN_SYMBOL_SCHEMA = {
    "type": "object", "additionalProperties": False, "required": ["r", "A", "B"],
    "properties": {"r": _R, "A": _MATRIX, "B": _MATRIX},
}
PERIODIC_SYMBOL_SCHEMA = {
    "type": "object", "additionalProperties": False, "required": ["r", "period", "blocks"],
    "properties": {"r": _R, "period": {"type": "integer", "minimum": 1},
                   "blocks": {"type": "array", "minItems": 1, "items": _BLOCK}},
}
PERTURBATION_SCHEMA = {
    "type": "object", "additionalProperties": False,
    "required": ["type", "exponent", "amplitude"],
    "properties": {"type": {"const": "power"},
                   "exponent": {"type": "number", "exclusiveMinimum": 0},
                   "amplitude": {"type": "number"},
                   "target": {"enum": ["A", "B", "both"]}},
}
SEQUENCE_SCHEMA = {
    "type": "object", "additionalProperties": False, "required": ["kind", "limit"],
    "properties": {"kind": {"enum": ["constant", "periodic"]},
                   "limit": {"type": "object"},
                   "perturbation": PERTURBATION_SCHEMA},
}
PROFILE_SCHEMA = {
    "type": "object", "additionalProperties": False,
    "required": ["type", "A", "B", "exponent_A", "exponent_B"],
    "properties": {"type": {"const": "power"}, "A": _MATRIX, "B": _MATRIX,
                   "exponent_A": {"type": "number", "minimum": 0},
                   "exponent_B": {"type": "number", "minimum": 0}},
}
VARYING_SCHEMA = {
    "type": "object", "additionalProperties": False, "required": ["kind", "profile"],
    "properties": {"kind": {"const": "varying"}, "profile": PROFILE_SCHEMA},
}
BAND_SCHEMA = {
    "type": "object", "additionalProperties": False,
    "required": ["r", "gammas", "n", "seed", "bins"],
    "properties": {"r": _R,
                   "gammas": {"type": "array", "minItems": 1,
                              "items": {"type": "number", "exclusiveMinimum": 0}},
                   "n": {"type": "integer", "minimum": 1},
                   "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                   "bins": {"type": "integer", "minimum": 1}},
}
RUN_COMMANDS = ("gamma0", "density", "potential", "ratio-check", "chebyshev", "dls-check",
                "periodic-density", "band-sim", "varying-density")
RUN_SCHEMA = {
    "type": "object", "additionalProperties": False, "required": ["command"],
    "properties": {
        "command": {"enum": list(RUN_COMMANDS)},
        "model": {"type": "string"},
        "band": {"type": "string"},
        "grid": {"type": "string"},
        "x": {"type": "number"},
        "s": {"type": "number"},
        "n": {"type": "integer"},
        "n_schedule": {"type": "array", "minItems": 1, "items": {"type": "integer"}},
        "r": {"type": "integer"},
        "gammas": {"type": "array", "items": {"type": "number"}},
        "seed": {"type": "integer"},
        "bins": {"type": "integer"},
        "form": {"type": "string"},
        "which": {"type": "string"},
        "quantity": {"type": "string"},
        "eps": {"type": "number"},
        "tol": {"type": "number"},
        "x_imag": {"type": "number"},
        "out": {"type": "string"},
        "summary": {"type": "string"},
        "format": {"enum": ["csv", "json"]},
    },
}


def _check(doc, schema, what: str):
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ModelError(f"{what}: {exc.message} (at {where})", "schema",
                         {"path": where}) from None


def load_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelError(f"cannot read {path}: {exc.strerror}", "readable file") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})",
                         "valid JSON") from None


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

def _decode_matrix(entries, r: int, name: str) -> np.ndarray:
    rows = len(entries)
    if rows != r or any(len(row) != r for row in entries):
        shape = (rows, max(len(row) for row in entries))
        raise ModelError(f"{name} must be {r}x{r}, got {shape[0]} rows of lengths "
                         f"{sorted({len(row) for row in entries})}", "block shape",
                         {"matrix": name})
    M = np.array([[complex(re, im) for re, im in row] for row in entries])
    if not np.isfinite(M).all():
        raise ModelError(f"{name} has non-finite entries", "finite entries", {"matrix": name})
    return M


def _check_pair(A: np.ndarray, B: np.ndarray, label: str) -> None:
    r = A.shape[0]
    det = abs(np.linalg.det(A))
    if not det > SINGULAR_RTOL * np.linalg.norm(A, 2) ** r:
        raise ModelError(f"{label}: A is singular, |det A| = {det:.6e}", "A nonsingular",
                         {"block": label, "abs_det_A": float(det)})
    defect, (i, j) = hermitian_defect(B)
    if defect > HERMITIAN_RTOL * (1.0 + np.abs(B).max()):
        raise ModelError(
            f"{label}: B is not Hermitian at entries ({i},{j}) and ({j},{i}), "
            f"|B[{i}][{j}] - conj(B[{j}][{i}])| = {defect:.6e}",
            "B Hermitian", {"block": label, "pair": [i, j], "defect": defect})


def symbol_from_dict(doc: dict) -> PeriodicSymbol:
    if not isinstance(doc, dict):
        raise ModelError("a symbol must be a JSON object", "schema")
    periodic = "blocks" in doc or "period" in doc
    _check(doc, PERIODIC_SYMBOL_SCHEMA if periodic else PLAIN_SYMBOL_SCHEMA, "symbol")
    r = doc["r"]
    raw = doc["blocks"] if periodic else [{"A": doc["A"], "B": doc["B"]}]
    if periodic and doc["period"] != len(raw):
        raise ModelError(f"period is {doc['period']} but {len(raw)} blocks are given",
                         "period consistency", {"period": doc["period"], "blocks": len(raw)})
    pairs = []
    for j, blk in enumerate(raw):
        label = f"block {j}" if periodic else "symbol"
        A = _decode_matrix(blk["A"], r, f"{label} A")
        B = _decode_matrix(blk["B"], r, f"{label} B")
        _check_pair(A, B, label)
        pairs.append((A, B))
    return make_symbol(pairs)


def _profile_from_dict(doc: dict) -> VaryingProfile:
    r = len(doc["A"])
    A = _decode_matrix(doc["A"], r, "profile A")
    B = _decode_matrix(doc["B"], r, "profile B")
    _check_pair(A, B, "profile")
    return VaryingProfile.power(A, B, float(doc["exponent_A"]), float(doc["exponent_B"]))


@dataclass(frozen=True)
class Model:
    """A loaded model file: a fixed or periodic symbol, or a varying profile."""

    kind: str
    document: dict
    symbol: PeriodicSymbol | None = None
    perturbation: Perturbation | None = None
    profile: VaryingProfile | None = field(default=None, compare=False)

    def fingerprint(self) -> str:
        return canonical_hash(self.document)

    def sequence(self, N: int | None = None) -> CoefficientSequence:
        if self.kind == "varying":
            if N is None:
                raise ValueError("a varying model needs the scale N")
            return CoefficientSequence.varying(self.profile, N)
        return CoefficientSequence.from_symbol(self.symbol, self.perturbation)


def model_from_dict(doc) -> Model:
    if not isinstance(doc, dict):
        raise ModelError("a model must be a JSON object", "schema")
    if "kind" not in doc:
        sym = symbol_from_dict(doc)
        return Model("constant" if sym.p == 1 else "periodic", doc, sym)
    if doc["kind"] == "varying":
        _check(doc, VARYING_SCHEMA, "varying model")
        return Model("varying", doc, profile=_profile_from_dict(doc["profile"]))
    _check(doc, SEQUENCE_SCHEMA, "coefficient sequence")
    sym = symbol_from_dict(doc["limit"])
    if (doc["kind"] == "constant") != (sym.p == 1):
        raise ModelError(f"kind {doc['kind']!r} does not match a limit of period {sym.p}",
                         "period consistency", {"kind": doc["kind"], "period": sym.p})
    pert = None
    if "perturbation" in doc:
        q = doc["perturbation"]
        pert = Perturbation(float(q["exponent"]), float(q["amplitude"]), q.get("target", "both"))
    return Model(doc["kind"], doc, sym, pert)


def load_model(path) -> Model:
    return model_from_dict(load_json(path))


def band_spec_from_dict(doc) -> tuple[BandEnsembleSpec, int]:
    _check(doc, BAND_SCHEMA, "band spec")
    try:
        spec = BandEnsembleSpec(doc["r"], tuple(doc["gammas"]), doc["n"], doc["seed"])
    except ValueError as exc:
        raise ModelError(f"band spec: {exc}", "band spec") from None
    return spec, doc["bins"]


def check_run_config(doc) -> dict:
    _check(doc, RUN_SCHEMA, "run config")
    return doc


# ---------------------------------------------------------------------------
# grids, hashes, CSV
# ---------------------------------------------------------------------------

def parse_grid(text: str) -> np.ndarray:
    """``"min:max:count"`` to an evenly spaced grid (``count >= 2``, ``min < max``)."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ModelError(f"grid must look like min:max:count, got {text!r}", "grid format")
    try:
        lo, hi = float(parts[0]), float(parts[1])
        count = int(parts[2])
    except ValueError:
        raise ModelError(f"grid must look like min:max:count, got {text!r}", "grid format") from None
    if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
        raise ModelError(f"grid needs finite min < max, got {lo} and {hi}", "grid order")
    if count < 2:
        raise ModelError(f"grid count must be at least 2, got {count}", "grid count")
    return np.linspace(lo, hi, count)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def canonical_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def format_float(v) -> str:
    return "%.17g" % float(v)


def csv_text(columns, rows, meta: dict) -> str:
    buf = _io.StringIO()
    buf.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(format_float(v) for v in row) + "\n")
    return buf.getvalue()


def read_csv(source) -> tuple[dict, list[str], np.ndarray]:
    """Inverse of :func:`csv_text`; accepts a path or the text itself."""
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
    lines = text.splitlines()
    meta = {}
    if lines and lines[0].startswith("#"):
        for item in lines[0][1:].split():
            key, _, value = item.partition("=")
            meta[key] = value
        lines = lines[1:]
    columns = lines[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:] if line],
                    dtype=float).reshape(-1, len(columns))
    return meta, columns, data


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def json_text(obj) -> str:
    """Deterministic JSON; non-finite floats become ``null``."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"
