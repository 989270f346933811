"""JSON problem/config files: schemas, validation and object construction.

Every file carries a versioned ``schema`` string. Paths inside a file
(for example MLP weights) are resolved relative to that file.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

import jsonschema
import numpy as np

from reachkit.dynamics import MODELS, MlpResidual, MlpWeights
from reachkit.geometry import AxisAlignedBox, Ellipsoid
from reachkit.planner import Obstacle, OcpSpec, ScpConfig
from reachkit.randup import Beta, SamplerConfig, UncertaintySpec
from reachkit.robup import AdversarialConfig

REACH_SCHEMA_ID = "reachkit.reach/1"
OCP_SCHEMA_ID = "reachkit.ocp/1"
EXPERIMENT_SCHEMA_ID = "reachkit.experiment/1"
TRAIN_SCHEMA_ID = "reachkit.train/1"
REACH_RESULT_ID = "reachkit.reach-result/1"
PLAN_RESULT_ID = "reachkit.plan-result/1"
REPORT_ID = "reachkit.report/1"


class ConfigError(ValueError):
    """Raised for malformed or schema-violating config files."""


_vector = {"type": "array", "items": {"type": "number"}}
_matrix = {"type": "array", "items": _vector}
_bound_vector = {"type": "array", "items": {"type": ["number", "null"]}}

_box = {
    "type": "object",
    "oneOf": [
        {"required": ["lower", "upper"]},
        {"required": ["center", "half_widths"]},
    ],
    "properties": {"lower": _bound_vector, "upper": _bound_vector,
                   "center": _vector, "half_widths": _vector},
    "additionalProperties": False,
}

_set = {
    "type": "object",
    "oneOf": [{"required": ["box"]}, {"required": ["ellipsoid"]}],
    "properties": {
        "box": _box,
        "ellipsoid": {"type": "object", "required": ["center", "shape"],
                      "properties": {"center": _vector, "shape": _matrix},
                      "additionalProperties": False},
    },
    "additionalProperties": False,
}

_model = {
    "type": "object",
    "required": ["name"],
    "properties": {
        "name": {"enum": sorted(MODELS)},
        "params": {"type": "object"},
        "weights": {"type": "string"},
    },
    "additionalProperties": False,
}

_sampler = {
    "type": "object",
    "properties": {
        "particles": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "distribution": {"oneOf": [
            {"const": "uniform"},
            {"type": "object", "required": ["alpha", "beta"],
             "properties": {"alpha": {"type": "number", "exclusiveMinimum": 0},
                            "beta": {"type": "number", "exclusiveMinimum": 0}},
             "additionalProperties": False},
        ]},
    },
    "additionalProperties": False,
}

_adversarial = {
    "type": "object",
    "properties": {"step_size": {"type": "number", "minimum": 0},
                   "n_adv": {"type": "integer", "minimum": 1},
                   "regularizer": {"type": "number", "minimum": 0}},
    "additionalProperties": False,
}

REACH_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "model", "horizon", "x0", "controls"],
    "properties": {
        "schema": {"const": REACH_SCHEMA_ID},
        "model": _model,
        "horizon": {"type": "integer", "minimum": 1},
        "x0": _set,
        "controls": {"oneOf": [
            {"type": "object", "required": ["box"], "properties": {"box": _box},
             "additionalProperties": False},
            {"type": "object", "required": ["sequence"], "properties": {"sequence": _matrix},
             "additionalProperties": False},
        ]},
        "theta": _set,
        "disturbance": _set,
        "hull_dims": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "sampler": _sampler,
        "adversarial": _adversarial,
        "lipschitz": {"type": "object", "required": ["constants"],
                      "properties": {"constants": _vector, "paper_literal": {"type": "boolean"}},
                      "additionalProperties": False},
    },
    "additionalProperties": False,
}

_obstacle = {
    "type": "object",
    "required": ["center", "radius"],
    "properties": {"center": _vector, "radius": {"type": "number", "exclusiveMinimum": 0},
                   "axis": _vector},
    "additionalProperties": False,
}

OCP_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "model", "horizon", "x0", "control_bounds", "goal", "state_bounds"],
    "properties": {
        "schema": {"const": OCP_SCHEMA_ID},
        "model": _model,
        "horizon": {"type": "integer", "minimum": 1},
        "x0": _set,
        "x0_nominal": _vector,
        "theta": _set,
        "disturbance": _set,
        "theta_nominal": _vector,
        "w_nominal": _vector,
        "control_bounds": _box,
        "goal": _box,
        "state_bounds": _box,
        "obstacles": {"type": "array", "items": _obstacle},
        "position_dims": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "cost": {"type": "object",
                 "properties": {"control_weights": _vector, "terminal_weights": _vector,
                                "terminal_target": _vector},
                 "additionalProperties": False},
        "initial_guess": {"type": "object",
                          "properties": {"states": _matrix, "controls": _matrix},
                          "additionalProperties": False},
        "scp": {"type": "object",
                "properties": {"max_iters": {"type": "integer", "minimum": 1},
                               "tol": {"type": "number", "exclusiveMinimum": 0},
                               "trust_fraction": {"type": "number", "exclusiveMinimum": 0},
                               "qp_tol": {"type": "number", "exclusiveMinimum": 0},
                               "qp_max_iter": {"type": "integer", "minimum": 1},
                               "method": {"enum": ["randup", "robup"]}},
                "additionalProperties": False},
        "sampler": _sampler,
        "adversarial": _adversarial,
        "audit": {"type": "object",
                  "properties": {"particles": {"type": "integer", "minimum": 1},
                                 "seed": {"type": "integer", "minimum": 0}},
                  "additionalProperties": False},
    },
    "additionalProperties": False,
}

EXPERIMENT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "kind"],
    "properties": {
        "schema": {"const": EXPERIMENT_SCHEMA_ID},
        "kind": {"enum": ["linear_comparison", "nn_coverage", "spacecraft_sweep",
                          "spacecraft_plan", "sensitivity"]},
        "seed": {"type": "integer", "minimum": 0},
        "repetitions": {"type": "integer", "minimum": 1},
        "schedule": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "n_adv": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "params": {"type": "object"},
        "problem": {"type": "string"},
        "weights": {"type": "string"},
        "output_dir": {"type": "string"},
    },
    "additionalProperties": False,
}

TRAIN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema"],
    "properties": {
        "schema": {"const": TRAIN_SCHEMA_ID},
        "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "steps": {"type": "integer", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "lr_decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "l2": {"type": "number", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "input_shrink": {"type": "number", "exclusiveMinimum": 0},
        "polish_samples": {"type": "integer", "minimum": 0},
        "polish_ridge": {"type": "number", "minimum": 0},
        "dataset": {"type": "object",
                    "properties": {"state_low": _vector, "state_high": _vector,
                                   "control_low": _vector, "control_high": _vector},
                    "additionalProperties": False},
    },
    "additionalProperties": False,
}

_report_row = {
    "type": "object",
    "required": ["method", "M", "k", "mean", "std"],
    "properties": {"method": {"type": "string"}, "M": {"type": "integer"},
                   "k": {"type": "integer"}, "mean": {"type": "number"},
                   "std": {"type": "number"}},
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema", "kind", "rows"],
    "properties": {"schema": {"const": REPORT_ID}, "kind": {"type": "string"},
                   "rows": {"type": "array", "items": _report_row}},
}

REACH_RESULT_SCHEMA = {
    "type": "object",
    "required": ["schema", "method", "horizon", "steps"],
    "properties": {"schema": {"const": REACH_RESULT_ID}, "method": {"type": "string"},
                   "horizon": {"type": "integer"},
                   "steps": {"type": "array", "items": {
                       "type": "object", "required": ["k", "center"]}}},
}

PLAN_RESULT_SCHEMA = {
    "type": "object",
    "required": ["schema", "status", "iterations", "states", "controls", "history"],
    "properties": {"schema": {"const": PLAN_RESULT_ID},
                   "status": {"enum": ["converged", "infeasible_subproblem", "max_iters"]},
                   "iterations": {"type": "integer"}, "states": _matrix, "controls": _matrix,
                   "history": {"type": "array"}, "audit": {"type": "object"}},
}

SCHEMAS = {REACH_SCHEMA_ID: REACH_SCHEMA, OCP_SCHEMA_ID: OCP_SCHEMA,
           EXPERIMENT_SCHEMA_ID: EXPERIMENT_SCHEMA, TRAIN_SCHEMA_ID: TRAIN_SCHEMA}


def validate(doc: dict, schema: dict) -> None:
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {err.message}") from None


def load_config(path: Union[str, Path]) -> dict:
    """Read a JSON file, check its ``schema`` tag and validate it."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read {path}: {err}") from None
    if not isinstance(doc, dict) or doc.get("schema") not in SCHEMAS:
        raise ConfigError(f"{path}: unknown or missing schema tag (expected one of {sorted(SCHEMAS)})")
    validate(doc, SCHEMAS[doc["schema"]])
    doc["_base"] = str(path.parent.resolve())
    return doc


def _bounds(values):
    return np.array([np.nan if v is None else v for v in values], dtype=float)


def build_box(doc: dict) -> AxisAlignedBox:
    """Box from ``lower``/``upper`` (``null`` means unbounded) or ``center``/``half_widths``."""
    if "center" in doc:
        return AxisAlignedBox.from_center(np.asarray(doc["center"], float), np.asarray(doc["half_widths"], float))
    lower = _bounds(doc["lower"])
    upper = _bounds(doc["upper"])
    lower[np.isnan(lower)] = -np.inf
    upper[np.isnan(upper)] = np.inf
    return AxisAlignedBox(lower, upper)


def build_set(doc: dict):
    if "box" in doc:
        return build_box(doc["box"])
    e = doc["ellipsoid"]
    return Ellipsoid(np.asarray(e["center"], float), np.asarray(e["shape"], float))


def _resolve(base: Optional[str], path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base is None else Path(base) / p


def build_model(doc: dict, base: Optional[str] = None):
    name = doc["name"]
    params = dict(doc.get("params", {}))
    if name == "mlp_residual":
        if "weights" not in doc:
            raise ConfigError("mlp_residual needs a 'weights' file")
        weights = MlpWeights.load(_resolve(base, doc["weights"]))
        params.setdefault("n", weights.n_outputs)
        params.setdefault("m", weights.n_inputs - params["n"])
        return MlpResidual(weights, **params)
    try:
        return MODELS[name](**params)
    except TypeError as err:
        raise ConfigError(f"bad parameters for model {name!r}: {err}") from None


def build_uncertainty(doc: dict, model) -> UncertaintySpec:
    N = doc["horizon"]
    x0 = build_set(doc["x0"])
    ctrl = doc["controls"]
    controls = build_box(ctrl["box"]) if "box" in ctrl else np.asarray(ctrl["sequence"], float)
    theta = build_set(doc["theta"]) if "theta" in doc else None
    dist = build_set(doc["disturbance"]) if "disturbance" in doc else None
    if isinstance(controls, np.ndarray) and controls.shape != (N, model.m):
        raise ConfigError(f"control sequence must be {(N, model.m)}, got {controls.shape}")
    spec = UncertaintySpec.build(x0, controls, N, theta, dist)
    try:
        spec.check_model(model)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return spec


def build_sampler(doc: Optional[dict], particles: Optional[int] = None,
                  seed: Optional[int] = None) -> SamplerConfig:
    doc = doc or {}
    dist = doc.get("distribution", "uniform")
    if isinstance(dist, dict):
        dist = Beta(dist["alpha"], dist["beta"])
    return SamplerConfig(particles if particles is not None else doc.get("particles", 100),
                         seed if seed is not None else doc.get("seed", 0), dist)


def build_adversarial(doc: Optional[dict], n_adv: Optional[int] = None) -> AdversarialConfig:
    doc = dict(doc or {})
    if n_adv is not None:
        doc["n_adv"] = n_adv
    return AdversarialConfig(**doc)


def build_ocp(doc: dict):
    """Return ``(OcpSpec, ScpConfig, method, init_states, init_controls)``."""
    model = build_model(doc["model"], doc.get("_base"))
    N = doc["horizon"]
    x0_set = build_set(doc["x0"])
    theta = build_set(doc["theta"]) if "theta" in doc else None
    dist = build_set(doc["disturbance"]) if "disturbance" in doc else None
    unc = UncertaintySpec.build(x0_set, np.zeros((N, model.m)), N, theta, dist)
    try:
        unc.check_model(model)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    cost = doc.get("cost", {})
    arr = lambda key, src=doc: None if key not in src else np.asarray(src[key], float)  # noqa: E731
    obstacles = [Obstacle(o["center"], o["radius"], o.get("axis")) for o in doc.get("obstacles", [])]
    spec = OcpSpec(
        model=model, uncertainty=unc, control_bounds=build_box(doc["control_bounds"]),
        x0_nominal=arr("x0_nominal") if "x0_nominal" in doc else x0_set.center,
        goal=build_box(doc["goal"]), state_bounds=build_box(doc["state_bounds"]),
        obstacles=obstacles, position_dims=doc.get("position_dims", [0, 1, 2]),
        control_weights=arr("control_weights", cost), terminal_weights=arr("terminal_weights", cost),
        terminal_target=arr("terminal_target", cost), theta_nominal=arr("theta_nominal"),
        w_nominal=arr("w_nominal"))
    scp_doc = dict(doc.get("scp", {}))
    method = scp_doc.pop("method", "robup")
    guess = doc.get("initial_guess", {})
    init_states = arr("states", guess)
    init_controls = arr("controls", guess)
    return spec, ScpConfig(**scp_doc), method, init_states, init_controls


def dumps(doc: Any) -> str:
    """Canonical JSON text (sorted keys, fixed float repr) for byte-stable output."""
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=True) + "\n"


def to_jsonable(obj) -> Any:
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def schema_docs() -> Dict[str, dict]:
    """All published schemas keyed by id."""
    return {**SCHEMAS, REPORT_ID: REPORT_SCHEMA,
            REACH_RESULT_ID: REACH_RESULT_SCHEMA,
            PLAN_RESULT_ID: PLAN_RESULT_SCHEMA}
