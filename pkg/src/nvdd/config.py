"""
Run configuration: a JSON document whose keys carry their units.

Every key is optional except where a command needs it (``protocols`` for
``scan-n`` and ``coherence``). Parsing validates against :data:`SCHEMA`,
fills defaults, and produces a normalized dictionary; :func:`canonical_json`
of that dictionary is the form that gets hashed and stored in run manifests.

Unit conventions in key names: ``_us``/``_ms`` are microseconds/milliseconds,
``_khz``/``_mhz`` are ordinary frequencies. Bath amplitudes given in kHz are
``b / 2 pi``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from pathlib import Path

import jsonschema

from .engine import ExperimentConfig, FiniteWidth, INSTANTANEOUS
from .noise import BathParams, CalibrationConfig
from .sequences import PROTOCOLS, ErrorModel
from .spinmath import to_angular

DEFAULT_N_GRID = [8, 16, 32, 64, 128, 256, 456, 512]

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "protocols": {"type": "array", "minItems": 1, "items": {"enum": list(PROTOCOLS)}},
        "components": {"type": "array", "minItems": 1, "items": {"enum": ["Sx", "Sy"]}},
        "n_list": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        "n_overrides": {
            "type": "object",
            "propertyNames": {"enum": list(PROTOCOLS)},
            "additionalProperties": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        },
        "tau_us": _pos,
        "tau_list_us": {"type": ["array", "null"], "minItems": 5, "items": _pos},
        "coherence_points": {"type": "integer", "minimum": 5},
        "t2_guess_ms": _pos,
        "t2_estimate_ms": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "error_model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilon": {"type": "number", "exclusiveMinimum": -1},
                "n_z": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
                "phase_jitter_deg": _nonneg,
            },
        },
        "bath": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "properties": {
                "b_khz": _nonneg,
                "tau_c_ms": _pos,
                "static_sd_khz": _nonneg,
                "hyperfine_lines": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["detuning_mhz", "weight"],
                        "properties": {"detuning_mhz": _num, "weight": _nonneg},
                    },
                },
                "rabi_scale_sd": _nonneg,
                "t1_ms": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "bath_file": {"type": ["string", "null"]},
        "n_realizations": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "threads": {"type": "integer", "minimum": 0},
        "pulse_model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["instantaneous", "finite_width"]},
                "rabi_mhz": _pos,
                "duration_ns": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "prep_readout_errors": {"type": "boolean"},
        "integrator": {"enum": ["exact", "trapezoid"]},
        "substep_us": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "calibration": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "target_t2_ms": _num,
                "tau_c_ms": _pos,
                "b_min_khz": _pos,
                "b_max_khz": _pos,
                "rtol": _pos,
                "n_times": {"type": "integer", "minimum": 5},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
    },
}

DEFAULTS = {
    "components": ["Sx", "Sy"],
    "n_list": DEFAULT_N_GRID,
    "n_overrides": {},
    "tau_us": 0.01,
    "tau_list_us": None,
    "coherence_points": 24,
    "t2_guess_ms": 0.7,
    "t2_estimate_ms": None,
    "error_model": {"epsilon": 0.0, "n_z": 0.0, "phase_jitter_deg": 0.0},
    "bath": None,
    "bath_file": None,
    "n_realizations": 2000,
    "seed": 0,
    "threads": 1,
    "pulse_model": {"kind": "instantaneous"},
    "prep_readout_errors": False,
    "integrator": "exact",
    "substep_us": None,
    "calibration": {"target_t2_ms": 0.7, "tau_c_ms": 10.0, "rtol": 0.005, "n_times": 24, "max_iter": 60},
}

BATH_DEFAULTS = {
    "b_khz": 0.0,
    "tau_c_ms": 10.0,
    "static_sd_khz": 0.0,
    "hyperfine_lines": [{"detuning_mhz": 0.0, "weight": 1.0}],
    "rabi_scale_sd": 0.0,
    "t1_ms": None,
}


class ConfigError(ValueError):
    """Invalid configuration; ``str()`` holds line-level diagnostics."""


def _line_of(text: str, path) -> int | None:
    """Best-effort source line of a JSON path, by walking quoted keys in order."""
    pos = 0
    found = None
    for key in path:
        if isinstance(key, str):
            i = text.find(json.dumps(key), pos)
            if i < 0:
                break
            pos = i
            found = i
    if found is None:
        return None
    return text.count("\n", 0, found) + 1


def _validate(doc, text: str = "") -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if not errors:
        return
    lines = []
    for err in errors:
        path = list(err.absolute_path)
        where = "/".join(map(str, path)) or "<root>"
        line = _line_of(text, path) if text else None
        prefix = f"line {line}: " if line else ""
        lines.append(f"{prefix}{where}: {err.message}")
    raise ConfigError("\n".join(lines))


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def normalize(doc: dict, text: str = "") -> dict:
    """Validate ``doc`` and fill defaults."""
    _validate(doc, text)
    cfg = _merge(DEFAULTS, doc)
    if cfg["bath"] is not None:
        cfg["bath"] = _merge(BATH_DEFAULTS, cfg["bath"])
        weights = [ln["weight"] for ln in cfg["bath"]["hyperfine_lines"]]
        if abs(math.fsum(weights) - 1.0) > 1e-12:
            raise ConfigError(f"{_loc(text, ['bath', 'hyperfine_lines'])}bath/hyperfine_lines: "
                              f"weights sum to {math.fsum(weights)!r}, expected 1")
    pm = cfg["pulse_model"]
    if pm["kind"] == "finite_width" and "rabi_mhz" not in pm:
        raise ConfigError(f"{_loc(text, ['pulse_model'])}pulse_model: finite_width needs rabi_mhz")
    return cfg


def _loc(text, path):
    line = _line_of(text, path) if text else None
    return f"line {line}: " if line else ""


def loads(text: str, base_dir: Path | None = None) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("line 1: configuration must be a JSON object")
    cfg = normalize(doc, text)
    if cfg["bath_file"]:
        cfg = resolve_bath_file(cfg, base_dir or Path.cwd(), text)
    return cfg


def load(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return loads(text, path.parent)


def resolve_bath_file(cfg: dict, base_dir: Path, text: str = "") -> dict:
    """Inline ``b_khz`` and ``tau_c_ms`` from a calibration file into ``bath``."""
    path = Path(cfg["bath_file"])
    if not path.is_absolute():
        path = base_dir / path
    try:
        cal = json.loads(path.read_text())
        b_khz, tau_c_ms = float(cal["b_khz"]), float(cal["tau_c_ms"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{_loc(text, ['bath_file'])}bath_file: cannot use {path}: {exc}") from None
    cfg = copy.deepcopy(cfg)
    bath = _merge(BATH_DEFAULTS, cfg["bath"] or {})
    bath["b_khz"] = b_khz
    bath["tau_c_ms"] = tau_c_ms
    cfg["bath"] = bath
    cfg["bath_file"] = None
    return cfg


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


# --- conversion to library objects ------------------------------------------

def error_model(cfg: dict) -> ErrorModel:
    em = cfg["error_model"]
    return ErrorModel(em["epsilon"], em["n_z"], math.radians(em["phase_jitter_deg"]))


def bath_params(cfg: dict) -> BathParams | None:
    bath = cfg["bath"]
    if bath is None:
        return None
    t1 = math.inf if bath["t1_ms"] is None else bath["t1_ms"] * 1e-3
    return BathParams(
        b=to_angular(bath["b_khz"] * 1e3),
        tau_c=bath["tau_c_ms"] * 1e-3,
        static_sd=to_angular(bath["static_sd_khz"] * 1e3),
        hyperfine_lines=tuple((to_angular(ln["detuning_mhz"] * 1e6), ln["weight"])
                              for ln in bath["hyperfine_lines"]),
        rabi_scale_sd=bath["rabi_scale_sd"],
        t1=t1,
    )


def pulse_model(cfg: dict):
    pm = cfg["pulse_model"]
    if pm["kind"] == "instantaneous":
        return INSTANTANEOUS
    duration = pm.get("duration_ns")
    return FiniteWidth(pm["rabi_mhz"] * 1e6, None if duration is None else duration * 1e-9)


def experiment(cfg: dict, protocol: str = "hahn", n: int = 1, component: str = "Sx") -> ExperimentConfig:
    substep = cfg["substep_us"]
    return ExperimentConfig(
        protocol=protocol,
        n=n,
        tau=cfg["tau_us"] * 1e-6,
        initial_component=component,
        error_model=error_model(cfg),
        bath=bath_params(cfg),
        n_realizations=cfg["n_realizations"],
        master_seed=cfg["seed"],
        pulse_model=pulse_model(cfg),
        prep_readout_errors=cfg["prep_readout_errors"],
        integrator=cfg["integrator"],
        substep=None if substep is None else substep * 1e-6,
        threads=cfg["threads"],
    )


def calibration(cfg: dict) -> tuple[float, float, CalibrationConfig]:
    """``(target_t2, tau_c, CalibrationConfig)`` in seconds from the config."""
    cal = cfg["calibration"]
    target = cal["target_t2_ms"]
    if not target > 0:
        raise ConfigError(f"calibration/target_t2_ms: must be > 0, got {target!r}")
    tau_c = cal["tau_c_ms"] * 1e-3
    bounds = None
    if "b_min_khz" in cal or "b_max_khz" in cal:
        if not ("b_min_khz" in cal and "b_max_khz" in cal):
            raise ConfigError("calibration: give both b_min_khz and b_max_khz or neither")
        bounds = (to_angular(cal["b_min_khz"] * 1e3), to_angular(cal["b_max_khz"] * 1e3))
    bath = bath_params(cfg) or BathParams(tau_c=tau_c)
    substep = cfg["substep_us"]
    mc = CalibrationConfig(
        bath=bath,
        n_realizations=cfg["n_realizations"],
        master_seed=cfg["seed"],
        n_times=cal["n_times"],
        b_bounds=bounds,
        rtol=cal["rtol"],
        max_iter=cal["max_iter"],
        integrator=cfg["integrator"],
        substep=None if substep is None else substep * 1e-6,
        threads=cfg["threads"],
    )
    return target * 1e-3, tau_c, mc
