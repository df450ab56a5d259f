"""Experiment configuration: JSON schema, validation, defaults and seed derivation."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .models import REGISTRY

CONFIG_VERSION = 1

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT_POS = {"type": "integer", "minimum": 1}
_RANGE = {
    "type": "object",
    "properties": {"lo": _NUM, "hi": _NUM, "n": {"type": "integer", "minimum": 3}},
    "required": ["n"],
    "additionalProperties": False,
}
_LEVY = {
    "type": ["object", "null"],
    "properties": {
        "kind": {"enum": ["atoms", "laplace"]},
        "intensity": _NONNEG,
        "sizes": {"type": "array", "items": _NUM, "minItems": 1},
        "probs": {"type": "array", "items": _NONNEG, "minItems": 1},
        "scale": _POS,
    },
    "additionalProperties": False,
}
_PARAMS = {
    "brownian": {"mu": _NUM, "sigma": _NUM, "x0": _NUM},
    "zero": {"x0": _NUM},
    "local-vol": {"s0": _NUM, "s1": _NUM, "x0": _NUM},
    "running-average-vol": {"s0": _NUM, "s1": _NUM, "x0": _NUM, "cap": _POS},
    "ou2-sum": {"kappa": _POS, "sigma": _POS},
    "time-changed-levy": {"b": _NUM, "sigma2": _NONNEG, "levy": _LEVY, "clock": {"enum": ["linear", "exp-brownian"]},
                          "c0": _POS, "c1": _NONNEG, "x0": _NUM},
    "compound-poisson": {"intensity": _NONNEG, "sizes": {"type": "array", "items": _NUM, "minItems": 1},
                         "probs": {"type": "array", "items": _NONNEG, "minItems": 1},
                         "law": {"enum": ["atoms", "laplace"]}, "scale": _POS, "sigma": _NUM,
                         "compensated": {"type": "boolean"}, "x0": _NUM},
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "threads": _INT_POS,
        "model": {
            "type": "object",
            "properties": {"name": {"enum": sorted(REGISTRY)}, "params": {"type": "object"}},
            "required": ["name"],
            "additionalProperties": False,
        },
        "grid": {
            "type": "object",
            "properties": {"t_start": _NONNEG, "t_end": _POS, "n_steps": _INT_POS},
            "required": ["t_end", "n_steps"],
            "additionalProperties": False,
        },
        "n_paths": _INT_POS,
        "checkpoints": {"type": "array", "items": _POS, "minItems": 1},
        "output": {
            "type": "object",
            "properties": {"dump_ensemble": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "projection": {
            "type": "object",
            "properties": {
                "route": {"enum": ["estimate", "closed-form"]},
                "mode": {"enum": ["histogram", "kernel"]},
                "z_grid": _RANGE,
                "y_grid": _RANGE,
                "bandwidth": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "n_min": _INT_POS,
                "integrability_bound": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "pide": {
            "type": "object",
            "properties": {"x_grid": _RANGE, "dt": _POS, "scheme": {"enum": ["imex", "explicit"]}},
            "additionalProperties": False,
        },
        "verification": {
            "type": "object",
            "properties": {"route": {"enum": ["pide", "resimulate", "both"]}, "n_paths": _INT_POS},
            "additionalProperties": False,
        },
        "tolerances": {
            "type": "object",
            "properties": {"ks": _POS, "route_agreement": _POS, "l1_exact": _POS},
            "additionalProperties": False,
        },
        "audit": {
            "type": "object",
            "properties": {
                "target": {"enum": ["model", "projected"]},
                "k1": _POS, "k2": _POS, "k3": _POS, "ellipticity": _POS, "stable_beta": _POS,
                "tail_radii": {"type": "array", "items": _POS, "minItems": 1},
                "tail_tolerance": _POS,
                "lipschitz": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "n_paths": _INT_POS,
            },
            "additionalProperties": False,
        },
    },
    "required": ["version", "seed", "model", "grid"],
    "additionalProperties": False,
    "allOf": [
        {
            "if": {"properties": {"model": {"properties": {"name": {"const": name}}}}},
            "then": {"properties": {"model": {"properties": {"params": {
                "type": "object", "properties": props, "additionalProperties": False}}}}},
        }
        for name, props in _PARAMS.items()
    ],
}

DEFAULTS = {
    "threads": 1,
    "n_paths": 10_000,
    "output": {"dump_ensemble": False},
    "projection": {"route": "estimate", "mode": "histogram", "z_grid": {"n": 201}, "bandwidth": None, "n_min": 50,
                   "integrability_bound": None},
    "pide": {"x_grid": {"n": 1201}, "dt": 1e-3, "scheme": "imex"},
    "verification": {"route": "both"},
    "tolerances": {},
    "audit": {"target": "model", "k1": 10.0, "k2": 10.0, "k3": 10.0, "ellipticity": 1e-3, "stable_beta": 1.0,
              "tail_radii": [1.0, 2.0, 4.0, 8.0], "tail_tolerance": 1e-3, "lipschitz": None, "n_paths": 2000},
}


def _path_of(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate_config(doc: dict) -> dict:
    """Validate against :data:`SCHEMA` and fill defaults.

    Raises
    ------
    ConfigError
        With the dotted path of the offending field in the message.
    """
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = list(validator.iter_errors(doc))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        # descend into if/then wrappers to the leaf that actually failed
        while err.context:
            err = jsonschema.exceptions.best_match(err.context)
        raise ConfigError(f"{_path_of(err)}: {err.message}")
    cfg = copy.deepcopy(doc)
    for key, val in DEFAULTS.items():
        if isinstance(val, dict):
            cfg[key] = {**copy.deepcopy(val), **cfg.get(key, {})}
        else:
            cfg.setdefault(key, val)
    cfg["grid"].setdefault("t_start", 0.0)
    cfg["model"].setdefault("params", {})
    cfg.setdefault("checkpoints", [cfg["grid"]["t_end"]])
    return cfg


def load_config(path) -> tuple[dict, str]:
    """Read, validate and default a config file; also return the SHA-256 of its bytes."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return validate_config(doc), hashlib.sha256(raw).hexdigest()


def derive_seed(master: int, stage: str) -> int:
    """Stage seed from the master seed, stable across runs and platforms."""
    digest = hashlib.sha256(f"{int(master)}/{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
