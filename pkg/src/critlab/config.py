"""Experiment configuration: JSON schema, bundled references and model construction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigInvalid
from .model import MAX_SUPPORT, OffspringSchedule, RateSchedule

_NUM_OR_EXPR = {"type": ["number", "string"]}
_PMF = {"type": "array", "items": {"type": "number"}, "minItems": 1}

SCHEMA = {
    "type": "object",
    "required": ["model", "horizon"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "model": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["discrete", "continuous"]}},
            "allOf": [
                {
                    "if": {"properties": {"kind": {"const": "discrete"}}},
                    "then": {
                        "required": ["family"],
                        "additionalProperties": False,
                        "properties": {
                            "kind": {},
                            "family": {"enum": ["paper_example", "constant", "table", "polynomial_mean",
                                                "expression"]},
                            "pmf": _PMF,
                            "pmfs": {"type": "array", "items": _PMF, "minItems": 1},
                            "alpha": {"type": "number", "maximum": 1},
                            "probs": {"type": "object", "minProperties": 1,
                                      "propertyNames": {"pattern": "^[0-9]+$"},
                                      "additionalProperties": _NUM_OR_EXPR},
                            "max_support": {"type": "integer", "minimum": 1, "maximum": MAX_SUPPORT},
                        },
                        "allOf": [
                            {"if": {"properties": {"family": {"const": "constant"}}},
                             "then": {"required": ["pmf"]}},
                            {"if": {"properties": {"family": {"const": "table"}}},
                             "then": {"required": ["pmfs"]}},
                            {"if": {"properties": {"family": {"const": "polynomial_mean"}}},
                             "then": {"required": ["alpha"]}},
                            {"if": {"properties": {"family": {"const": "expression"}}},
                             "then": {"required": ["probs"]}},
                        ],
                    },
                },
                {
                    "if": {"properties": {"kind": {"const": "continuous"}}},
                    "then": {
                        "required": ["max_jump", "rates"],
                        "additionalProperties": False,
                        "properties": {
                            "kind": {},
                            "max_jump": {"type": "integer", "minimum": 1, "maximum": MAX_SUPPORT},
                            "rates": {"type": "object",
                                      "propertyNames": {"pattern": "^(-1|[1-9][0-9]*)$"},
                                      "additionalProperties": _NUM_OR_EXPR},
                        },
                    },
                },
            ],
        },
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "moment_order": {"type": "integer", "minimum": 1, "maximum": 10},
        "grid_step": {"type": "number", "exclusiveMinimum": 0},
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "replicates": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "checkpoints": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "workers": {"type": "integer", "minimum": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "format": {"enum": ["csv", "json"]},
                "path": {"type": "string"},
            },
        },
    },
}

DEFAULT_SEED = 20240601
DEFAULT_REPLICATES = 100_000


@dataclass
class Experiment:
    name: str
    model: object
    horizon: float
    moment_order: int
    grid_step: float | None
    replicates: int
    seed: int
    checkpoints: tuple
    workers: int
    output_format: str
    output_path: str | None
    raw: dict

    @property
    def kind(self):
        return "discrete" if isinstance(self.model, OffspringSchedule) else "continuous"


def _pointer(path):
    return "/" + "/".join(str(p) for p in path) if path else ""


def _configs():
    return resources.files("critlab") / "configs"


def bundled_names():
    return sorted(p.name[:-5] for p in _configs().iterdir() if p.name.endswith(".json"))


def load_raw(path_or_name):
    """Read a config from a file path or a bundled reference name."""
    p = Path(path_or_name)
    if p.is_file():
        text = p.read_text(encoding="utf-8")
        source = str(p)
    else:
        name = p.name[:-5] if p.name.endswith(".json") else p.name
        ref = _configs() / f"{name}.json"
        if not ref.is_file():
            raise ConfigInvalid(f"no such config file or bundled reference: {path_or_name}", "")
        text = ref.read_text(encoding="utf-8")
        source = f"bundled:{name}"
    try:
        return json.loads(text), source
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{source}: not valid JSON ({exc.msg} at line {exc.lineno})", "") from None


def build_model(block):
    if block["kind"] == "discrete":
        family = block["family"]
        params = {k: block[k] for k in ("pmf", "pmfs", "alpha", "probs") if k in block}
        return OffspringSchedule(family, params, block.get("max_support", MAX_SUPPORT))
    return RateSchedule(block["max_jump"], {int(k): v for k, v in block["rates"].items()})


def validate(raw, source="config"):
    """Schema-check ``raw`` and build an :class:`Experiment`."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (len(e.absolute_path), list(e.absolute_path)))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        ptr = _pointer(err.absolute_path)
        raise ConfigInvalid(f"{source}: {err.message}", ptr)
    try:
        model = build_model(raw["model"])
    except (ValueError, KeyError) as exc:
        raise ConfigInvalid(f"{source}: {exc}", "/model") from None
    mc = raw.get("mc", {})
    kind = raw["model"]["kind"]
    default_cps = (10, 20, 50) if kind == "discrete" else (1.0, 5.0, 10.0)
    cps = tuple(mc.get("checkpoints", default_cps))
    if any(b <= a for a, b in zip(cps, cps[1:])):
        raise ConfigInvalid(f"{source}: checkpoints must be strictly increasing", "/mc/checkpoints")
    if kind == "discrete" and any(float(c) != int(c) for c in cps):
        raise ConfigInvalid(f"{source}: discrete checkpoints must be integers", "/mc/checkpoints")
    out = raw.get("output", {})
    return Experiment(
        name=raw.get("name", Path(source.split(":")[-1]).stem),
        model=model,
        horizon=float(raw["horizon"]),
        moment_order=int(raw.get("moment_order", 3)),
        grid_step=raw.get("grid_step"),
        replicates=int(mc.get("replicates", DEFAULT_REPLICATES)),
        seed=int(mc.get("seed", DEFAULT_SEED)),
        checkpoints=cps,
        workers=int(mc.get("workers", 1)),
        output_format=out.get("format", "csv"),
        output_path=out.get("path"),
        raw=raw,
    )


def load(path_or_name):
    raw, source = load_raw(path_or_name)
    return validate(raw, source)
