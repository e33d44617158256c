"""
Experiment configuration: JSON documents validated against CONFIG_SCHEMA.

Per-experiment defaults are frozen dataclasses; a config's "parameters"
object may override any of their fields and nothing else.
"""

import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from src.core.errors import ConfigError

logger = logging.getLogger(__name__)

BUILTINS = ("ou", "periodic_example", "quasi_periodic", "constant")
SCAN_TARGETS = ("mean_square", "variance", "expression")
FORMATS = ("csv", "json")
DEFAULT_SEED = 42


def _choice(*values):
    return {"schema": {"type": "string", "enum": list(values)}}


@dataclass(frozen=True)
class KernelTableParams:
    times: tuple = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)


@dataclass(frozen=True)
class ScanParams:
    epsilon: float = 0.1
    tau_min: float = 0.0
    tau_max: float = 20.0
    tau_step: float = 0.05
    window: float = 60.0
    t_step: float = 0.05
    target: str = field(default="mean_square", metadata=_choice(*SCAN_TARGETS))
    expression: str = "sin(t)"
    refine: bool = True
    max_inclusion: Optional[float] = None


@dataclass(frozen=True)
class FalsifyParams:
    tau_min: float = 1.0
    tau_max: float = 50.0
    t_window: tuple = (0.0, 20.0)
    n_t: int = 41
    n_tau: int = 400
    tolerance: float = 1e-12
    refine: bool = True


@dataclass(frozen=True)
class LemmaParams:
    probe_times: tuple = tuple(float(n) for n in range(1, 31))
    functional: tuple = (1.0,)
    gap: int = 10
    cov_tol: float = 1e-4
    var_margin: float = 1e-3
    n: int = 0
    route: str = field(default="closed_form", metadata=_choice("closed_form", "monte_carlo"))


@dataclass(frozen=True)
class DistributionParams:
    offsets: tuple = (0.0, 1.0, 2.0, 3.0, 4.0)
    tau_candidates: tuple = (2.0 * math.pi,)
    epsilon: float = 1e-10
    t_grid: tuple = tuple(2.0 * math.pi * j / 32 for j in range(33))


@dataclass(frozen=True)
class HypothesisParams:
    t_grid: tuple = (0.0, 1.0, 2.0, 3.0, 4.0)
    horizon: float = 40.0
    step: float = 1e-2
    tail_tol: float = 1e-10


@dataclass(frozen=True)
class MomentParams:
    t_grid: tuple = tuple(10.0 * j for j in range(11))
    p: int = 4
    n: int = 10_000
    bound: Optional[float] = None
    euler_step: float = 1e-2


EXPERIMENTS = {
    "kernel-table": KernelTableParams,
    "ap-scan": ScanParams,
    "ms-falsify": FalsifyParams,
    "lemma-check": LemmaParams,
    "dist-ap-check": DistributionParams,
    "hypothesis-check": HypothesisParams,
    "moments": MomentParams,
}


def _field_schema(f):
    if "schema" in f.metadata:
        return dict(f.metadata["schema"])
    default = f.default
    if isinstance(default, bool):
        return {"type": "boolean"}
    if isinstance(default, int):
        return {"type": "integer"}
    if isinstance(default, float) or default is None:
        return {"type": ["number", "null"]} if default is None else {"type": "number"}
    if isinstance(default, tuple):
        return {"type": "array", "items": {"type": "number"}, "minItems": 1}
    return {"type": "string"}


def _params_schema(cls):
    return {
        "type": "object",
        "properties": {f.name: _field_schema(f) for f in fields(cls)},
    }


_MATRIX = {"type": "array", "minItems": 1,
           "items": {"type": "array", "minItems": 1, "items": {"type": ["number", "string"]}}}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["system"],
    "properties": {
        "system": {
            "type": "object",
            "properties": {
                "builtin": {"type": "string", "enum": list(BUILTINS)},
                "name": {"type": "string"},
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "sigma": {"type": "number", "exclusiveMinimum": 0},
                "value": {"type": "number"},
                "A": _MATRIX,
                "g": _MATRIX,
                "Q": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "period_hint": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "experiment": {"type": "string", "enum": list(EXPERIMENTS)},
        "parameters": {"type": "object"},
        "seed": {"type": "integer", "minimum": 0},
        "output": {
            "type": "object",
            "properties": {
                "directory": {"type": "string"},
                "format": {"type": "string", "enum": list(FORMATS)},
            },
        },
    },
    "parameters": {name: _params_schema(cls) for name, cls in EXPERIMENTS.items()},
}

_TYPES = {
    "object": dict, "array": list, "string": str, "boolean": bool,
    "integer": int, "number": (int, float), "null": type(None),
}


def _is_type(value, name):
    if name in ("integer", "number") and isinstance(value, bool):
        return False
    if name == "number" and isinstance(value, float) and not math.isfinite(value):
        return False
    return isinstance(value, _TYPES[name])


def validate(value, schema, path="$"):
    """Check value against the schema subset used in CONFIG_SCHEMA; objects are closed."""
    types = schema.get("type")
    if types is not None:
        names = types if isinstance(types, list) else [types]
        if not any(_is_type(value, n) for n in names):
            raise ConfigError(f"expected {' or '.join(names)}, got {json.dumps(value)}", field=path)
    if "enum" in schema and value not in schema["enum"]:
        raise ConfigError(f"must be one of {schema['enum']}, got {json.dumps(value)}", field=path)
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if "minimum" in schema and value < schema["minimum"]:
            raise ConfigError(f"must be >= {schema['minimum']}", field=path)
        if "exclusiveMinimum" in schema and value <= schema["exclusiveMinimum"]:
            raise ConfigError(f"must be > {schema['exclusiveMinimum']}", field=path)
    if isinstance(value, list):
        if len(value) < schema.get("minItems", 0):
            raise ConfigError(f"needs at least {schema['minItems']} items", field=path)
        for i, item in enumerate(value):
            validate(item, schema.get("items", {}), f"{path}[{i}]")
    if isinstance(value, dict) and "properties" in schema:
        props = schema["properties"]
        for key in value:
            if key not in props:
                raise ConfigError(f"unknown key '{key}'", field=f"{path}.{key}")
        for key in schema.get("required", []):
            if key not in value:
                raise ConfigError(f"missing required key '{key}'", field=f"{path}.{key}")
        for key, item in value.items():
            validate(item, props[key], f"{path}.{key}")


@dataclass(frozen=True)
class ExperimentConfig:
    system: dict
    experiment: str
    parameters: object
    seed: int = DEFAULT_SEED
    output_dir: Optional[str] = None
    output_format: str = "csv"
    source: str = "<config>"

    def to_dict(self):
        params = {f.name: getattr(self.parameters, f.name) for f in fields(self.parameters)}
        return {
            "system": dict(self.system),
            "experiment": self.experiment,
            "parameters": {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()},
            "seed": self.seed,
            "output": {"format": self.output_format},
        }


def _check_system(system):
    if "builtin" in system:
        allowed = {"ou": {"alpha", "sigma"}, "constant": {"value"}}.get(system["builtin"], set())
        extra = set(system) - {"builtin", "name"} - allowed
        if extra:
            key = sorted(extra)[0]
            raise ConfigError(f"key not allowed for builtin '{system['builtin']}'",
                              field=f"$.system.{key}")
        return
    for key in ("A", "g"):
        if key not in system:
            raise ConfigError("custom systems need both A and g", field=f"$.system.{key}")
    for key in ("alpha", "sigma", "value"):
        if key in system:
            raise ConfigError("only builtin systems take this key", field=f"$.system.{key}")


def parse_config(data, experiment=None, source="<config>"):
    """Validate a decoded config; experiment (e.g. from the CLI) must agree with the document."""
    validate(data, CONFIG_SCHEMA)
    _check_system(data["system"])
    declared = data.get("experiment")
    if experiment is not None and declared is not None and declared != experiment:
        raise ConfigError(f"config declares '{declared}' but '{experiment}' was requested",
                          field="$.experiment")
    name = experiment or declared
    if name is None:
        raise ConfigError("no experiment given", field="$.experiment")
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment '{name}'", field="$.experiment")
    overrides = data.get("parameters", {})
    validate(overrides, CONFIG_SCHEMA["parameters"][name], "$.parameters")
    cls = EXPERIMENTS[name]
    overrides = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    output = data.get("output", {})
    return ExperimentConfig(
        system=dict(data["system"]), experiment=name, parameters=replace(cls(), **overrides),
        seed=data.get("seed", DEFAULT_SEED), output_dir=output.get("directory"),
        output_format=output.get("format", "csv"), source=source,
    )


def load_config(path, experiment=None):
    """Read and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc.msg}", line=exc.lineno, column=exc.colno) from exc
    config = parse_config(data, experiment=experiment, source=str(path))
    logger.debug("loaded %s experiment from %s", config.experiment, path)
    return config
