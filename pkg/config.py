"""Run configuration: a JSON file checked against a schema, plus CLI overrides."""
import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import jsonschema

from exceptions import ConfigError
from panel_regression import DEPENDENT_FORMS, INTERACTIONS, MOTIF_REGRESSORS, ModelSpec, default_models
from utils import file_sha256, stable_hash

logger = logging.getLogger(__name__)

NULL_MODES = ("full", "restricted", "both")

_YEAR_PAIR = {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}

MODEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "regressors": {"type": "array", "items": {"enum": list(MOTIF_REGRESSORS)}, "minItems": 1},
        "interactions": {"type": "array", "items": {"enum": list(INTERACTIONS)}},
        "controls": {"type": "array", "items": {"type": "string"}},
        "dependent": {"type": "string"},
        "dependent_form": {"enum": list(DEPENDENT_FORMS)},
        "standardize_dependent": {"type": "boolean"},
        "entry": {"type": "boolean"},
        "recession": {"type": "boolean"},
        "year_effects": {"type": "boolean"},
        "trend": {"type": "boolean"},
        "sector_group": {"type": ["string", "null"]},
        "cluster": {"enum": ["country"]},
        "null_model": {"type": "string"},
    },
}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "panel_path": {"type": ["string", "null"]},
        "schema": {"type": "object", "additionalProperties": {"type": "string"}},
        "employment_measure": {"enum": ["employees", "fte"]},
        "taxonomy_path": {"type": ["string", "null"]},
        "groups_path": {"type": ["string", "null"]},
        "allow_unknown_codes": {"type": "boolean"},
        "aggregate_sectors": {"type": "boolean"},
        "panel_years": _YEAR_PAIR,
        "network_years": _YEAR_PAIR,
        "base_year": {"type": "integer"},
        "log_transform": {"type": "boolean"},
        "threshold": {"type": "number", "exclusiveMinimum": 0},
        "samples": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
        "tolerance": {"type": "number", "exclusiveMinimum": 0},
        "max_iterations": {"type": "integer", "minimum": 1},
        "damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "null_mode": {"enum": list(NULL_MODES)},
        "restricted_group": {"type": "string"},
        "models": {"type": "array", "items": MODEL_SCHEMA},
        "out_dir": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
    },
}

# Fields that never change outputs
_UNHASHED = {"out_dir", "threads"}


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run depends on. Relative paths resolve against `base_dir`."""

    panel_path: Optional[str] = None
    schema: Dict[str, str] = field(default_factory=dict)
    employment_measure: str = "employees"
    taxonomy_path: Optional[str] = None
    groups_path: Optional[str] = None
    allow_unknown_codes: bool = False
    aggregate_sectors: bool = True
    panel_years: Tuple[int, int] = (1995, 2014)
    network_years: Tuple[int, int] = (2000, 2014)
    base_year: int = 1995
    log_transform: bool = False
    threshold: float = 1.0
    samples: int = 10_000
    seed: int = 0
    tolerance: float = 1e-8
    max_iterations: int = 10_000
    damping: float = 0.5
    null_mode: str = "full"
    restricted_group: str = "EU15"
    models: Tuple[ModelSpec, ...] = field(default_factory=lambda: tuple(default_models()))
    out_dir: str = "out"
    threads: int = 1
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def __post_init__(self):
        for name in ("panel_years", "network_years"):
            start, end = getattr(self, name)
            if start > end:
                raise ConfigError(f"{name} runs backwards: {start}-{end}")
        if not self.panel_years[0] <= self.network_years[0] <= self.network_years[1] <= self.panel_years[1]:
            raise ConfigError(f"network years {self.network_years} fall outside panel years {self.panel_years}")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ConfigError(f"model names must be unique, got {names}")

    @property
    def network_year_list(self) -> List[int]:
        return list(range(self.network_years[0], self.network_years[1] + 1))

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        if path is None:
            return None
        path = Path(path)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def out_path(self) -> Path:
        return self.resolve(self.out_dir)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {}
        for f in fields(self):
            if f.name == "base_dir":
                continue
            value = getattr(self, f.name)
            if f.name == "models":
                value = [m.to_dict() for m in value]
            elif isinstance(value, tuple):
                value = list(value)
            data[f.name] = value
        return data

    def outputs_dict(self) -> Dict[str, Any]:
        """The fields that can change the outputs; written next to them as run_config.json."""
        return {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}

    def config_hash(self) -> str:
        """SHA-256 over every field that can change the outputs."""
        return stable_hash(self.outputs_dict())

    def input_fingerprint(self) -> str:
        """Config hash combined with the checksums of the input files."""
        inputs = {}
        for name in ("panel_path", "taxonomy_path", "groups_path"):
            path = self.resolve(getattr(self, name))
            inputs[name] = file_sha256(path) if path is not None and path.exists() else None
        return stable_hash({"config": self.config_hash(), "inputs": inputs})

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with the non-None overrides applied (CLI flags)."""
        values = {k: v for k, v in overrides.items() if v is not None}
        if not values:
            return self
        try:
            return replace(self, **values)
        except TypeError as e:
            raise ConfigError(str(e))


def load_config(path: Optional[Path] = None) -> RunConfig:
    """Read and validate a JSON config; without a path the defaults are used."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    return config_from_dict(data, base_dir=path.parent)


def config_from_dict(data: Dict[str, Any], base_dir: Path = Path(".")) -> RunConfig:
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.path))
    if errors:
        details = "; ".join(f"{'/'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors)
        raise ConfigError(f"invalid config: {details}")

    values = dict(data)
    for name in ("panel_years", "network_years"):
        if name in values:
            values[name] = tuple(values[name])
    if "models" in values:
        values["models"] = tuple(ModelSpec.from_dict(m) for m in values["models"])
    config = RunConfig(base_dir=Path(base_dir), **values)
    logger.debug(f"Loaded config {config.config_hash()[:12]}")
    return config


def parse_years(text: str) -> Tuple[int, int]:
    """'2000-2014' or '2005' as an inclusive year range."""
    try:
        if "-" in text:
            start, end = (int(part) for part in text.split("-", 1))
        else:
            start = end = int(text)
    except ValueError:
        raise ConfigError(f"cannot read year range '{text}'; use START-END")
    if start > end:
        raise ConfigError(f"year range runs backwards: {text}")
    return start, end
