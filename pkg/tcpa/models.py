import json
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .config import LOOP_UNROLL, MAX_DEPTH, MAX_PATHS, SOLVER_ENUM, SOLVER_MS

ANALYZER_ID = f"tcpa-symexec/{__version__}"


class ConfigError(ValueError):
    """An analyzer or builder image could not be turned into settings."""


class CheckBudget(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    max_millis: int = Field(default=SOLVER_MS, gt=0)
    max_enumeration: int = Field(default=SOLVER_ENUM, gt=0)


class ExploreBounds(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    max_paths: int = Field(default=MAX_PATHS, gt=0)
    max_depth: int = Field(default=MAX_DEPTH, gt=0)
    loop_unroll: int = Field(default=LOOP_UNROLL, gt=0)
    per_path_solver_budget: CheckBudget = Field(default_factory=CheckBudget)
    # entry functions explored concurrently; the report does not depend on it
    workers: int = Field(default=1, gt=0)


class AnalyzerConfig(BaseModel):
    """Settings carried by the analyzer image X.

    The image is a YAML document. It either holds a ``bounds`` mapping or a
    ``profiles`` mapping plus a ``profile`` selector::

        analyzer: tcpa-symexec/0.1.0
        profile: quick
        profiles:
          quick: {max_paths: 32, loop_unroll: 4}
          deep:  {max_paths: 4096, solver: {max_millis: 5000}}
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    analyzer: str = ANALYZER_ID
    profile: Optional[str] = None
    bounds: ExploreBounds = Field(default_factory=ExploreBounds)

    @classmethod
    def from_yaml(cls, data: bytes) -> "AnalyzerConfig":
        try:
            doc = yaml.safe_load(data.decode("utf-8")) or {}
        except (UnicodeDecodeError, yaml.YAMLError) as e:
            raise ConfigError(f"analyzer image is not YAML: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError("analyzer image must be a mapping")

        profiles = doc.get("profiles")
        selected = doc.get("profile")
        if profiles is not None:
            if not isinstance(profiles, dict) or not profiles:
                raise ConfigError("profiles must be a non-empty mapping")
            if selected is None:
                selected = sorted(profiles)[0]
            if selected not in profiles:
                raise ConfigError(f"unknown profile: {selected}")
            raw_bounds = profiles[selected] or {}
        else:
            raw_bounds = doc.get("bounds") or {}

        try:
            return cls(
                analyzer=doc.get("analyzer", ANALYZER_ID),
                profile=selected,
                bounds=_bounds_from_mapping(raw_bounds),
            )
        except ValidationError as e:
            raise ConfigError(f"invalid analyzer settings: {e}") from e

    def to_yaml(self) -> bytes:
        b = self.bounds
        doc: dict[str, Any] = {
            "analyzer": self.analyzer,
            "bounds": {
                "max_paths": b.max_paths,
                "max_depth": b.max_depth,
                "loop_unroll": b.loop_unroll,
                "workers": b.workers,
                "solver": {
                    "max_millis": b.per_path_solver_budget.max_millis,
                    "max_enumeration": b.per_path_solver_budget.max_enumeration,
                },
            },
        }
        return yaml.safe_dump(doc, sort_keys=True).encode("utf-8")


def _bounds_from_mapping(raw: dict) -> ExploreBounds:
    if not isinstance(raw, dict):
        raise ConfigError("bounds must be a mapping")
    raw = dict(raw)
    solver = raw.pop("solver", None) or {}
    return ExploreBounds(**raw, per_path_solver_budget=CheckBudget(**solver))


class BuilderConfig(BaseModel):
    """Settings of the builder B. ``to_bytes`` is exactly the image that is measured."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["reference_assembler"] = "reference_assembler"
    deterministic: bool = True
    # alternative flow: hand the rebuilt executable back instead of comparing
    return_executable: bool = False

    def to_bytes(self) -> bytes:
        return json.dumps(self.model_dump(), sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_bytes(cls, data: bytes) -> "BuilderConfig":
        try:
            cfg = cls.model_validate_json(data)
        except ValidationError as e:
            raise ConfigError(f"invalid builder image: {e}") from e
        if cfg.to_bytes() != data:
            raise ConfigError("builder image is not in canonical form")
        return cfg


def overhead_percent(isolated: float, plain: float) -> Optional[float]:
    if plain <= 0:
        return None
    return (isolated - plain) / plain * 100.0


class BenchRecord(BaseModel):
    file: str
    instructions: int = 0
    time_isolated: float = 0.0
    time_plain: float = 0.0
    mem_isolated: int = 0
    mem_plain: int = 0
    verdicts_plain: str = ""
    verdicts_isolated: str = ""
    # consumer verdict on the chain produced in isolated mode
    accepted: Optional[bool] = None
    error: Optional[str] = None

    @property
    def overhead_time(self) -> Optional[float]:
        return overhead_percent(self.time_isolated, self.time_plain)

    @property
    def overhead_mem(self) -> Optional[float]:
        return overhead_percent(float(self.mem_isolated), float(self.mem_plain))
