"""JSON configuration files and logging set-up."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from .errors import ConfigError, U5mrError
from .data import AgeBandSchema
from .model import DEFAULT_PC_SPECS, FIXED_EFFECT_VARIANCE, LatentModel, assemble_model
from .priors import OverdispersionPrior, PcPriorSpec
from .spatial import AdjacencyGraph
from .temporal import VARIANTS

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
LOG_DATEFMT = "%H:%M:%S"
WORKERS_ENV = "U5MR_APC_WORKERS"

OPTIMIZER_METHODS = ("L-BFGS-B", "Nelder-Mead")
INTEGRATION_STRATEGIES = ("eb", "ccd")
COLLAPSE_RULES = ("dominant", "weighted")


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt=LOG_DATEFMT, force=True)


def workers_from_env() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV} must be at least 1, got {workers}")
    return workers


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "L-BFGS-B"
    max_evaluations: int = 300
    gradient_step: float = 1e-4
    hessian_step: float = 1e-2
    gradient_tolerance: float = 1e-4
    newton_tolerance: float = 1e-6
    newton_max_iterations: int = 50
    integration: str = "eb"
    ccd_f0: float = 1.1

    def __post_init__(self):
        if self.method not in OPTIMIZER_METHODS:
            raise ConfigError(f"optimizer method must be one of {', '.join(OPTIMIZER_METHODS)}")
        if self.integration not in INTEGRATION_STRATEGIES:
            raise ConfigError(f"integration must be one of {', '.join(INTEGRATION_STRATEGIES)}")
        if self.gradient_step <= 0 or self.hessian_step <= 0:
            raise ConfigError("finite-difference steps must be positive")
        if self.ccd_f0 <= 1.0:
            raise ConfigError("the CCD radius factor must exceed 1")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "APC"
    fixed_effect_variance: float = FIXED_EFFECT_VARIANCE
    age_midpoints: tuple[float, ...] = (0.0, 6.0, 17.5, 29.5, 41.5, 52.5)
    scale_structures: bool = True
    collapse: str = "dominant"
    max_interaction: int = 5000
    pc_priors: Mapping[str, PcPriorSpec] = field(default_factory=lambda: dict(DEFAULT_PC_SPECS))
    overdispersion: PcPriorSpec = PcPriorSpec(0.05, 0.01)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {', '.join(VARIANTS)}, got {self.variant!r}")
        if self.collapse not in COLLAPSE_RULES:
            raise ConfigError(f"collapse must be one of {', '.join(COLLAPSE_RULES)}")
        if self.fixed_effect_variance <= 0:
            raise ConfigError("fixed_effect_variance must be positive")
        if len(self.age_midpoints) != 6:
            raise ConfigError("age_midpoints must list six values")
        unknown = sorted(set(self.pc_priors) - set(DEFAULT_PC_SPECS))
        if unknown:
            raise ConfigError(f"unknown PC prior blocks {unknown}")
        object.__setattr__(self, "pc_priors", {**DEFAULT_PC_SPECS, **self.pc_priors})
        object.__setattr__(self, "age_midpoints", tuple(float(v) for v in self.age_midpoints))

    def with_variant(self, variant: str) -> "ModelConfig":
        return dataclasses.replace(self, variant=variant)

    @property
    def schema(self) -> AgeBandSchema:
        return AgeBandSchema(midpoints=self.age_midpoints)

    def assemble(self, cells, graph: AdjacencyGraph, extra=None) -> LatentModel:
        """The model this configuration describes over the given count cells."""
        return assemble_model(
            cells, graph, self.schema, self.variant, self.pc_priors, self.fixed_effect_variance,
            extra=extra, scale_structures=self.scale_structures,
            overdispersion=OverdispersionPrior(self.overdispersion), max_interaction=self.max_interaction,
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["age_midpoints"] = list(self.age_midpoints)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelConfig":
        data = dict(data)
        try:
            if "pc_priors" in data:
                data["pc_priors"] = {k: _spec(v, f"pc_priors.{k}") for k, v in data["pc_priors"].items()}
            if "overdispersion" in data:
                data["overdispersion"] = _spec(data["overdispersion"], "overdispersion")
            if "optimizer" in data:
                data["optimizer"] = dataclass_from_dict(OptimizerConfig, data["optimizer"], "optimizer")
            if "age_midpoints" in data:
                data["age_midpoints"] = tuple(data["age_midpoints"])
            return dataclass_from_dict(cls, data, "model")
        except U5mrError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None


def _spec(value: Any, where: str) -> PcPriorSpec:
    if not isinstance(value, Mapping) or set(value) != {"U", "p"}:
        raise ConfigError(f"{where} must be an object with keys U and p")
    return PcPriorSpec(float(value["U"]), float(value["p"]))


def dataclass_from_dict(cls, data: Mapping[str, Any], where: str):
    """Instantiate ``cls`` from a mapping, rejecting keys it does not declare."""
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"invalid {where} configuration: {exc}") from None


def read_json(path) -> dict:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"configuration file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def load_model_config(path: Optional[str | Path] = None) -> ModelConfig:
    if path is None:
        return ModelConfig()
    config = ModelConfig.from_dict(read_json(path))
    logger.debug("model configuration from %s: %s", path, config)
    return config
