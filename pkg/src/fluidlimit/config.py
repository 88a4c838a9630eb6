"""Run configuration: a YAML file validated against a strict schema."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import models
from .errors import FluidLimitError


class ConfigError(FluidLimitError, ValueError):
    """The configuration file is unreadable or violates the schema."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ChannelRow(_Strict):
    jump: List[int]
    rate: float = Field(ge=0)
    order: Optional[List[int]] = None
    name: Optional[str] = None


class ChannelTable(_Strict):
    channels: List[ChannelRow] = Field(min_length=1)
    N: float = Field(gt=0)
    x0: Optional[List[float]] = None
    box: Optional[List[List[float]]] = None

    @field_validator("box")
    @classmethod
    def _box_shape(cls, v):
        if v is not None and len(v) != 2:
            raise ValueError("box must be [lower, upper]")
        return v


class CoreSection(_Strict):
    k: int = Field(ge=2)
    N: int = Field(ge=1)
    p: Dict[int, float]
    q: Dict[int, float]


class CoupleSection(_Strict):
    label_map: Literal["epidemic_individuals"] = "epidemic_individuals"
    k: int = Field(default=2, ge=1)
    G: float = Field(default=0.0, ge=0)
    kappa: Optional[float] = Field(default=None, ge=0)


class DiagnoseSection(_Strict):
    theta: float = Field(default=0.5, ge=0)
    B: float = 3.0
    A: float = 1.0
    observables: int = Field(default=10, ge=1)


class RunConfig(_Strict):
    model: Union[str, ChannelTable]
    params: Dict[str, Any] = Field(default_factory=dict)
    t0: float = Field(default=1.0, gt=0)
    eps: float = Field(default=0.1, gt=0)
    h: float = Field(default=1e-3, gt=0)
    A: Union[float, Literal["auto"]] = "auto"
    theorem: Literal["EXP", "L2"] = "EXP"
    replicas: int = Field(default=100, ge=1)
    seed: int = Field(ge=0, lt=2**64)
    out: Optional[str] = None
    max_events: int = Field(default=10**8, ge=1)
    core: Optional[CoreSection] = None
    couple: Optional[CoupleSection] = None
    diagnose: Optional[DiagnoseSection] = None

    @field_validator("A")
    @classmethod
    def _positive_A(cls, v):
        if v != "auto" and not v > 0:
            raise ValueError("A must be positive or 'auto'")
        return v

    @model_validator(mode="after")
    def _known_model(self):
        if isinstance(self.model, str):
            if self.model not in models.REGISTRY:
                raise ValueError(f"unknown model {self.model!r}; choose from {sorted(models.REGISTRY)}")
            known = set(models.REGISTRY[self.model].params)
            unknown = set(self.params) - known
            if unknown:
                raise ValueError(f"model {self.model!r} has no parameter(s) {sorted(unknown)}")
        elif self.params:
            raise ValueError("params apply to builtin models only; put N and x0 in the channel table")
        return self

    def build_model(self) -> models.Model:
        if isinstance(self.model, str):
            return models.build(self.model, self.params)
        t = self.model
        return models.make_mass_action(
            [row.model_dump(exclude_none=True) for row in t.channels], N=t.N, x0=t.x0, box=t.box
        )

    @property
    def model_name(self) -> str:
        return self.model if isinstance(self.model, str) else "mass_action"


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse(data: Any, seed_override: Optional[int] = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at top level")
    data = dict(data)
    if seed_override is not None:
        data["seed"] = seed_override
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None


def load(path, seed_override: Optional[int] = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"config is not valid YAML: {err}") from None
    return parse(data, seed_override)
