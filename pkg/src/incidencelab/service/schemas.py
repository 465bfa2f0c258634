"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

from ..experiment import ExperimentConfig, GeneratorSpec, RunManifest


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Health(_Strict):
    status: Literal["ok"] = "ok"


class Version(_Strict):
    package: str
    python: str


class SpreadRequest(_Strict):
    delta_k: int = Field(ge=0)
    s: float
    c: float | None = None
    cubes: list[list[int]] = Field(min_length=1)  # rows [k, ix, iy]


class SpreadResponse(_Strict):
    delta_k: int
    s: float
    n_cubes: int
    c_star: float
    witness_scale: int | None
    witness_count: int | None
    declared_c: float | None
    passed: bool | None


class CountRequest(_Strict):
    configuration: dict
    mode: Literal["declared", "geometric"] = "declared"


class CountResponse(_Strict):
    count: int
    mode: str


class GenerateRequest(_Strict):
    generator: GeneratorSpec


class GenerateResponse(_Strict):
    configuration: dict
    points: int
    tubes: int


class ExponentsResponse(_Strict):
    s: float
    t: float
    formulas: dict[str, float]


class RunResponse(_Strict):
    manifest: RunManifest
    files: dict[str, str]


__all__ = [
    "CountRequest",
    "CountResponse",
    "ExperimentConfig",
    "ExponentsResponse",
    "GenerateRequest",
    "GenerateResponse",
    "Health",
    "RunResponse",
    "SpreadRequest",
    "SpreadResponse",
    "Version",
]
