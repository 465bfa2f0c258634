"""HTTP facade: pydantic schemas and the FastAPI application factory."""

from .app import create_app
from .schemas import (
    CountRequest,
    CountResponse,
    ExponentsResponse,
    GenerateRequest,
    GenerateResponse,
    Health,
    RunResponse,
    SpreadRequest,
    SpreadResponse,
    Version,
)

__all__ = [
    "CountRequest",
    "CountResponse",
    "ExponentsResponse",
    "GenerateRequest",
    "GenerateResponse",
    "Health",
    "RunResponse",
    "SpreadRequest",
    "SpreadResponse",
    "Version",
    "create_app",
]
