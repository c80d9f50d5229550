"""Request/response models of the HTTP service.

`config` is a partial configuration dictionary deep-merged onto the bundled
defaults; omitted sections keep their default values.  Solved value functions
travel as base64-encoded artifact bytes and are also retained in the server's
in-memory store under their artifact id, so follow-up requests may reference
either.
"""

from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field


class StateQuery(BaseModel):
    time: float = 0.0
    spot: float
    variance: float
    inventory: list[float]


class SurfaceRequest(BaseModel):
    config: dict[str, Any] | None = None
    seed: int | None = None
    oracle: bool = False
    sentinel: bool = False


class SurfaceResponse(BaseModel):
    rows: list[dict[str, Any]]
    csv: str


class SolveRequest(BaseModel):
    config: dict[str, Any] | None = None
    refine: bool = False
    auto_refine: bool = False


class SolveResponse(BaseModel):
    artifact_id: str
    artifact_b64: str
    summary: dict[str, Any]
    csv_t0: str


class ArtifactRequest(BaseModel):
    config: dict[str, Any] | None = None
    artifact_id: str | None = None
    artifact_b64: str | None = None


class QuotesRequest(ArtifactRequest):
    pass


class QuotesResponse(BaseModel):
    csv: str
    n_rows: int


class SimulateRequest(ArtifactRequest):
    episodes: int | None = Field(default=None, ge=1)
    seed: int | None = None
    hedge: str | None = None
    policy: str = "hjb"


class SimulateResponse(BaseModel):
    summary: dict[str, Any]
    csv: str


class CorrectRequest(ArtifactRequest):
    states: list[StateQuery] | None = None
    seed: int | None = None
    stderr_tol: float | None = None


class CorrectResponse(BaseModel):
    rows: list[dict[str, Any]]
    csv: str


class HealthResponse(BaseModel):
    status: str
    version: str
