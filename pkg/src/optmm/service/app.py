"""FastAPI application wrapping the experiment runs.

Solve once, query many: POST /solve returns the value-function artifact
(base64) and caches it server-side by artifact id; /quotes, /simulate and
/correct accept either the id or the raw artifact bytes, so clients work
against a fresh process too.  Configuration payloads are partial dicts
merged onto the bundled defaults.
"""

from __future__ import annotations

import base64

from fastapi import FastAPI, HTTPException

from .. import config as cfgmod
from .. import runs
from ..hjb import CFLViolation, value_function_from_bytes
from ..quoting import RootSolveError
from . import schemas

_VERSION = "0.1.0"


def _load_config(payload: dict | None) -> cfgmod.ExperimentConfig:
    try:
        return cfgmod.from_dict(payload)
    except (ValueError, TypeError) as exc:
        raise HTTPException(status_code=422, detail=f"bad config: {exc}")


def create_app() -> FastAPI:
    app = FastAPI(title="optmm", version=_VERSION)
    artifacts: dict[str, bytes] = {}
    app.state.artifacts = artifacts

    def resolve_value_function(req: schemas.ArtifactRequest):
        if req.artifact_b64:
            raw = base64.b64decode(req.artifact_b64)
        elif req.artifact_id:
            raw = artifacts.get(req.artifact_id)
            if raw is None:
                raise HTTPException(
                    status_code=404,
                    detail=f"artifact {req.artifact_id!r} not in the store; "
                           f"send artifact_b64 or solve first")
        else:
            raise HTTPException(
                status_code=422,
                detail="provide artifact_id or artifact_b64")
        try:
            return value_function_from_bytes(raw)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=_VERSION)

    @app.get("/config/default")
    def default_config():
        return cfgmod.to_dict(cfgmod.ExperimentConfig())

    @app.post("/surface", response_model=schemas.SurfaceResponse)
    def surface(req: schemas.SurfaceRequest):
        cfg = _load_config(req.config)
        out = runs.run_surface(cfg, seed=req.seed, oracle=req.oracle,
                               sentinel=req.sentinel)
        return schemas.SurfaceResponse(rows=out["rows"], csv=out["csv"])

    @app.post("/solve", response_model=schemas.SolveResponse)
    def solve(req: schemas.SolveRequest):
        cfg = _load_config(req.config)
        try:
            payload, _, raw = runs.run_solve(cfg, refine=req.refine,
                                             auto_refine=req.auto_refine)
        except CFLViolation as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except (ValueError, RootSolveError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        art_id = payload["summary"]["artifact_id"]
        artifacts[art_id] = raw
        return schemas.SolveResponse(
            artifact_id=art_id,
            artifact_b64=base64.b64encode(raw).decode("ascii"),
            summary=payload["summary"],
            csv_t0=payload["csv_t0"],
        )

    @app.post("/quotes", response_model=schemas.QuotesResponse)
    def quotes(req: schemas.QuotesRequest):
        cfg = _load_config(req.config)
        vf = resolve_value_function(req)
        try:
            out = runs.run_quotes(cfg, vf)
        except (ValueError, RootSolveError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return schemas.QuotesResponse(csv=out["csv"], n_rows=out["n_rows"])

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest):
        cfg = _load_config(req.config)
        vf = resolve_value_function(req)
        try:
            out = runs.run_simulate(cfg, vf, n_episodes=req.episodes,
                                    seed=req.seed, hedge=req.hedge,
                                    policy_name=req.policy)
        except (ValueError, RootSolveError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return schemas.SimulateResponse(summary=out["summary"], csv=out["csv"])

    @app.post("/correct", response_model=schemas.CorrectResponse)
    def correct(req: schemas.CorrectRequest):
        cfg = _load_config(req.config)
        vf = resolve_value_function(req)
        states = None
        if req.states is not None:
            states = [s.model_dump() for s in req.states]
        try:
            out = runs.run_correct(cfg, vf, states=states, seed=req.seed,
                                   stderr_tol=req.stderr_tol)
        except (ValueError, RootSolveError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return schemas.CorrectResponse(rows=out["rows"], csv=out["csv"])

    return app
