"""FastAPI wrapper around the core laboratory.

The CLI talks to this app in-process by default; `lab serve` exposes the
same app over the network.  Domain errors surface as 422 with the message
in detail, never as 500.
"""

from __future__ import annotations

import platform

from fastapi import FastAPI, HTTPException, Query

from ..dyadic import DyadicCube
from ..experiment import (
    ExperimentConfig,
    _package_version,
    build_configuration,
    run_experiment,
)
from ..generators import GenerationError
from ..incidence import (
    Configuration,
    count_incidences,
    exponent_formulas,
)
from ..spread import check_spread
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


def create_app() -> FastAPI:
    app = FastAPI(title="incidencelab", version=_package_version())

    @app.get("/healthz", response_model=Health)
    def healthz() -> Health:
        return Health()

    @app.get("/version", response_model=Version)
    def version() -> Version:
        return Version(
            package=f"incidencelab {_package_version()}",
            python=platform.python_version(),
        )

    @app.get("/formulas/exponents", response_model=ExponentsResponse)
    def exponents(s: float = Query(...), t: float = Query(...)) -> ExponentsResponse:
        try:
            formulas = exponent_formulas(s, t)
        except ValueError as e:
            raise HTTPException(status_code=422, detail=str(e))
        return ExponentsResponse(s=s, t=t, formulas=formulas)

    @app.post("/check/spread", response_model=SpreadResponse)
    def spread(req: SpreadRequest) -> SpreadResponse:
        try:
            cubes = [DyadicCube(k, ix, iy) for k, ix, iy in req.cubes]
            rep = check_spread(cubes, req.delta_k, req.s, c=req.c)
        except (TypeError, ValueError) as e:
            raise HTTPException(status_code=422, detail=str(e))
        from ..dyadic import as_k

        return SpreadResponse(
            delta_k=rep.delta_k,
            s=rep.s,
            n_cubes=rep.n_cubes,
            c_star=rep.c_star,
            witness_scale=None if rep.witness_scale is None else as_k(rep.witness_scale),
            witness_count=rep.witness_count,
            declared_c=rep.declared_c,
            passed=rep.passed,
        )

    @app.post("/incidences/count", response_model=CountResponse)
    def count(req: CountRequest) -> CountResponse:
        try:
            cfg = Configuration.from_json(req.configuration)
            n = count_incidences(cfg, req.mode)
        except (KeyError, TypeError, ValueError) as e:
            raise HTTPException(status_code=422, detail=str(e))
        return CountResponse(count=n, mode=req.mode)

    @app.post("/generate", response_model=GenerateResponse)
    def generate(req: GenerateRequest) -> GenerateResponse:
        try:
            cfg = build_configuration(req.generator)
        except (GenerationError, ValueError) as e:
            raise HTTPException(status_code=422, detail=str(e))
        return GenerateResponse(
            configuration=cfg.to_json(),
            points=len(cfg.points),
            tubes=len(cfg.all_tubes),
        )

    @app.post("/experiments/run", response_model=RunResponse)
    def run(config: ExperimentConfig) -> RunResponse:
        manifest, files = run_experiment(config)
        return RunResponse(manifest=manifest, files=files)

    return app
