"""HTTP wiring for the variance estimation service."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..errors import OcvarError
from . import handlers
from . import schemas as sm


def create_app() -> FastAPI:
    app = FastAPI(title="ocvar", version=handlers.__version__)

    @app.exception_handler(OcvarError)
    async def _ocvar_error(request: Request, exc: OcvarError) -> JSONResponse:
        body = sm.ErrorResponse(error=sm.ErrorBody(code=exc.code, message=str(exc)))
        return JSONResponse(status_code=400, content=body.model_dump())

    @app.get("/health", response_model=sm.HealthResponse)
    def health() -> sm.HealthResponse:
        return handlers.health()

    @app.post("/design/enumerate", response_model=sm.DesignEnumerateResponse)
    def design_enumerate(req: sm.DesignEnumerateRequest) -> sm.DesignEnumerateResponse:
        return handlers.design_enumerate(req)

    @app.post("/design/sample", response_model=sm.DesignSampleResponse)
    def design_sample(req: sm.DesignSampleRequest) -> sm.DesignSampleResponse:
        return handlers.design_sample(req)

    @app.post("/probs", response_model=sm.ProbsResponse)
    def probs(req: sm.ProbsRequest) -> sm.ProbsResponse:
        return handlers.probs(req)

    @app.post("/bound", response_model=sm.BoundResponse)
    def bound(req: sm.BoundRequest) -> sm.BoundResponse:
        return handlers.bound(req)

    @app.post("/estimate", response_model=sm.EstimateResponse)
    def estimate(req: sm.EstimateRequest) -> sm.EstimateResponse:
        return handlers.estimate(req)

    @app.post("/varest", response_model=sm.VarestResponse)
    def varest(req: sm.VarestRequest) -> sm.VarestResponse:
        return handlers.varest(req)

    @app.post("/simulate", response_model=sm.SimulateResponse)
    def simulate(req: sm.SimulateRequest) -> sm.SimulateResponse:
        return handlers.simulate(req)

    @app.post("/check", response_model=sm.CheckResponse)
    def check(req: sm.CheckRequest) -> sm.CheckResponse:
        return handlers.check(req)

    return app


app = create_app()
