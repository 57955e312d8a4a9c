"""HTTP front end: one endpoint per run kind, all backed by the same
`runner.execute` used by the CLI.  Responses carry the manifest, the text
artifacts, and the exit code the CLI would have returned."""

from __future__ import annotations

from typing import Any, Optional

from fastapi import FastAPI
from pydantic import BaseModel

from . import __version__
from .runner import RunConfig, execute

app = FastAPI(title="kamtori", version=__version__)


class RunResponse(BaseModel):
    exit_code: int
    message: str
    manifest: dict[str, Any]
    artifacts: dict[str, str]


class HealthResponse(BaseModel):
    status: str
    version: str


def _run(config: RunConfig, kind: str, strict: Optional[bool]) -> RunResponse:
    data = config.model_dump()
    data["kind"] = kind
    if strict is not None:
        data["strict"] = strict
    cfg = RunConfig.model_validate(data)
    result = execute(cfg)
    return RunResponse(exit_code=result.exit_code, message=result.message,
                       manifest=result.manifest, artifacts=result.artifacts)


@app.get("/v1/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/v1/step", response_model=RunResponse)
def step(config: RunConfig, strict: Optional[bool] = None) -> RunResponse:
    return _run(config, "step", strict)


@app.post("/v1/iterate", response_model=RunResponse)
def iterate(config: RunConfig, strict: Optional[bool] = None) -> RunResponse:
    return _run(config, "iterate", strict)


@app.post("/v1/scaling", response_model=RunResponse)
def scaling(config: RunConfig, strict: Optional[bool] = None) -> RunResponse:
    return _run(config, "scaling", strict)


@app.post("/v1/verify", response_model=RunResponse)
def verify(config: RunConfig, strict: Optional[bool] = None) -> RunResponse:
    return _run(config, "verify", strict)
