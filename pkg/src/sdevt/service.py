"""HTTP facade over the experiment runner.

POST /run executes a config synchronously and returns the full result;
POST /validate checks a config without running it.  The CLI talks to this
app in-process by default.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import __version__, sde
from .experiments import ConfigError, ExperimentConfig, ExperimentResult, run

app = FastAPI(title="sdevt service", version=__version__)


class HealthResponse(BaseModel):
    status: str
    version: str


class ModelInfo(BaseModel):
    name: str
    params: list[str]
    description: str


class ModelsResponse(BaseModel):
    models: list[ModelInfo]


class ValidateResponse(BaseModel):
    valid: bool
    errors: list[str]
    experiment_id: str | None = None


_MODEL_DOCS = [
    ModelInfo(name="ou", params=[], description="b(x) = -x (exact sampler)"),
    ModelInfo(name="ou_shift", params=["c"], description="b(x) = -x + c"),
    ModelInfo(name="double_well", params=["box"],
              description="b(x) = x - x^3 coordinatewise, Lipschitz on |x| <= box"),
    ModelInfo(name="custom_linear", params=["matrix"],
              description="b(x) = A x, symmetric part negative definite"),
]


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.get("/models", response_model=ModelsResponse)
def models() -> ModelsResponse:
    assert {m.name for m in _MODEL_DOCS} == set(sde.BUILTIN_MODELS)
    return ModelsResponse(models=_MODEL_DOCS)


@app.post("/validate", response_model=ValidateResponse)
def validate(cfg: dict) -> ValidateResponse:
    import json

    from .experiments import parse_config

    try:
        parsed = parse_config(json.dumps(cfg))
    except ConfigError as exc:
        return ValidateResponse(valid=False, errors=exc.errors)
    return ValidateResponse(valid=True, errors=[], experiment_id=parsed.resolved_id())


@app.post("/run", response_model=ExperimentResult)
def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    # the service never writes files; persistence belongs to the client
    cfg = cfg.model_copy(update={"out_dir": None})
    try:
        return run(cfg)
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail=exc.errors) from exc
