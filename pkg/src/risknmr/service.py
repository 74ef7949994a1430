"""HTTP prediction service over a loaded model artifact.

The artifact is read once at startup and never mutated, so concurrent
requests share it freely. All heavy fitting happens in the CLI; the
service only scores and predicts. Validation of patient payloads is done
by hand against the artifact schema so the error body can name the
offending covariate (400); a treatment outside the artifact is 422; any
unexpected failure is a bare 500 with no internals leaked.
"""
from __future__ import annotations

import os
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .artifact import ModelArtifact, load_artifact

DEFAULT_PORT = 8000
PORT_ENV_VAR = "RISKNMR_PORT"


def _bad_request(detail: str) -> JSONResponse:
    return JSONResponse(status_code=400, content={"detail": detail})


async def _patient_body(request: Request) -> dict:
    try:
        body = await request.json()
    except Exception:
        raise _PayloadError("request body must be a JSON object")
    if not isinstance(body, dict):
        raise _PayloadError("request body must be a JSON object")
    return body


class _PayloadError(Exception):
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


def model_metadata(artifact: ModelArtifact) -> dict:
    """The /model document: schema, treatments (reference flagged), metadata."""
    return {
        "version": artifact.version,
        "covariates": [s.to_dict() for s in artifact.schema],
        "treatments": [
            {"name": t, "reference": t == artifact.stage2.reference}
            for t in artifact.stage2.treatments
        ],
        "risk_cutoffs": {"low": artifact.cutoffs[0], "high": artifact.cutoffs[1]},
        "stage1_method": artifact.stage1.method,
        "stage1_fingerprint": artifact.stage1.fingerprint(),
        "n_posterior_draws": artifact.stage2.n_retained,
    }


def create_app(artifact: ModelArtifact, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="risknmr prediction service", docs_url=None, redoc_url=None)

    @app.exception_handler(Exception)
    async def _unhandled(request: Request, exc: Exception):
        return JSONResponse(status_code=500, content={"detail": "internal server error"})

    @app.get("/health")
    async def health():
        return {"status": "ok"}

    @app.get("/model")
    async def model():
        return model_metadata(artifact)

    @app.post("/risk")
    async def risk(request: Request):
        try:
            body = await _patient_body(request)
        except _PayloadError as exc:
            return _bad_request(exc.detail)
        covariates = body.get("covariates", body)
        if not isinstance(covariates, dict):
            return _bad_request("covariates must be a JSON object")
        try:
            rs = artifact.risk_for(covariates)
        except ValueError as exc:
            return _bad_request(str(exc))
        return {"risk": rs.risk, "logit_risk": rs.logit_risk}

    @app.post("/predict")
    async def predict_endpoint(request: Request):
        try:
            body = await _patient_body(request)
        except _PayloadError as exc:
            return _bad_request(exc.detail)
        covariates = body.get("covariates", body)
        if not isinstance(covariates, dict):
            return _bad_request("covariates must be a JSON object")
        treatment = body.get("treatment")
        if treatment is not None and treatment not in artifact.stage2.treatments:
            return JSONResponse(
                status_code=422,
                content={"detail": f"unknown treatment: {treatment}"},
            )
        try:
            _, result = artifact.predict_patient(covariates)
        except ValueError as exc:
            return _bad_request(str(exc))
        payload = result.to_dict()
        if treatment is not None:
            payload["treatments"] = [
                t for t in payload["treatments"] if t["treatment"] == treatment
            ]
        return payload

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def default_static_dir() -> str | None:
    """Bundled web UI assets, when the frontend build has been copied in."""
    candidate = Path(__file__).parent / "webui"
    return str(candidate) if candidate.is_dir() else None


def resolve_port(cli_port: int | None) -> int:
    """Explicit --port wins, then the environment override, then the default."""
    if cli_port is not None:
        return cli_port
    env = os.environ.get(PORT_ENV_VAR)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"{PORT_ENV_VAR} must be an integer, got {env!r}")
    return DEFAULT_PORT


def serve(
    artifact_path: str,
    port: int | None = None,
    host: str = "127.0.0.1",
    static_dir: str | None = None,
):
    """Load an artifact and serve it; blocks until interrupted."""
    import uvicorn

    artifact = load_artifact(artifact_path)
    app = create_app(artifact, static_dir=static_dir or default_static_dir())
    uvicorn.run(app, host=host, port=resolve_port(port), log_level="warning")
