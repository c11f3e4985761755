"""HTTP service around the renderer, trainer and evaluation harness."""

from __future__ import annotations

from importlib.metadata import PackageNotFoundError, version

from fastapi import FastAPI, HTTPException

from ..errors import ConfigError, DomainError
from . import handlers
from .jobs import JobManager
from .models import (
    EvalRequest, EvalResponse, Health, JobStatus, RenderRequest, RenderResponse, RotateEvalRequest, SynthRequest,
    SynthResponse, TrainRequest,
)


def _version() -> str:
    try:
        return version("spherical-gof")
    except PackageNotFoundError:
        return "0"


def _call(fn, req):
    try:
        return fn(req)
    except (ConfigError, DomainError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None


def create_app(jobs: JobManager | None = None) -> FastAPI:
    app = FastAPI(title="spherical-gof", version=_version())
    app.state.jobs = jobs or JobManager()

    @app.get("/health", response_model=Health)
    def health():
        return Health(version=_version())

    @app.post("/render", response_model=RenderResponse)
    def render(req: RenderRequest):
        return _call(handlers.handle_render, req)

    @app.post("/train", response_model=JobStatus, status_code=202)
    def train(req: TrainRequest):
        return app.state.jobs.submit("train", lambda progress: handlers.handle_train(req, progress),
                                     total=req.iterations or 0)

    @app.get("/jobs", response_model=list[JobStatus])
    def list_jobs():
        return app.state.jobs.list()

    @app.get("/jobs/{job_id}", response_model=JobStatus)
    def get_job(job_id: str):
        try:
            return app.state.jobs.get(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no job {job_id}") from None

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(req: EvalRequest):
        return _call(handlers.handle_eval, req)

    @app.post("/synth", response_model=SynthResponse)
    def synth(req: SynthRequest):
        return _call(handlers.handle_synth, req)

    @app.post("/rotate-eval", response_model=EvalResponse)
    def rotate_eval(req: RotateEvalRequest):
        return _call(handlers.handle_rotate_eval, req)

    return app


app = create_app()
