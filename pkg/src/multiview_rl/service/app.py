from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import ValidationError

from .. import __version__
from . import handlers
from .schemas import EvalRequest, EvalResponse, Health, OracleResponse, SeedSummary, SweepRequest, SweepResponse, TrainRequest


def _guard(fn, *args):
    try:
        return fn(*args)
    except FileNotFoundError as exc:
        raise HTTPException(status_code=404, detail=str(exc)) from exc
    except FileExistsError as exc:
        raise HTTPException(status_code=409, detail=str(exc)) from exc
    except (ValueError, ValidationError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


def create_app() -> FastAPI:
    app = FastAPI(title="multiview-rl", version=__version__)

    @app.get("/health", response_model=Health)
    def health():
        return Health(version=__version__)

    # training endpoints block until the run finishes; FastAPI runs them in its worker threadpool
    @app.post("/train", response_model=SeedSummary)
    def train(req: TrainRequest):
        return _guard(handlers.train, req)

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest):
        return _guard(handlers.sweep, req)

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(req: EvalRequest):
        return _guard(handlers.evaluate_run, req)

    @app.post("/oracle", response_model=OracleResponse)
    def oracle():
        return handlers.oracle()

    return app


app = create_app()
