"""HTTP front end: runs experiments on request and returns the result table.

Start with ``iaofdma serve`` or ``uvicorn iaofdma.service:app``.
"""

from __future__ import annotations

import time

from fastapi import FastAPI, HTTPException

from . import __version__
from .schemas import ExperimentRequest, ExperimentResponse
from .harness import run_experiment
from .schemes import SCHEMES

app = FastAPI(title="iaofdma", version=__version__)


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.get("/schemes")
def list_schemes():
    return {"schemes": list(SCHEMES)}


@app.post("/experiments", response_model=ExperimentResponse)
def experiment(req: ExperimentRequest) -> ExperimentResponse:
    # plain def: FastAPI runs it in a worker thread, so long runs do not block the event loop
    try:
        config = req.to_config()
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    started = time.perf_counter()
    table = run_experiment(config)
    return ExperimentResponse.from_table(table, time.perf_counter() - started)
