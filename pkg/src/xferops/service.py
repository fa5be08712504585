"""HTTP front end: a small FastAPI app over the experiment runner.

Run with ``xferops serve`` or ``uvicorn xferops.service:app``.
"""
from __future__ import annotations

from typing import Any, Dict, List, Optional, Union

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .experiments import ALL, EXPERIMENTS, ExperimentConfig, run_all, run_experiment


class RunRequest(BaseModel):
    """Experiment parameters; the experiment name comes from the path."""

    model_config = ConfigDict(extra="forbid")

    op: Optional[Union[str, dict]] = None
    measure: str = "lebesgue"
    grid_level: int = Field(12, ge=4, le=20)
    tol: Optional[float] = None
    seed: int = 0
    N: int = Field(200, ge=1)
    depth: int = Field(4, ge=0, le=8)
    n_paths: int = Field(100_000, ge=10)
    trials: int = Field(10, ge=1)
    u: str = "1/4"
    n_samples: int = Field(100_000, ge=1)
    n_max: int = Field(8, ge=0)
    filter: str = "haar"
    max_iter: int = Field(200, ge=1)
    export_paths: bool = False


class TableOut(BaseModel):
    header: List[str]
    rows: List[List[Any]]


class ResultOut(BaseModel):
    experiment: str
    passed: bool
    summary: Dict[str, Any]
    tables: Dict[str, TableOut]
    extra_json: Dict[str, Any] = {}


class RunResponse(BaseModel):
    passed: bool
    results: List[ResultOut]


app = FastAPI(title="xferops", version=__version__)


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.get("/experiments")
def list_experiments():
    return {"experiments": list(EXPERIMENTS) + [ALL],
            "defaults": RunRequest().model_dump()}


@app.post("/experiments/{name}", response_model=RunResponse)
def post_experiment(name: str, req: Optional[RunRequest] = None):
    if name not in EXPERIMENTS and name != ALL:
        raise HTTPException(status_code=404, detail=f"unknown experiment {name!r}")
    req = RunRequest() if req is None else req
    try:
        cfg = ExperimentConfig(experiment=name, **req.model_dump())
        results = run_all(cfg) if name == ALL else [run_experiment(cfg)]
    except (ValueError, ValidationError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    payloads = [r.to_payload() for r in results]
    return {"passed": all(p["passed"] for p in payloads), "results": payloads}
