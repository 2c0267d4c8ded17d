"""HTTP service exposing the experiment pipeline and a decision endpoint.

The service is a thin wrapper: each endpoint validates a request model, calls
the corresponding pipeline operation, and returns its summary. Heavy artifacts
(datasets, models, CSV tables) are written to the requested output directory on
the service host; responses carry paths, hashes and summary numbers. Loaded
models are cached in process memory keyed by file path, so a long-running
service can serve many decision requests against one model.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .controllers import CONTROLLER_KINDS, _decide_batch
from .mfe import N_MODES
from .pipeline import (RunConfig, _controller_spec, config_hash, op_evaluate,
                       op_generate, op_pdf, op_train, op_tune)
from .storage import load_model

app = FastAPI(title="esncontrol", version=__version__)

_model_cache: dict[str, object] = {}


def _cached_model(path: str):
    resolved = str(Path(path).resolve())
    if resolved not in _model_cache:
        try:
            _model_cache[resolved] = load_model(resolved)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=400, detail=f"model file not found: {path}") from exc
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
    return _model_cache[resolved]


def _run(op, *args, **kwargs):
    try:
        return op(*args, **kwargs)
    except FileNotFoundError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    except (ValueError, KeyError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    except Exception as exc:
        raise HTTPException(status_code=500, detail=f"{type(exc).__name__}: {exc}") from exc


class HealthResponse(BaseModel):
    status: str
    version: str


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


class GenerateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: RunConfig
    output_dir: str | None = None


class OpResponse(BaseModel):
    config_hash: str
    result: dict


@app.post("/ops/generate", response_model=OpResponse)
def generate(req: GenerateRequest) -> OpResponse:
    out = req.output_dir or req.config.output_dir
    result = _run(op_generate, req.config, out)
    return OpResponse(config_hash=config_hash(req.config), result=result)


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: RunConfig
    dataset_path: str
    val_path: str | None = None
    output_dir: str | None = None


@app.post("/ops/train", response_model=OpResponse)
def train_op(req: TrainRequest) -> OpResponse:
    out = req.output_dir or req.config.output_dir
    result = _run(op_train, req.config, req.dataset_path, out, val_path=req.val_path)
    return OpResponse(config_hash=config_hash(req.config), result=result)


class TuneRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: RunConfig
    controller: str
    model_path: str | None = None
    output_dir: str | None = None
    budget: int | None = None


@app.post("/ops/tune", response_model=OpResponse)
def tune(req: TuneRequest) -> OpResponse:
    out = req.output_dir or req.config.output_dir
    result = _run(op_tune, req.config, req.controller, req.model_path, out,
                  budget=req.budget)
    return OpResponse(config_hash=config_hash(req.config), result=result)


class EvaluateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: RunConfig
    model_path: str | None = None
    output_dir: str | None = None
    workers: int = 1
    strategies: list[str] | None = None


@app.post("/ops/evaluate", response_model=OpResponse)
def evaluate(req: EvaluateRequest) -> OpResponse:
    out = req.output_dir or req.config.output_dir
    result = _run(op_evaluate, req.config, req.model_path, out,
                  workers=req.workers, strategies=req.strategies)
    return OpResponse(config_hash=config_hash(req.config), result=result)


class PdfRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: RunConfig
    data_paths: list[str]
    output_dir: str | None = None


@app.post("/ops/pdf", response_model=OpResponse)
def pdf(req: PdfRequest) -> OpResponse:
    out = req.output_dir or req.config.output_dir
    result = _run(op_pdf, req.config, req.data_paths, out)
    return OpResponse(config_hash=config_hash(req.config), result=result)


class DecideRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: RunConfig = Field(default_factory=RunConfig)
    kind: str
    q: list[float]
    k_history: list[float] | None = None
    model_path: str | None = None


class DecideResponse(BaseModel):
    re: float
    controlled: bool


@app.post("/decide", response_model=DecideResponse)
def decide(req: DecideRequest) -> DecideResponse:
    if req.kind not in CONTROLLER_KINDS:
        raise HTTPException(status_code=400, detail=f"unknown controller kind {req.kind!r}")
    if len(req.q) != N_MODES:
        raise HTTPException(status_code=400, detail=f"state must have {N_MODES} components")
    model = None
    if req.kind in ("P_ESN", "MPC", "LIT_THRESHOLD"):
        if req.model_path is None:
            raise HTTPException(status_code=400, detail=f"{req.kind} requires model_path")
        model = _cached_model(req.model_path)
    cfg = req.config
    p = cfg.mfe.to_params()
    try:
        spec = _controller_spec(req.kind, cfg, model)
        state = np.asarray(req.q, dtype=np.float64).reshape(1, N_MODES)
        if req.k_history:
            k_hist = np.asarray(req.k_history, dtype=np.float64)[None, :]
        else:
            k_hist = np.array([[0.5 * float(np.sum(state * state))]])
        re = float(_decide_batch(spec, state, k_hist, p, cfg.reward.to_config())[0])
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return DecideResponse(re=re, controlled=re != p.re_base)
