"""FastAPI app: one POST endpoint per pipeline stage.

Error mapping is part of the contract: configuration problems answer 422 with
kind="config", bad or missing data answers 400 with kind="data" (internal
contract violations 400/kind="contract").  Clients key exit codes off these.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, pipeline
from ..config import load_config
from ..errors import ConfigError, ContractError, DataError
from .schemas import (
    EdgesRequest,
    EvalRecallRequest,
    EvalRocRequest,
    FeaturesRequest,
    InferRequest,
    ProposalsRequest,
    RegionsRequest,
    RenderRequest,
    StageResponse,
    SynthRequest,
    TrainRequest,
)

app = FastAPI(title="obstacle-discovery", version=__version__)


@app.exception_handler(ConfigError)
async def _config_error(_: Request, exc: ConfigError) -> JSONResponse:
    return JSONResponse(status_code=422, content={"detail": str(exc), "kind": "config"})


@app.exception_handler(DataError)
async def _data_error(_: Request, exc: DataError) -> JSONResponse:
    return JSONResponse(status_code=400, content={"detail": str(exc), "kind": "data"})


@app.exception_handler(ContractError)
async def _contract_error(_: Request, exc: ContractError) -> JSONResponse:
    return JSONResponse(status_code=400, content={"detail": str(exc), "kind": "contract"})


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/v1/synth", response_model=StageResponse)
def synth(req: SynthRequest) -> StageResponse:
    result = pipeline.stage_synth(load_config(req.config), req.out, seed=req.seed)
    return StageResponse(result=result)


@app.post("/v1/regions", response_model=StageResponse)
def regions(req: RegionsRequest) -> StageResponse:
    result = pipeline.stage_regions(
        load_config(req.config), req.manifest, req.out, seed=req.seed, layers=req.layers
    )
    return StageResponse(result=result)


@app.post("/v1/edges", response_model=StageResponse)
def edges(req: EdgesRequest) -> StageResponse:
    result = pipeline.stage_edges(load_config(req.config), req.manifest, req.out)
    return StageResponse(result=result)


@app.post("/v1/proposals", response_model=StageResponse)
def proposals(req: ProposalsRequest) -> StageResponse:
    result = pipeline.stage_proposals(
        load_config(req.config),
        req.manifest,
        req.regions,
        req.out,
        multistride=req.multistride,
        layers=req.layers,
    )
    return StageResponse(result=result)


@app.post("/v1/features", response_model=StageResponse)
def features(req: FeaturesRequest) -> StageResponse:
    result = pipeline.stage_features(
        load_config(req.config),
        req.manifest,
        req.regions,
        req.out,
        multistride=req.multistride,
        layers=req.layers,
    )
    return StageResponse(result=result)


@app.post("/v1/train", response_model=StageResponse)
def train(req: TrainRequest) -> StageResponse:
    result = pipeline.stage_train(
        load_config(req.config),
        req.manifest,
        req.out,
        seed=req.seed,
        regions_path=req.regions,
        layers=req.layers,
    )
    return StageResponse(result=result)


@app.post("/v1/infer", response_model=StageResponse)
def infer(req: InferRequest) -> StageResponse:
    result = pipeline.stage_infer(
        load_config(req.config),
        req.manifest,
        req.model,
        req.out,
        multistride=req.multistride,
        fusion=req.fusion,
        layers=req.layers,
    )
    return StageResponse(result=result)


@app.post("/v1/eval/roc", response_model=StageResponse)
def eval_roc(req: EvalRocRequest) -> StageResponse:
    result = pipeline.stage_eval_roc(load_config(req.config), req.manifest, req.out)
    return StageResponse(result=result)


@app.post("/v1/eval/recall", response_model=StageResponse)
def eval_recall(req: EvalRecallRequest) -> StageResponse:
    cfg = load_config(req.config)
    if req.top_ns:
        result = pipeline.stage_eval_recall(cfg, req.manifest, req.out, top_ns=req.top_ns)
    else:
        result = pipeline.stage_eval_recall(cfg, req.manifest, req.out)
    return StageResponse(result=result)


@app.post("/v1/render", response_model=StageResponse)
def render(req: RenderRequest) -> StageResponse:
    result = pipeline.stage_render(
        load_config(req.config), req.manifest, req.out, max_boxes=req.max_boxes
    )
    return StageResponse(result=result)
