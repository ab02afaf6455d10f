"""Request/response bodies for the stage endpoints.

Every request names filesystem paths on the service host; stages exchange
artifacts through those paths rather than by streaming pixels over HTTP.
`config` points at a JSON pipeline config (defaults apply when omitted) and
`out` is the directory a stage writes into and its successors read from.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class StageRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: Optional[str] = None
    out: str


class SynthRequest(StageRequest):
    seed: Optional[int] = Field(None, ge=0)


class RegionsRequest(StageRequest):
    manifest: Optional[str] = None
    seed: Optional[int] = Field(None, ge=0)
    layers: Optional[int] = Field(None, ge=1)


class EdgesRequest(StageRequest):
    manifest: Optional[str] = None


class ProposalsRequest(StageRequest):
    manifest: Optional[str] = None
    regions: Optional[str] = None
    multistride: Optional[bool] = None
    layers: Optional[int] = Field(None, ge=1)


class FeaturesRequest(ProposalsRequest):
    pass


class TrainRequest(StageRequest):
    manifest: Optional[str] = None
    regions: Optional[str] = None
    seed: Optional[int] = Field(None, ge=0)
    layers: Optional[int] = Field(None, ge=1)


class InferRequest(StageRequest):
    manifest: Optional[str] = None
    model: Optional[str] = None
    multistride: Optional[bool] = None
    fusion: Optional[bool] = None
    layers: Optional[int] = Field(None, ge=1)


class EvalRocRequest(StageRequest):
    manifest: Optional[str] = None


class EvalRecallRequest(StageRequest):
    manifest: Optional[str] = None
    top_ns: Optional[list[int]] = None


class RenderRequest(StageRequest):
    manifest: Optional[str] = None
    max_boxes: int = Field(20, ge=1)


class StageResponse(BaseModel):
    ok: bool = True
    result: dict
