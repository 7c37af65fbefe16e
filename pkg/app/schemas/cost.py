from pydantic import BaseModel, Field
from typing import List, Optional

from .connector import ConnectorSpec


class PipelineConfig(BaseModel):
    connector: ConnectorSpec
    resolution: int = Field(..., gt=0)
    text_tokens: int = Field(..., ge=0)
    llm_hidden: int = Field(4096, gt=0)
    llm_layers: int = Field(32, gt=0)
    patch_size: int = Field(14, gt=0)
    stage: Optional[int] = Field(None, ge=1, le=2)


class CostReport(BaseModel):
    connector_flops: int
    llm_flops: int
    total_flops: int
    params: int
    visual_tokens: int


class ReductionRequest(BaseModel):
    base: PipelineConfig
    compressed: PipelineConfig


class ReductionResponse(BaseModel):
    base: CostReport
    compressed: CostReport
    overhead_flops: int
    predicted_reduction_pct: float


class CostRow(BaseModel):
    connector: str
    resolution: int
    tokens: int
    stage: int
    connector_flops: int
    llm_flops: int
    predicted_reduction_pct: float
    reference_reduction_pct: Optional[float] = None
    in_model_range: bool = True


class CostSweepResponse(BaseModel):
    rows: List[CostRow]
