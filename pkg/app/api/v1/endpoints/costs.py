from fastapi import APIRouter, HTTPException, status

from app.core.errors import VALIDATION_ERRORS
from app.schemas import cost as cost_schemas
from app.services import cost_model

router = APIRouter()


@router.post("/report", response_model=cost_schemas.CostReport)
def create_cost_report(cfg: cost_schemas.PipelineConfig):
    """Per-sample connector and LLM prefill FLOPs for one pipeline."""
    try:
        return cost_model.cost_report(cfg)
    except VALIDATION_ERRORS as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))


@router.post("/reduction", response_model=cost_schemas.ReductionResponse)
def create_reduction_estimate(request: cost_schemas.ReductionRequest):
    """
    Predicted training-time reduction of `compressed` against `base`.
    Both pipelines must share resolution and LLM dimensions.
    """
    try:
        pct = cost_model.predict_time_reduction(request.base, request.compressed)
        return cost_schemas.ReductionResponse(
            base=cost_model.cost_report(request.base),
            compressed=cost_model.cost_report(request.compressed),
            overhead_flops=cost_model.overhead_flops(request.base),
            predicted_reduction_pct=pct,
        )
    except VALIDATION_ERRORS as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))


@router.get("/sweep", response_model=cost_schemas.CostSweepResponse)
def get_cost_sweep():
    """Two-layer MLP vs ConvMap-144 at every supported resolution and both training stages."""
    return cost_schemas.CostSweepResponse(rows=cost_model.table_sweep())
