from fastapi import APIRouter, HTTPException, Query, status
from typing import List, Optional

from app.core.errors import VALIDATION_ERRORS
from app.schemas import taxonomy as taxonomy_schemas
from app.services import advisor
from app.services import taxonomy as taxonomy_service

router = APIRouter()


@router.get("/classify", response_model=taxonomy_schemas.ClassifyResponse)
def classify_sub_task(
    benchmark: str = Query(..., description="MMBench, MME or SEED-Bench (aliases MMB, SEED)"),
    sub_task: str = Query(..., description="Sub-task name, case and whitespace insensitive"),
):
    try:
        entry = taxonomy_service.BUILTIN.lookup(benchmark, sub_task)
    except VALIDATION_ERRORS as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    return taxonomy_schemas.ClassifyResponse(**entry.model_dump())


@router.get("/entries", response_model=List[taxonomy_schemas.TaxonomyEntry])
def list_entries(
    benchmark: Optional[str] = Query(None, description="Restrict to one benchmark"),
    granularity: Optional[taxonomy_schemas.Granularity] = Query(None, description="Restrict to one granularity"),
):
    try:
        entries = taxonomy_service.BUILTIN.entries(benchmark)
    except VALIDATION_ERRORS as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    if granularity is not None:
        entries = [e for e in entries if e.granularity is granularity]
    return entries


@router.post("/score", response_model=taxonomy_schemas.ScoreReport)
def score_results(request: taxonomy_schemas.ScoreRequest):
    """
    Roll per-sub-task results up into coarse / fine / reasoning scores,
    pooled and per benchmark. Empty granularities come back as null.
    """
    try:
        return taxonomy_service.aggregate(request.results, request.mode)
    except VALIDATION_ERRORS as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))


@router.get("/advise", response_model=taxonomy_schemas.Advice)
def get_advice(
    resolution: int = Query(..., description="Image resolution: 224, 336 or 448"),
    priority: taxonomy_schemas.Priority = Query(taxonomy_schemas.Priority.BALANCED),
    budget: taxonomy_schemas.Budget = Query(taxonomy_schemas.Budget.AMPLE),
):
    try:
        return advisor.advise(resolution, priority, budget)
    except VALIDATION_ERRORS as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
