from fastapi import APIRouter

from .endpoints import connectors, costs, taxonomy, runs

router = APIRouter()

router.include_router(connectors.router, prefix="/connectors", tags=["Connectors"])
router.include_router(costs.router, prefix="/costs", tags=["Cost Model"])
router.include_router(taxonomy.router, prefix="/taxonomy", tags=["Granularity Taxonomy"])
router.include_router(runs.router, prefix="/runs", tags=["Run Registry"])
