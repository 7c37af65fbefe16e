import logging

from fastapi import FastAPI

from app import __version__
from app.core.config import settings
from app.db import database
from app.api.v1 import api as api_v1

logger = logging.getLogger(__name__)

app = FastAPI(
    title=settings.PROJECT_NAME,
    version=__version__,
    openapi_url=f"{settings.API_V1_STR}/openapi.json"
)

app.include_router(api_v1.router, prefix=settings.API_V1_STR)


@app.on_event("startup")
def on_startup():
    logger.info("Application startup: %s is ready.", settings.PROJECT_NAME)
    try:
        database.init_db()
        logger.info("Run registry available at %s", settings.DATABASE_URL)
    except Exception as e:
        logger.error("Could not open the run registry: %s", e)
        logger.error("Check DATABASE_URL in your .env file or run scripts/initialize_db.py.")


@app.get("/", tags=["Root"])
async def read_root():
    return {"message": f"Welcome to the {settings.PROJECT_NAME}! Navigate to /docs for API documentation."}
