import logging
import sys

import os
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, project_root)

from app.db.database import SessionLocal, init_db as create_tables
from app.db import models
from app.core.config import settings

logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)


def init_db():
    logger.info("Initializing run registry at %s...", settings.DATABASE_URL)
    try:
        create_tables()
        logger.info("Registry tables created successfully.")

        db = SessionLocal()
        count = db.query(models.RunRecord).count()
        logger.info("Successfully queried 'runs' table (found %d recorded runs).", count)
        db.close()
        logger.info("Registry initialization complete.")
    except Exception as e:
        logger.error("Error during registry initialization: %s", e)
        logger.error("Please ensure DATABASE_URL in your .env file is correct.")
        sys.exit(1)


if __name__ == "__main__":
    init_db()
