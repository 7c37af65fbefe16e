from fastapi import APIRouter, Depends, HTTPException, Query, status
from sqlalchemy.orm import Session
from typing import List, Optional

from app.db import crud
from app.db.database import get_db
from app.schemas import run as run_schemas

router = APIRouter()


@router.get("/", response_model=List[run_schemas.Run])
def read_runs(
    skip: int = Query(0, ge=0),
    limit: int = Query(100, ge=1, le=1000),
    subcommand: Optional[str] = Query(None, description="Filter by CLI subcommand"),
    db: Session = Depends(get_db),
):
    """Runs stored by the CLI with --record, oldest first."""
    return crud.get_runs(db, skip=skip, limit=limit, subcommand=subcommand)


@router.get("/{run_id}", response_model=run_schemas.Run)
def read_run(run_id: int, db: Session = Depends(get_db)):
    db_run = crud.get_run(db, run_id=run_id)
    if db_run is None:
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail=f"Run with ID {run_id} not found.")
    return db_run
