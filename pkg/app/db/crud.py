import json
import logging
from typing import List, Optional, Sequence

from sqlalchemy.orm import Session

from . import models
from app.schemas.manifest import RunManifest
from app.schemas.training import TrainRun

logger = logging.getLogger(__name__)


def create_run(
    db: Session,
    manifest: RunManifest,
    output_dir: str,
    train_runs: Sequence[TrainRun] = (),
) -> models.RunRecord:
    db_run = models.RunRecord(
        subcommand=manifest.subcommand,
        seed=manifest.seed,
        config_json=json.dumps(manifest.config, sort_keys=True),
        outputs_json=json.dumps(manifest.outputs),
        output_dir=str(output_dir),
        tool_version=manifest.tool_version,
    )
    for r in train_runs:
        db_run.train_runs.append(models.TrainRunRecord(
            connector=r.spec.label,
            task=r.task.value,
            seed=r.seed,
            steps=r.steps,
            final_accuracy=r.final_accuracy,
            final_loss=r.final_loss,
            diverged=r.diverged,
            diverged_step=r.diverged_step,
        ))
    db.add(db_run)
    db.commit()
    db.refresh(db_run)
    logger.info("Recorded %s run %d with %d training runs", manifest.subcommand, db_run.id, len(db_run.train_runs))
    return db_run


def get_run(db: Session, run_id: int) -> Optional[models.RunRecord]:
    return db.query(models.RunRecord).filter(models.RunRecord.id == run_id).first()


def get_runs(
    db: Session,
    skip: int = 0,
    limit: int = 100,
    subcommand: Optional[str] = None,
) -> List[models.RunRecord]:
    query = db.query(models.RunRecord)
    if subcommand:
        query = query.filter(models.RunRecord.subcommand == subcommand)
    return query.order_by(models.RunRecord.id).offset(skip).limit(limit).all()

