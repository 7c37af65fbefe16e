from pydantic import BaseModel, Field, field_validator
from typing import Any, Dict, List, Optional
import datetime
import json


class TrainRunOut(BaseModel):
    id: int
    connector: str
    task: str
    seed: int
    steps: int
    final_accuracy: float
    final_loss: Optional[float] = None
    diverged: bool
    diverged_step: Optional[int] = None

    class Config:
        from_attributes = True


class RunBase(BaseModel):
    id: int
    subcommand: str
    seed: int
    tool_version: str
    output_dir: str
    created_at: Optional[datetime.datetime] = None

    class Config:
        from_attributes = True


class Run(RunBase):
    config: Dict[str, Any] = Field(..., validation_alias="config_json")
    outputs: List[str] = Field(..., validation_alias="outputs_json")
    train_runs: List[TrainRunOut] = []

    @field_validator("config", "outputs", mode="before")
    @classmethod
    def _decode(cls, v):
        return json.loads(v) if isinstance(v, str) else v
