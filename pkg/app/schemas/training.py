from pydantic import BaseModel, Field, model_validator
from typing import List, Optional
import enum

from app.core.errors import ConfigError

from .connector import ConnectorSpec


class Task(str, enum.Enum):
    COARSE = "coarse"
    FINE = "fine"
    REASONING = "reasoning"


def parse_task(value) -> Task:
    if isinstance(value, Task):
        return value
    try:
        return Task(str(value).strip().lower())
    except ValueError:
        raise ConfigError(f"Unknown task '{value}'. Known: {', '.join(t.value for t in Task)}") from None


class DatasetConfig(BaseModel):
    task: Task
    n: int = Field(256, gt=0, description="Number of samples, train and held-out together")
    grid_side: int = Field(24, gt=0)
    d_v: int = Field(32, gt=0)
    k: int = Field(4, gt=1, description="Number of classes")
    noise_scale: float = Field(0.5, ge=0)
    signal_scale: float = Field(2.0, gt=0)
    eval_fraction: float = Field(0.25, ge=0, lt=1)
    seed: int = 0

    model_config = {"frozen": True}


class HeadConfig(BaseModel):
    d_head: int = Field(32, gt=0, description="Width of the attention reader")

    model_config = {"frozen": True}


class TrainHyper(BaseModel):
    lr: float = Field(0.05, ge=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    steps: int = Field(200, gt=0)
    batch: int = Field(32, gt=0)
    grad_clip: Optional[float] = Field(5.0, gt=0)

    model_config = {"frozen": True}


class TrainRun(BaseModel):
    spec: ConnectorSpec
    task: Task
    seed: int
    steps: int
    loss_curve: List[float]
    final_accuracy: float
    diverged: bool = False
    diverged_step: Optional[int] = None

    @model_validator(mode="after")
    def _check_curve(self):
        if not self.diverged and len(self.loss_curve) != self.steps:
            raise ValueError(f"loss_curve has {len(self.loss_curve)} entries for {self.steps} steps")
        return self

    @property
    def final_loss(self) -> Optional[float]:
        return self.loss_curve[-1] if self.loss_curve else None


class FirstStepResult(BaseModel):
    loss_before: float
    loss_after: float

    @property
    def change(self) -> float:
        return self.loss_after - self.loss_before


class CompareRow(BaseModel):
    connector: str
    task: Task
    seeds: List[int]
    mean_final_accuracy: Optional[float] = None
    mean_checkpoint_loss: Optional[float] = None
    checkpoint_step: int
    diverged_seeds: List[int] = []

    @property
    def flagged(self) -> bool:
        return bool(self.diverged_seeds)


class CompareReport(BaseModel):
    rows: List[CompareRow]
    runs: List[TrainRun]

    def for_task(self, task: Task) -> List[CompareRow]:
        return [r for r in self.rows if r.task is Task(task)]

    def row(self, connector: str, task: Task) -> CompareRow:
        for r in self.rows:
            if r.connector == connector and r.task is Task(task):
                return r
        raise KeyError((connector, task))
