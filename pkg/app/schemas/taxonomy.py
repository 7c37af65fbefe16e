from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Dict, List, Optional
import enum


class Granularity(str, enum.Enum):
    COARSE = "coarse"
    FINE = "fine"
    REASONING = "reasoning"


class AggregationMode(str, enum.Enum):
    MACRO = "macro"
    MICRO = "micro"


class Priority(str, enum.Enum):
    COARSE = "coarse"
    FINE = "fine"
    REASONING = "reasoning"
    BALANCED = "balanced"


class Budget(str, enum.Enum):
    AMPLE = "ample"
    LIMITED = "limited"


class TaxonomyEntry(BaseModel):
    benchmark: str
    sub_task: str
    granularity: Granularity
    original_parent: Optional[str] = None

    model_config = {"frozen": True}

    @field_validator("granularity", mode="before")
    @classmethod
    def _lower(cls, v):
        return v.strip().lower() if isinstance(v, str) else v


class SubTaskResult(BaseModel):
    benchmark: str = Field(..., min_length=1)
    sub_task: str = Field(..., min_length=1)
    correct: int = Field(..., ge=0)
    total: int = Field(..., gt=0)

    @model_validator(mode="after")
    def _check_counts(self):
        if self.correct > self.total:
            raise ValueError(f"correct ({self.correct}) exceeds total ({self.total}) for {self.benchmark}/{self.sub_task}")
        return self

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


class SubTaskScore(BaseModel):
    benchmark: str
    sub_task: str
    granularity: Granularity
    correct: int
    total: int
    accuracy: float


class GranularityScores(BaseModel):
    """C/F/R scores; a granularity with no sub-tasks is absent (None), never zero."""
    coarse: Optional[float] = None
    fine: Optional[float] = None
    reasoning: Optional[float] = None

    def get(self, granularity: Granularity) -> Optional[float]:
        return getattr(self, Granularity(granularity).value)


class ScoreReport(BaseModel):
    mode: AggregationMode
    pooled: GranularityScores
    per_benchmark: Dict[str, GranularityScores]
    sub_tasks: List[SubTaskScore]


class ScoreRequest(BaseModel):
    results: List[SubTaskResult]
    mode: AggregationMode = AggregationMode.MACRO


class Advice(BaseModel):
    recommended: List[str] = Field(..., min_length=1)
    rule: str
    rationale: str
    resolution: int
    priority: Priority
    budget: Budget


class ClassifyResponse(BaseModel):
    benchmark: str
    sub_task: str
    granularity: Granularity
    original_parent: Optional[str] = None
