from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Optional, Tuple
import enum
import math

from app.core.errors import ConfigError


class ConnectorKind(str, enum.Enum):
    LINEAR = "linear"
    MLP = "mlp"
    AVGPOOL = "avgpool"
    ATTNPOOL = "attnpool"
    CONVMAP = "convmap"

    @property
    def is_compressing(self) -> bool:
        return self in (ConnectorKind.AVGPOOL, ConnectorKind.ATTNPOOL, ConnectorKind.CONVMAP)


KIND_ALIASES = {
    "linear": ConnectorKind.LINEAR,
    "mlp": ConnectorKind.MLP,
    "two-layer-mlp": ConnectorKind.MLP,
    "twolayermlp": ConnectorKind.MLP,
    "avgpool": ConnectorKind.AVGPOOL,
    "average-pooling": ConnectorKind.AVGPOOL,
    "attnpool": ConnectorKind.ATTNPOOL,
    "qformer": ConnectorKind.ATTNPOOL,
    "q-former": ConnectorKind.ATTNPOOL,
    "convmap": ConnectorKind.CONVMAP,
    "cabstractor": ConnectorKind.CONVMAP,
    "c-abstractor": ConnectorKind.CONVMAP,
}


def parse_kind(value) -> ConnectorKind:
    if isinstance(value, ConnectorKind):
        return value
    key = str(value).strip().lower().replace("_", "-").replace(" ", "-")
    if key not in KIND_ALIASES:
        raise ConfigError(f"Unknown connector '{value}'. Known: {', '.join(sorted(KIND_ALIASES))}")
    return KIND_ALIASES[key]


def parse_label(value) -> Tuple[ConnectorKind, Optional[int]]:
    """Kind or alias with an optional token-count suffix: `avgpool`, `avgpool-144`, `qformer-64`."""
    if isinstance(value, ConnectorKind):
        return value, None
    text = str(value).strip()
    head, sep, tail = text.rpartition("-")
    if sep and head and tail.isdigit():
        return parse_kind(head), int(tail)
    return parse_kind(text), None


class ConnectorSpec(BaseModel):
    kind: ConnectorKind
    d_v: int = Field(..., gt=0, description="Channel dimension of the patch features")
    d_llm: int = Field(..., gt=0, description="Output (LLM hidden) dimension")
    num_tokens: Optional[int] = Field(None, gt=0, description="Compressed token count Q")
    d_c: Optional[int] = Field(None, gt=0, description="Cross-attention hidden size")
    kernel: int = Field(3, gt=0)
    bias: bool = True
    seed: int = 0

    model_config = {"frozen": True}

    @field_validator("kind", mode="before")
    @classmethod
    def _alias_kind(cls, v):
        return parse_kind(v)

    @model_validator(mode="after")
    def _check_shape_rules(self):
        if self.kind.is_compressing:
            if self.num_tokens is None:
                raise ValueError(f"{self.kind.value} needs num_tokens")
            side = math.isqrt(self.num_tokens)
            if side * side != self.num_tokens:
                raise ValueError(f"num_tokens must be a perfect square, got {self.num_tokens}")
        elif self.num_tokens is not None:
            raise ValueError(f"{self.kind.value} preserves one token per patch; num_tokens must be unset")
        if self.kind is ConnectorKind.CONVMAP and self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        return self

    @property
    def cross_dim(self) -> int:
        return self.d_c if self.d_c is not None else self.d_v

    @property
    def q_side(self) -> Optional[int]:
        return math.isqrt(self.num_tokens) if self.num_tokens is not None else None

    @property
    def label(self) -> str:
        if self.num_tokens is None:
            return self.kind.value
        return f"{self.kind.value}-{self.num_tokens}"


class ParamCountResponse(BaseModel):
    connector: str
    param_count: int
    extra_over_mlp: int
