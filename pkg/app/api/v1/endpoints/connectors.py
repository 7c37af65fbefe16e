from fastapi import APIRouter, HTTPException, Query, status
from pydantic import ValidationError
from typing import Optional

from app.core.errors import ConfigError
from app.schemas import connector as connector_schemas
from app.schemas.connector import ConnectorKind, ConnectorSpec
from app.services.connectors import param_count

router = APIRouter()


@router.get("/param-count", response_model=connector_schemas.ParamCountResponse)
def get_param_count(
    connector: str = Query(..., description="Connector kind or alias, e.g. 'mlp', 'qformer', 'cabstractor'"),
    d_v: int = Query(1024, gt=0, description="Patch feature width"),
    d_llm: int = Query(4096, gt=0, description="LLM hidden width"),
    tokens: Optional[int] = Query(None, gt=0, description="Compressed token count for compressing connectors"),
    d_c: Optional[int] = Query(None, gt=0, description="Cross-attention width for attnpool"),
    kernel: int = Query(3, gt=0, description="Convolution kernel for convmap"),
    bias: bool = Query(True, description="Include projection biases"),
):
    """
    Exact learnable parameter count of a connector, and how many parameters
    it adds over a two-layer MLP of the same widths.
    """
    try:
        spec = ConnectorSpec(kind=connector, d_v=d_v, d_llm=d_llm, num_tokens=tokens, d_c=d_c, kernel=kernel, bias=bias)
    except (ConfigError, ValidationError) as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    mlp = ConnectorSpec(kind=ConnectorKind.MLP, d_v=d_v, d_llm=d_llm, bias=bias)
    count = param_count(spec)
    return connector_schemas.ParamCountResponse(
        connector=spec.label,
        param_count=count,
        extra_over_mlp=count - param_count(mlp),
    )
