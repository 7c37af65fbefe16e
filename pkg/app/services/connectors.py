"""
The five connector architectures as differentiable maps from a patch grid
(P x d_v) to visual tokens (P x D for the feature-preserving kinds, Q x D for
the compressing ones).

Row-vector convention throughout: features are rows, so a projection is
f @ W with W of shape (d_in, d_out).
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from app.core.errors import DimensionError
from app.schemas.connector import ConnectorKind, ConnectorSpec
from app.services import geometry
from app.services.geometry import GridShape, WindowMode
from app.services.gradcheck import grad_check
from app.services.tensor import (
    Tensor,
    add,
    average_pool,
    conv2d_same,
    gelu,
    matmul,
    parameter,
    scale,
    softmax_rows,
    sum_all,
    transpose,
)

logger = logging.getLogger(__name__)

QUERY_INIT_STD = 0.02


@dataclass(frozen=True)
class ParamShape:
    name: str
    shape: Tuple[int, ...]
    role: str  # "weight", "bias" or "query"
    fan_in: int = 0


def _linear_shapes(prefix: str, d_in: int, d_out: int, bias: bool) -> List[ParamShape]:
    shapes = [ParamShape(f"{prefix}w", (d_in, d_out), "weight", d_in)]
    if bias:
        shapes.append(ParamShape(f"{prefix}b", (d_out,), "bias"))
    return shapes


def _mlp_shapes(d_in: int, d_llm: int, bias: bool) -> List[ParamShape]:
    return _linear_shapes("mlp1_", d_in, d_llm, bias) + _linear_shapes("mlp2_", d_llm, d_llm, bias)


def _conv_shapes(prefix: str, kernel: int, channels: int, bias: bool) -> List[ParamShape]:
    shapes = [ParamShape(f"{prefix}w", (kernel, kernel, channels, channels), "weight", kernel * kernel * channels)]
    if bias:
        shapes.append(ParamShape(f"{prefix}b", (channels,), "bias"))
    return shapes


def param_shapes(spec: ConnectorSpec) -> List[ParamShape]:
    """Every learnable tensor of a connector, in checkpoint order."""
    if spec.kind is ConnectorKind.LINEAR:
        return _linear_shapes("proj_", spec.d_v, spec.d_llm, spec.bias)
    if spec.kind in (ConnectorKind.MLP, ConnectorKind.AVGPOOL):
        return _mlp_shapes(spec.d_v, spec.d_llm, spec.bias)
    if spec.kind is ConnectorKind.ATTNPOOL:
        d_c = spec.cross_dim
        return (
            [ParamShape("queries", (spec.num_tokens, d_c), "query")]
            + _linear_shapes("key_", spec.d_v, d_c, spec.bias)
            + _linear_shapes("value_", spec.d_v, d_c, spec.bias)
            + _mlp_shapes(d_c, spec.d_llm, spec.bias)
        )
    # convmap
    return (
        _conv_shapes("conv1_", spec.kernel, spec.d_v, spec.bias)
        + _conv_shapes("conv2_", spec.kernel, spec.d_v, spec.bias)
        + _linear_shapes("proj_", spec.d_v, spec.d_llm, spec.bias)
    )


def param_count(spec: ConnectorSpec) -> int:
    return sum(math.prod(p.shape) for p in param_shapes(spec))


class ConnectorParams:
    """Named learnable tensors of one connector. Shapes follow from the spec alone."""

    def __init__(self, spec: ConnectorSpec, tensors: Dict[str, Tensor]):
        expected = {p.name: p.shape for p in param_shapes(spec)}
        got = {name: t.shape for name, t in tensors.items()}
        if expected != got:
            raise DimensionError(f"Parameters do not match {spec.label}: expected {expected}, got {got}")
        self.spec = spec
        self.tensors = {p.name: tensors[p.name] for p in param_shapes(spec)}

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def get(self, name: str) -> Optional[Tensor]:
        return self.tensors.get(name)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def items(self):
        return self.tensors.items()

    def num_elements(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def replace(self, name: str, tensor: Tensor) -> "ConnectorParams":
        tensors = dict(self.tensors)
        tensors[name] = tensor
        return ConnectorParams(self.spec, tensors)


def init_params(spec: ConnectorSpec) -> ConnectorParams:
    """
    Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero, learnable
    queries ~ N(0, 0.02^2); drawn in checkpoint order from the spec's seed.
    """
    rng = np.random.default_rng(spec.seed)
    tensors = {}
    for p in param_shapes(spec):
        if p.role == "weight":
            bound = 1.0 / math.sqrt(p.fan_in)
            data = rng.uniform(-bound, bound, size=p.shape)
        elif p.role == "query":
            data = rng.normal(0.0, QUERY_INIT_STD, size=p.shape)
        else:
            data = np.zeros(p.shape)
        tensors[p.name] = parameter(data, name=p.name)
    return ConnectorParams(spec, tensors)


@dataclass
class PatchGrid:
    features: Tensor  # (P, d_v), row-major over the grid
    grid: GridShape

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.grid.num_patches:
            raise DimensionError(
                f"Features {self.features.shape} do not fit a {self.grid.height}x{self.grid.width} grid"
            )

    @classmethod
    def from_array(cls, data, grid: GridShape, requires_grad: bool = False) -> "PatchGrid":
        return cls(Tensor(data, requires_grad=requires_grad), grid)

    @property
    def channels(self) -> int:
        return self.features.shape[1]


@dataclass
class TokenSeq:
    tokens: Tensor  # (Q, D)

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def width(self) -> int:
        return self.tokens.shape[1]


def _check_channels(f: PatchGrid, d_v: int) -> None:
    if f.channels != d_v:
        raise DimensionError(f"Patch features have {f.channels} channels, connector expects d_v={d_v}")


def _project(x: Tensor, p: ConnectorParams, prefix: str) -> Tensor:
    out = matmul(x, p[f"{prefix}w"])
    bias = p.get(f"{prefix}b")
    return add(out, bias) if bias is not None else out


def _mlp(x: Tensor, p: ConnectorParams) -> Tensor:
    return _project(gelu(_project(x, p, "mlp1_")), p, "mlp2_")


@lru_cache(maxsize=64)
def _pool_for(grid: GridShape, q_side: int, mode: WindowMode) -> np.ndarray:
    groups = geometry.window_partition(grid, q_side, mode)
    pool = geometry.pooling_matrix(groups, grid.num_patches)
    pool.flags.writeable = False
    return pool


def forward_linear(f: PatchGrid, p: ConnectorParams) -> TokenSeq:
    _check_channels(f, p.spec.d_v)
    return TokenSeq(_project(f.features, p, "proj_"))


def forward_mlp(f: PatchGrid, p: ConnectorParams) -> TokenSeq:
    _check_channels(f, p.spec.d_v)
    return TokenSeq(_mlp(f.features, p))


def forward_avgpool(
    f: PatchGrid, p: ConnectorParams, spec: Optional[ConnectorSpec] = None,
    mode: WindowMode = WindowMode.ADAPTIVE,
) -> TokenSeq:
    spec = spec or p.spec
    _check_channels(f, spec.d_v)
    pooled = average_pool(f.features, _pool_for(f.grid, spec.q_side, WindowMode(mode)))
    return TokenSeq(_mlp(pooled, p))


def attention_weights(f: PatchGrid, p: ConnectorParams, spec: Optional[ConnectorSpec] = None) -> Tensor:
    """A = softmax(queries K^T / sqrt(d_c)), shape (Q, P)."""
    spec = spec or p.spec
    _check_channels(f, spec.d_v)
    keys = _project(f.features, p, "key_")
    scores = scale(matmul(p["queries"], transpose(keys)), 1.0 / math.sqrt(spec.cross_dim))
    return softmax_rows(scores)


def forward_attnpool(f: PatchGrid, p: ConnectorParams, spec: Optional[ConnectorSpec] = None) -> TokenSeq:
    spec = spec or p.spec
    attn = attention_weights(f, p, spec)
    values = _project(f.features, p, "value_")
    pooled = matmul(attn, values)
    return TokenSeq(_mlp(pooled, p))


def _conv(x: Tensor, p: ConnectorParams, prefix: str, grid: GridShape) -> Tensor:
    out = conv2d_same(x, p[f"{prefix}w"], grid.height, grid.width)
    bias = p.get(f"{prefix}b")
    return add(out, bias) if bias is not None else out


def forward_convmap(
    f: PatchGrid, p: ConnectorParams, spec: Optional[ConnectorSpec] = None,
    mode: WindowMode = WindowMode.ADAPTIVE,
) -> TokenSeq:
    """conv -> adaptive average pool to sqrt(Q) x sqrt(Q) -> conv -> 1x1 projection."""
    spec = spec or p.spec
    _check_channels(f, spec.d_v)
    pooled_grid = GridShape.square(spec.q_side, f.grid.patch_size)
    x = _conv(f.features, p, "conv1_", f.grid)
    x = average_pool(x, _pool_for(f.grid, spec.q_side, WindowMode(mode)))
    x = _conv(x, p, "conv2_", pooled_grid)
    return TokenSeq(_project(x, p, "proj_"))


def forward(spec: ConnectorSpec, p: ConnectorParams, f: PatchGrid) -> TokenSeq:
    if spec.kind is ConnectorKind.LINEAR:
        return forward_linear(f, p)
    if spec.kind is ConnectorKind.MLP:
        return forward_mlp(f, p)
    if spec.kind is ConnectorKind.AVGPOOL:
        return forward_avgpool(f, p, spec)
    if spec.kind is ConnectorKind.ATTNPOOL:
        return forward_attnpool(f, p, spec)
    return forward_convmap(f, p, spec)


def output_length(spec: ConnectorSpec, grid: GridShape) -> int:
    return spec.num_tokens if spec.kind.is_compressing else grid.num_patches


def connector_grad_check(spec: ConnectorSpec, grid: GridShape, seed: int = 0, eps: float = 1e-5) -> Dict[str, float]:
    """
    Max relative gradient error of loss = sum(outputs) with respect to every
    parameter tensor and the input features. Biases are randomized so that
    the check does not sit at the all-zero bias point.
    """
    rng = np.random.default_rng(seed)
    params = init_params(spec.model_copy(update={"seed": seed}))
    for name, t in list(params.items()):
        if name.endswith("_b"):
            params = params.replace(name, parameter(rng.normal(0.0, 0.1, size=t.shape), name=name))
    features = rng.normal(0.0, 1.0, size=(grid.num_patches, spec.d_v))

    errors: Dict[str, float] = {}
    for name in params.tensors:
        def loss_wrt_param(t: Tensor, name=name) -> Tensor:
            return sum_all(forward(spec, params.replace(name, t), PatchGrid(Tensor(features), grid)).tokens)

        errors[name] = grad_check(loss_wrt_param, params[name].data, eps)

    def loss_wrt_features(t: Tensor) -> Tensor:
        return sum_all(forward(spec, params, PatchGrid(t, grid)).tokens)

    errors["features"] = grad_check(loss_wrt_features, features, eps)
    logger.debug("Gradient check for %s: %s", spec.label, errors)
    return errors
