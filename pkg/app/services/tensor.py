"""
Dense float64 tensors with reverse-mode automatic differentiation.

Each op returns a new Tensor that remembers its inputs and a backward rule.
`backward` traces the graph from a scalar loss into a topological order and
applies the rules in exact reverse order, so gradients are reproducible bit
for bit. Leaf gradients accumulate across calls until `zero_grad`.

Broadcasting is limited to scalar scaling and a row-vector bias added to a
matrix; everything else requires equal shapes.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

from app.core.errors import ContractError, DimensionError, NonFiniteError

logger = logging.getLogger(__name__)

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"Non-finite values produced by '{op}' (shape {data.shape})")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "leaf")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.op = "leaf"
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str, backward: BackwardFn) -> "Tensor":
        data = np.asarray(data, dtype=np.float64)
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out.op = op
        out.name = ""
        out._parents = tuple(parents)
        out._backward = backward if out.requires_grad else None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


@dataclass(frozen=True)
class GraphNode:
    op: str
    input_ids: Tuple[int, ...]
    output_id: int


class ComputeGraph:
    """Topologically ordered view of every tensor reachable from an output."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, output: Tensor) -> "ComputeGraph":
        order: List[Tensor] = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def records(self) -> List[GraphNode]:
        position = {id(t): i for i, t in enumerate(self.nodes)}
        return [
            GraphNode(op=t.op, input_ids=tuple(position[id(p)] for p in t._parents), output_id=i)
            for i, t in enumerate(self.nodes)
        ]

    def leaves(self) -> List[Tensor]:
        return [t for t in self.nodes if t.is_leaf]

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, graph: Optional[ComputeGraph] = None) -> Dict[Tensor, np.ndarray]:
    """
    Propagates d(loss)/d(leaf) into `.grad` of every requires_grad leaf.
    Returns the gradient contributed by this call for each reached leaf.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if graph is None:
        graph = ComputeGraph.trace(loss)

    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    contributed: Dict[Tensor, np.ndarray] = {}
    for node in reversed(graph.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = node.grad + g if node.grad is not None else g.copy()
                contributed[node] = g
            continue
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = pending.get(id(parent))
            pending[id(parent)] = pg if acc is None else acc + pg
    return contributed


def zero_grad(tensors) -> None:
    for t in tensors:
        t.zero_grad()


# -- ops ---------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def _backward(g):
        return g @ bd.T, ad.T @ g

    return Tensor._from_op(ad @ bd, (a, b), "matmul", _backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        return Tensor._from_op(a.data + b.data, (a, b), "add", lambda g: (g, g))
    # row-vector bias over the rows of a matrix
    if a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        return Tensor._from_op(a.data + b.data, (a, b), "add_bias", lambda g: (g, g.sum(axis=0)))
    if a.ndim == 2 and b.ndim == 2 and b.shape == (1, a.shape[1]):
        return Tensor._from_op(
            a.data + b.data, (a, b), "add_bias", lambda g: (g, g.sum(axis=0, keepdims=True))
        )
    raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} * {b.shape}")
    ad, bd = a.data, b.data
    return Tensor._from_op(ad * bd, (a, b), "mul", lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor._from_op(a.data * c, (a,), "scale", lambda g: (g * c,))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return Tensor._from_op(a.data.T.copy(), (a,), "transpose", lambda g: (g.T,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return Tensor._from_op(np.sum(a.data), (a,), "sum", lambda g: (np.full(shape, float(g)),))


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    shape = a.shape
    if axis is None:
        n = a.size
        return Tensor._from_op(np.mean(a.data), (a,), "mean", lambda g: (np.full(shape, float(g) / n),))
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"mean axis {axis} out of range for shape {shape}")
    n = shape[axis]

    def _backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return Tensor._from_op(np.mean(a.data, axis=axis), (a,), "mean_axis", _backward)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"cannot reshape {src} into {shape}") from e
    return Tensor._from_op(out.copy(), (a,), "reshape", lambda g: (g.reshape(src),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat shape mismatch: {[t.shape for t in tensors]}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(out, tuple(tensors), "concat", _backward)


def softmax_rows(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"softmax_rows needs a matrix, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def _backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return Tensor._from_op(y, (a,), "softmax_rows", _backward)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def _backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return Tensor._from_op(x * cdf, (a,), "gelu", _backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over the rows of `logits`."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy shape mismatch: logits {logits.shape}, labels {labels.shape}")
    m, k = logits.shape
    if m == 0 or labels.min() < 0 or labels.max() >= k:
        raise DimensionError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    rows = np.arange(m)
    loss = np.mean(lse - z[rows, labels])

    def _backward(g):
        probs = np.exp(z - lse[:, None])
        probs[rows, labels] -= 1.0
        return (probs * (float(g) / m),)

    return Tensor._from_op(loss, (logits,), "cross_entropy", _backward)


def average_pool(x: Tensor, pool: np.ndarray) -> Tensor:
    """Rows of the result are fixed weighted averages of rows of `x`: pool @ x."""
    if x.ndim != 2 or pool.ndim != 2 or pool.shape[1] != x.shape[0]:
        raise DimensionError(f"average_pool shape mismatch: pool {pool.shape}, input {x.shape}")
    return Tensor._from_op(pool @ x.data, (x,), "average_pool", lambda g: (pool.T @ g,))


def conv2d_same(x: Tensor, weight: Tensor, height: int, width: int) -> Tensor:
    """
    Zero-padded 2-D cross-correlation over a row-major patch grid.

    x is (height*width, C_in), weight is (k, k, C_in, C_out) with odd k;
    the result is (height*width, C_out).
    """
    if weight.ndim != 4 or weight.shape[0] != weight.shape[1] or weight.shape[0] % 2 == 0:
        raise DimensionError(f"conv weight must be (k, k, C_in, C_out) with odd k, got {weight.shape}")
    k, _, c_in, c_out = weight.shape
    if x.ndim != 2 or x.shape != (height * width, c_in):
        raise DimensionError(
            f"conv input {x.shape} does not match grid {height}x{width} with {c_in} channels"
        )
    r = k // 2
    padded = np.pad(x.data.reshape(height, width, c_in), ((r, r), (r, r), (0, 0)))
    cols = np.empty((height, width, k, k, c_in))
    for di in range(k):
        for dj in range(k):
            cols[:, :, di, dj, :] = padded[di:di + height, dj:dj + width, :]
    cols = cols.reshape(height * width, k * k * c_in)
    w2 = weight.data.reshape(k * k * c_in, c_out)

    def _backward(g):
        dw = (cols.T @ g).reshape(weight.shape)
        dcols = (g @ w2.T).reshape(height, width, k, k, c_in)
        dpad = np.zeros((height + 2 * r, width + 2 * r, c_in))
        for di in range(k):
            for dj in range(k):
                dpad[di:di + height, dj:dj + width, :] += dcols[:, :, di, dj, :]
        dx = dpad[r:r + height, r:r + width, :].reshape(height * width, c_in)
        return dx, dw

    return Tensor._from_op(cols @ w2, (x, weight), "conv2d_same", _backward)
