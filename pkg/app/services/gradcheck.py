"""Central finite-difference checks for the backward rules."""
import logging
from typing import Callable

import numpy as np

from app.core.errors import ContractError, NonFiniteError, ProbeError
from app.services.tensor import Tensor, backward

logger = logging.getLogger(__name__)


def _probe(f: Callable[[Tensor], Tensor], data: np.ndarray) -> float:
    try:
        value = f(Tensor(data))
    except NonFiniteError as e:
        raise ProbeError(f"Function is not finite at probe point: {e}") from e
    if value.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {value.shape}")
    out = value.item()
    if not np.isfinite(out):
        raise ProbeError("Function is not finite at probe point")
    return out


def grad_check(f: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> float:
    """
    Max over coordinates of |analytic - numeric| / max(1, |numeric|),
    with the numeric derivative taken by central differences of step eps.
    """
    if not 0.0 < eps <= 1e-2:
        raise ContractError(f"eps must lie in (0, 1e-2], got {eps}")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)

    x = Tensor(base, requires_grad=True)
    try:
        value = f(x)
    except NonFiniteError as e:
        raise ProbeError(f"Function is not finite at the check point: {e}") from e
    if value.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {value.shape}")
    backward(value)
    analytic = x.grad

    worst = 0.0
    flat = base.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = _probe(f, base)
        flat[i] = orig - eps
        minus = _probe(f, base)
        flat[i] = orig
        numeric = (plus - minus) / (2.0 * eps)
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
