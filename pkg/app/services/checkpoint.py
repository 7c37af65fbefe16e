"""
Parameter checkpoints: a text header naming each tensor and its shape,
followed by the raw little-endian float64 payload in header order.

    connector-lab-params 1
    mlp1_w 32,64
    mlp1_b 64
    <empty line>
    <payload>
"""
import logging
import math
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from app.core.errors import ConfigError
from app.schemas.connector import ConnectorSpec
from app.services.connectors import ConnectorParams
from app.services.tensor import parameter

logger = logging.getLogger(__name__)

MAGIC = "connector-lab-params 1"
_DTYPE = np.dtype("<f8")


def save_params(params: ConnectorParams, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [MAGIC]
    for name, t in params.items():
        header.append(f"{name} {','.join(str(d) for d in t.shape)}")
    with path.open("wb") as fh:
        fh.write(("\n".join(header) + "\n\n").encode("utf-8"))
        for _, t in params.items():
            fh.write(np.ascontiguousarray(t.data, dtype=_DTYPE).tobytes())
    logger.info("Wrote %d tensors to %s", len(params.tensors), path)
    return path


def read_tensors(path) -> Dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    end = raw.find(b"\n\n")
    if end < 0:
        raise ConfigError(f"{path}: missing header terminator")
    lines = raw[:end].decode("utf-8").split("\n")
    if lines[0] != MAGIC:
        raise ConfigError(f"{path}: not a parameter checkpoint (header '{lines[0]}')")

    entries: list[Tuple[str, Tuple[int, ...]]] = []
    for line in lines[1:]:
        name, _, dims = line.partition(" ")
        try:
            shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        except ValueError as e:
            raise ConfigError(f"{path}: bad shape in header line '{line}'") from e
        entries.append((name, shape))

    payload = memoryview(raw)[end + 2:]
    expected = sum(math.prod(s) for _, s in entries) * _DTYPE.itemsize
    if len(payload) != expected:
        raise ConfigError(f"{path}: payload is {len(payload)} bytes, header describes {expected}")

    tensors: Dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in entries:
        n = math.prod(shape)
        tensors[name] = np.frombuffer(payload, dtype=_DTYPE, count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += n * _DTYPE.itemsize
    return tensors


def load_params(spec: ConnectorSpec, path) -> ConnectorParams:
    tensors = read_tensors(path)
    try:
        return ConnectorParams(spec, {name: parameter(data, name=name) for name, data in tensors.items()})
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e
