"""
Patch-grid arithmetic: resolution to grid, position-embedding resizing and
the window partitions used by the pooling connectors.

Grids are square and row-major; patch (r, c) has flat index r * width + c.
"""
import enum
import logging
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from app.core.errors import GeometryError

logger = logging.getLogger(__name__)

DEFAULT_PATCH_SIZE = 14


class InterpolationMethod(str, enum.Enum):
    BILINEAR = "bilinear"
    BICUBIC = "bicubic"


class WindowMode(str, enum.Enum):
    ADAPTIVE = "adaptive"
    DISJOINT = "disjoint"


@dataclass(frozen=True)
class GridShape:
    height: int
    width: int
    patch_size: int = DEFAULT_PATCH_SIZE

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise GeometryError(f"Grid must be at least 1x1, got {self.height}x{self.width}")
        if self.height != self.width:
            raise GeometryError(f"Only square grids are supported, got {self.height}x{self.width}")
        if self.patch_size < 1:
            raise GeometryError(f"Patch size must be positive, got {self.patch_size}")

    @property
    def num_patches(self) -> int:
        return self.height * self.width

    @property
    def resolution(self) -> int:
        return self.height * self.patch_size

    @classmethod
    def square(cls, side: int, patch_size: int = DEFAULT_PATCH_SIZE) -> "GridShape":
        return cls(side, side, patch_size)


@dataclass(frozen=True)
class PosEmbedGrid:
    grid: np.ndarray  # (height, width, channels)

    def __post_init__(self):
        if self.grid.ndim != 3:
            raise GeometryError(f"Position embeddings must be (height, width, channels), got {self.grid.shape}")
        if not np.all(np.isfinite(self.grid)):
            raise GeometryError("Position embeddings contain non-finite values")

    @property
    def shape(self) -> GridShape:
        return GridShape(self.grid.shape[0], self.grid.shape[1])

    def flatten(self) -> np.ndarray:
        h, w, d = self.grid.shape
        return self.grid.reshape(h * w, d)


def patch_count(resolution: int, patch_size: int = DEFAULT_PATCH_SIZE) -> GridShape:
    if patch_size <= 0 or resolution <= 0:
        raise GeometryError(f"Resolution and patch size must be positive, got {resolution} and {patch_size}")
    if resolution % patch_size:
        raise GeometryError(f"Resolution {resolution} is not divisible by patch size {patch_size}")
    side = resolution // patch_size
    return GridShape(side, side, patch_size)


def interpolate_pos_embed(
    src: PosEmbedGrid,
    target: GridShape,
    method: InterpolationMethod = InterpolationMethod.BILINEAR,
) -> PosEmbedGrid:
    """Resizes a position-embedding grid with align-corners sampling."""
    h, w, _ = src.grid.shape
    if h < 2 or w < 2:
        raise GeometryError(f"Source grid must be at least 2x2, got {h}x{w}")
    if target.height < 1 or target.width < 1:
        raise GeometryError(f"Target grid must be at least 1x1, got {target.height}x{target.width}")
    if (target.height, target.width) == (h, w):
        return PosEmbedGrid(src.grid.copy())

    method = InterpolationMethod(method)
    if method is InterpolationMethod.BICUBIC and min(h, w) < 4:
        raise GeometryError(f"Bicubic interpolation needs a source of at least 4x4, got {h}x{w}")
    scipy_method = "linear" if method is InterpolationMethod.BILINEAR else "cubic"

    logger.debug("Interpolating position embeddings %dx%d -> %dx%d (%s)", h, w, target.height, target.width, method.value)
    interp = RegularGridInterpolator((np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64)), src.grid, method=scipy_method)
    rows = _align_corners(h, target.height)
    cols = _align_corners(w, target.width)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    points = np.stack([rr.ravel(), cc.ravel()], axis=-1)
    out = interp(points).reshape(target.height, target.width, src.grid.shape[2])
    return PosEmbedGrid(out)


def _align_corners(src: int, dst: int) -> np.ndarray:
    if dst == 1:
        return np.zeros(1)
    return np.linspace(0.0, src - 1, dst)


def _axis_bounds(extent: int, q: int, mode: WindowMode) -> List[range]:
    bounds = []
    for i in range(q):
        start = (i * extent) // q
        if mode is WindowMode.ADAPTIVE:
            end = -((-(i + 1) * extent) // q)  # ceil
        else:
            end = ((i + 1) * extent) // q
        bounds.append(range(start, end))
    return bounds


def window_partition(grid: GridShape, q_side: int, mode: WindowMode = WindowMode.ADAPTIVE) -> List[np.ndarray]:
    """
    Splits the grid into q_side x q_side windows, returned in row-major window
    order as arrays of flat patch indices.
    """
    if not 1 <= q_side <= min(grid.height, grid.width):
        raise GeometryError(
            f"Window count per side must lie in [1, {min(grid.height, grid.width)}] for a "
            f"{grid.height}x{grid.width} grid, got {q_side}"
        )
    mode = WindowMode(mode)
    row_bounds = _axis_bounds(grid.height, q_side, mode)
    col_bounds = _axis_bounds(grid.width, q_side, mode)
    groups = []
    for rows in row_bounds:
        for cols in col_bounds:
            idx = np.array([r * grid.width + c for r in rows for c in cols], dtype=np.int64)
            groups.append(idx)
    return groups


def pooling_matrix(groups: List[np.ndarray], num_patches: int) -> np.ndarray:
    """Q x P matrix whose row i averages the patches of window i."""
    pool = np.zeros((len(groups), num_patches))
    for i, idx in enumerate(groups):
        pool[i, idx] = 1.0 / len(idx)
    return pool

