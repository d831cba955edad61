"""
Displacement binning: continuous per-step displacements to integer
trajectory labels and back to cell centers.

Labels are zero-based here; `to_one_based_label` gives the one-based form.
Out-of-range displacements clamp to the edge cells, and a displacement on an
interior cell edge belongs to the higher-index cell.
"""

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from errors import ConfigurationError, DataError, LabelIndexError


@dataclass(frozen=True)
class BinGrid2D:
    n: int = 11
    extent: float = 11.0

    def __post_init__(self):
        _validate_grid(self.n, self.extent)

    @property
    def cell(self) -> float:
        return self.extent / self.n

    @property
    def label_count(self) -> int:
        return self.n * self.n


@dataclass(frozen=True)
class BinGrid3D:
    n: int = 19
    extent: float = 19.0

    def __post_init__(self):
        _validate_grid(self.n, self.extent)

    @property
    def cell(self) -> float:
        return self.extent / self.n

    @property
    def label_count(self) -> int:
        return self.n ** 3


Grid = Union[BinGrid2D, BinGrid3D]


def _validate_grid(n: int, extent: float):
    if n < 1 or n % 2 == 0:
        raise ConfigurationError(f"bins per axis must be a positive odd number, got {n}")
    if not extent > 0:
        raise ConfigurationError(f"grid extent must be positive, got {extent}")


def _axis_index(grid: Grid, d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise DataError("displacement is not finite")
    index = np.floor((d + grid.extent / 2.0) / grid.cell).astype(np.int64)
    return np.clip(index, 0, grid.n - 1)


def bin2d_array(grid: BinGrid2D, dx, dy) -> np.ndarray:
    return _axis_index(grid, dy) * grid.n + _axis_index(grid, dx)


def bin3d_array(grid: BinGrid3D, dx, dy, dz) -> np.ndarray:
    n = grid.n
    return (_axis_index(grid, dz) * n + _axis_index(grid, dy)) * n + _axis_index(grid, dx)


def bin2d(grid: BinGrid2D, dx: float, dy: float) -> int:
    return int(bin2d_array(grid, dx, dy))


def bin3d(grid: BinGrid3D, dx: float, dy: float, dz: float) -> int:
    return int(bin3d_array(grid, dx, dy, dz))


def _axis_center(grid: Grid, index: int) -> float:
    return (index + 0.5) * grid.cell - grid.extent / 2.0


def bin_center(grid: Grid, label: int) -> Tuple[float, ...]:
    """Geometric center of a label's cell, in feet."""
    if not 0 <= label < grid.label_count:
        raise LabelIndexError(f"label {label} outside [0, {grid.label_count})")
    n = grid.n
    col, rest = label % n, label // n
    if isinstance(grid, BinGrid2D):
        return (_axis_center(grid, col), _axis_center(grid, rest))
    row, layer = rest % n, rest // n
    return (_axis_center(grid, col), _axis_center(grid, row), _axis_center(grid, layer))


def to_one_based_label(label: int) -> int:
    return label + 1


def stationary_label(grid: Grid) -> int:
    half = grid.n // 2
    if isinstance(grid, BinGrid2D):
        return half * grid.n + half
    return (half * grid.n + half) * grid.n + half


PLAYER_GRID = BinGrid2D()
BALL_GRID = BinGrid3D()
