"""Periodic uniform 1D mesh, fields sampled on it, quadrature and stencils.

All fields live on ``[-L, L)`` with ``N`` equispaced samples and periodic
identification ``z_N == z_0``. On such a grid the trapezoid rule reduces to
``h * sum(f)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class GridMismatchError(ValueError):
    """Raised when fields that must share a grid do not."""


def _check_finite(values: np.ndarray, what: str = "field") -> None:
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"{what} has a non-finite sample at index {i}: {values[i]!r}")


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid on ``[-half_width, half_width)``.

    Args:
        half_width: L, so that the periodic cell has length 2L.
        num_points: N, even and at least 8.
    """

    half_width: float
    num_points: int

    def __post_init__(self):
        if not np.isfinite(self.half_width) or self.half_width <= 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if int(self.num_points) != self.num_points:
            raise ValueError(f"num_points must be an integer, got {self.num_points}")
        object.__setattr__(self, "num_points", int(self.num_points))
        object.__setattr__(self, "half_width", float(self.half_width))
        if self.num_points < 8 or self.num_points % 2:
            raise ValueError(f"num_points must be even and >= 8, got {self.num_points}")

    @property
    def length(self) -> float:
        return 2.0 * self.half_width

    @property
    def spacing(self) -> float:
        return self.length / self.num_points

    @cached_property
    def coordinates(self) -> np.ndarray:
        z = -self.half_width + self.spacing * np.arange(self.num_points)
        z.flags.writeable = False
        return z

    def field(self, values) -> "Field":
        return Field(self, values)

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.num_points))

    def constant(self, value: float) -> "Field":
        return Field(self, np.full(self.num_points, float(value)))

    def sample(self, func) -> "Field":
        """Evaluate a vectorised callable at the grid points."""
        return Field(self, np.broadcast_to(func(self.coordinates), (self.num_points,)))


@dataclass(frozen=True, eq=False)
class Field:
    """Real samples of a function on a :class:`Grid1D`; values are read-only."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.shape != (self.grid.num_points,):
            raise ValueError(
                f"field has shape {vals.shape}, grid expects ({self.grid.num_points},)"
            )
        _check_finite(vals)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.grid.num_points

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)

    def __add__(self, other) -> "Field":
        return Field(self.grid, self.values + _operand(self, other))

    def __sub__(self, other) -> "Field":
        return Field(self.grid, self.values - _operand(self, other))

    def __mul__(self, other) -> "Field":
        return Field(self.grid, self.values * _operand(self, other))

    __radd__ = __add__
    __rmul__ = __mul__

    def __rsub__(self, other) -> "Field":
        return Field(self.grid, _operand(self, other) - self.values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def _operand(field: Field, other):
    if isinstance(other, Field):
        require_same_grid(field, other)
        return other.values
    return float(other)


def require_same_grid(*items) -> Grid1D:
    """Return the common grid of ``items`` or raise :class:`GridMismatchError`.

    Items may be fields or anything carrying a ``grid`` attribute.
    """
    grids = [item.grid for item in items]
    first = grids[0]
    for g in grids[1:]:
        if g != first:
            raise GridMismatchError(f"grid mismatch: {first} vs {g}")
    return first


def integrate(f: Field) -> float:
    """Periodic trapezoid rule ``h * sum(f_i)``."""
    _check_finite(f.values)
    return f.grid.spacing * float(np.sum(f.values))


def second_derivative(f: Field) -> Field:
    """Central second difference ``(f[i-1] - 2 f[i] + f[i+1]) / h**2`` with wraparound."""
    return Field(f.grid, laplacian(f.values, f.grid.spacing))


# Array kernels used inside the iterative solvers, where wrapping every
# intermediate in a Field would only cost time.

def laplacian(values: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(values, 1) - 2.0 * values + np.roll(values, -1)) / (h * h)


def forward_difference(values: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(values, -1) - values) / h


def central_difference(values: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(values, -1) - np.roll(values, 1)) / (2.0 * h)
