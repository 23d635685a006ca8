"""Cell-centred rectangular grids, scalar fields and discrete integrals/norms.

Layout conventions:
    * A 1D field is stored as an array of shape ``(n_x,)``.
    * A 2D field is stored as an array of shape ``(n_y, n_x)`` in C order, so the
      flat (row-major) index of cell ``(i, j)`` is ``i + n_x * j``.
    * Homogeneous Neumann boundaries are realised by mirrored ghost cells
      (``f[-1] = f[0]``), which makes every boundary face difference vanish.

All reductions go through ``numpy.sum`` on contiguous arrays (pairwise summation),
so results do not depend on thread counts.
"""

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from errors import DomainError

MIN_CELLS = 2


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centred grid on ``[0, length_x] (x [0, length_y])``."""

    n: tuple[int, ...]  # cells per axis, x first
    length: tuple[float, ...]  # domain extent per axis, x first

    def __post_init__(self):
        n = (self.n,) if isinstance(self.n, int | np.integer) else tuple(self.n)
        length = (
            (self.length,) if isinstance(self.length, int | float) else tuple(self.length)
        )
        if len(length) == 1 and len(n) > 1:
            length = length * len(n)
        if len(n) not in (1, 2):
            raise DomainError(f"grid dimension must be 1 or 2, got {len(n)}")
        if len(length) != len(n):
            raise DomainError(f"grid has {len(n)} axes but {len(length)} lengths")
        for cells in n:
            if int(cells) != cells or cells < MIN_CELLS:
                raise DomainError(f"cells per axis must be an integer >= {MIN_CELLS}, got {cells}")
        for extent in length:
            if not math.isfinite(extent) or extent <= 0:
                raise DomainError(f"domain length must be positive, got {extent}")
        object.__setattr__(self, "n", tuple(int(c) for c in n))
        object.__setattr__(self, "length", tuple(float(x) for x in length))

    @classmethod
    def uniform(cls, n: int, length: float = 1.0, dim: int = 1) -> "GridSpec":
        """Grid with the same cell count and extent along every axis."""
        return cls(n=(n,) * dim, length=(length,) * dim)

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(extent / cells for extent, cells in zip(self.length, self.n, strict=True))

    @property
    def shape(self) -> tuple[int, ...]:
        """Array shape of a field on this grid (y before x in 2D)."""
        return tuple(reversed(self.n))

    @property
    def size(self) -> int:
        return math.prod(self.n)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.h)

    @property
    def measure(self) -> float:
        """|Omega|, the area (length) of the domain."""
        return math.prod(self.length)

    def array_axis(self, axis: int) -> int:
        """Numpy axis holding grid axis ``axis`` (0 = x, 1 = y)."""
        return self.dim - 1 - axis

    def axis_coordinates(self, axis: int) -> np.ndarray:
        """Cell-centre coordinates along one grid axis."""
        h = self.h[axis]
        return (np.arange(self.n[axis]) + 0.5) * h

    def cell_centers(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays shaped like a field: ``(x,)`` or ``(X, Y)``."""
        if self.dim == 1:
            return (self.axis_coordinates(0),)
        x, y = np.meshgrid(self.axis_coordinates(0), self.axis_coordinates(1), indexing="xy")
        return (x, y)

    def describe(self) -> str:
        n = "x".join(str(c) for c in self.n)
        length = "x".join(repr(extent) for extent in self.length)
        return f"dim={self.dim} n={n} length={length}"


@dataclass(frozen=True, eq=False)
class Field:
    """One scalar unknown sampled at the cell centres of ``grid``.

    The value array is copied on construction and made read-only.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.size != self.grid.size:
            raise DomainError(
                f"field has {values.size} values but the grid has {self.grid.size} cells"
            )
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise DomainError("field contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "Field":
        return cls.constant(grid, 0.0)

    @classmethod
    def from_function(cls, grid: GridSpec, func: Callable[..., np.ndarray]) -> "Field":
        """Sample ``func(x)`` (1D) or ``func(x, y)`` (2D) at the cell centres."""
        sampled = func(*grid.cell_centers())
        return cls(grid, np.broadcast_to(np.asarray(sampled, dtype=float), grid.shape))

    @property
    def flat(self) -> np.ndarray:
        """Row-major copy of the values (index ``i + n_x * j`` in 2D)."""
        return self.values.ravel(order="C").copy()

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values)

    def _other_values(self, other) -> np.ndarray | float:
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise DomainError("fields live on different grids")
            return other.values
        return float(other)

    def __add__(self, other) -> "Field":
        return Field(self.grid, self.values + self._other_values(other))

    __radd__ = __add__

    def __sub__(self, other) -> "Field":
        return Field(self.grid, self.values - self._other_values(other))

    def __rsub__(self, other) -> "Field":
        return Field(self.grid, self._other_values(other) - self.values)

    def __mul__(self, other) -> "Field":
        return Field(self.grid, self.values * self._other_values(other))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Field":
        return Field(self.grid, self.values / self._other_values(other))

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)


@dataclass(frozen=True)
class State:
    """Solution tuple at one time: ``(u, v, w)`` for the relaxed model, ``(u, v)`` for the limit.

    For the predator-prey model ``u`` holds the predator density ``z``.
    """

    u: Field
    v: Field
    w: Field | None = None
    time: float = 0.0

    def __post_init__(self):
        for other in (self.v, self.w):
            if other is not None and other.grid != self.u.grid:
                raise DomainError("all fields of a state must share one grid")
        if not math.isfinite(self.time) or self.time < 0:
            raise DomainError(f"state time must be a nonnegative real, got {self.time}")

    @property
    def kind(self) -> str:
        return "dual" if self.w is None else "triple"

    @property
    def grid(self) -> GridSpec:
        return self.u.grid

    def fields(self) -> dict[str, Field]:
        """Member fields keyed by the generic names ``u``, ``v`` (and ``w``)."""
        members = {"u": self.u, "v": self.v}
        if self.w is not None:
            members["w"] = self.w
        return members


def integrate(f: Field) -> float:
    """Midpoint-rule integral of ``f`` over the domain."""
    return float(np.sum(f.values.ravel()) * f.grid.cell_volume)


def norm_lp(f: Field, p: float | str = 2) -> float:
    """Discrete L^p norm for p in {1, 2, inf}."""
    if p in ("inf", "Inf", math.inf):
        return float(np.max(np.abs(f.values)))
    flat = np.abs(f.values.ravel())
    if p == 1:
        return float(np.sum(flat) * f.grid.cell_volume)
    if p == 2:
        return math.sqrt(float(np.sum(flat * flat)) * f.grid.cell_volume)
    raise DomainError(f"unsupported norm order {p!r}; use 1, 2 or 'inf'")


def face_differences(f: Field, axis: int) -> np.ndarray:
    """Interior face slopes ``(f[i+1] - f[i]) / h`` along one grid axis.

    Boundary faces are omitted: under mirrored ghosts their slope is zero.
    """
    return np.diff(f.values, axis=f.grid.array_axis(axis)) / f.grid.h[axis]


def grad_sq_norm(f: Field) -> float:
    """Discrete ``int |grad f|^2`` from face differences, each face weighted by a cell volume."""
    total = 0.0
    for axis in range(f.grid.dim):
        slopes = face_differences(f, axis).ravel()
        total += float(np.sum(slopes * slopes))
    return total * f.grid.cell_volume


def h1_norm(f: Field) -> float:
    """``sqrt(||f||_2^2 + ||grad f||_2^2)``."""
    return math.sqrt(norm_lp(f, 2) ** 2 + grad_sq_norm(f))
