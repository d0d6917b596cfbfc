"""
Immutable field containers over a :class:`~grid.mesh.Grid`.

Values are copied on construction and marked read-only; a field may be
shared between solver calls and threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Tuple

import numpy as np

from grid.mesh import Face, Grid
from mfglab.errors import GridError


def _frozen(values, shape, what: str) -> np.ndarray:
    arr = np.array(values, copy=True)
    if arr.dtype.kind not in "fc":
        arr = arr.astype(float)
    if arr.shape != tuple(shape):
        raise GridError(f"{what} has shape {arr.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise GridError(f"{what} contains non-finite values")
    arr.flags.writeable = False
    return arr


def require_same_grid(*items) -> Grid:
    grids = [item.grid for item in items if item is not None]
    for other in grids[1:]:
        if other != grids[0]:
            raise GridError("inputs live on different grids")
    return grids[0]


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Values at every spatial node, boundary included."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "values", _frozen(self.values, self.grid.shape, "scalar field")
        )

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[..., np.ndarray]):
        values = np.broadcast_to(func(*grid.coords), grid.shape)
        return cls(grid, values)

    @classmethod
    def constant(cls, grid: Grid, value: float):
        return cls(grid, np.full(grid.shape, float(value)))

    @property
    def spec(self):
        return self.grid.spec

    @property
    def is_complex(self) -> bool:
        return self.values.dtype.kind == "c"

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    def conj(self) -> "ScalarField":
        return ScalarField(self.grid, np.conj(self.values))

    def __add__(self, other):
        return self.with_values(self.values + _raw(other))

    def __sub__(self, other):
        return self.with_values(self.values - _raw(other))

    def __mul__(self, other):
        return self.with_values(self.values * _raw(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Values at every (time level, node) pair, time first."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if not self.grid.nt:
            raise GridError("space-time fields need a time-dependent grid")
        object.__setattr__(
            self,
            "values",
            _frozen(self.values, self.grid.space_time_shape, "space-time field"),
        )

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[..., np.ndarray]):
        t = grid.times.reshape((-1,) + (1,) * grid.dim)
        coords = tuple(c[np.newaxis] for c in grid.coords)
        values = np.broadcast_to(func(*coords, t), grid.space_time_shape)
        return cls(grid, values)

    @classmethod
    def constant(cls, grid: Grid, value: float):
        return cls(grid, np.full(grid.space_time_shape, float(value)))

    @classmethod
    def steady(cls, field: ScalarField):
        """Broadcast a spatial field to every time level."""
        grid = field.grid
        return cls(grid, np.broadcast_to(field.values, grid.space_time_shape))

    @classmethod
    def zeros(cls, grid: Grid, dtype=float):
        return cls(grid, np.zeros(grid.space_time_shape, dtype=dtype))

    @property
    def spec(self):
        return self.grid.spec

    def at(self, level: int) -> ScalarField:
        return ScalarField(self.grid, self.values[level])

    @property
    def initial(self) -> ScalarField:
        return self.at(0)

    @property
    def final(self) -> ScalarField:
        return self.at(self.grid.nt)

    def levels(self) -> Iterator[ScalarField]:
        for n in range(self.grid.nt + 1):
            yield self.at(n)

    def with_values(self, values) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, values)

    def __add__(self, other):
        return self.with_values(self.values + _raw(other))

    def __sub__(self, other):
        return self.with_values(self.values - _raw(other))

    def __mul__(self, other):
        return self.with_values(self.values * _raw(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    """One component array per axis, stacked on a leading axis."""

    grid: Grid
    components: np.ndarray

    def __post_init__(self):
        shape = (self.grid.dim,) + self.grid.shape
        object.__setattr__(
            self, "components", _frozen(self.components, shape, "vector field")
        )

    def component(self, axis: int) -> ScalarField:
        return ScalarField(self.grid, self.components[axis])

    def dot(self, other: "VectorField") -> ScalarField:
        return ScalarField(self.grid, np.sum(self.components * other.components, 0))

    def squared_norm(self) -> ScalarField:
        return self.dot(self)


@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    """Boundary values and outward normal derivatives, face by face.

    Each face array covers the closed face (edges and corners included) and,
    for time-dependent traces, carries the time level as leading axis.
    """

    grid: Grid
    values: Tuple[np.ndarray, ...]
    normal_derivatives: Tuple[np.ndarray, ...]
    time_dependent: bool = False

    def __post_init__(self):
        faces = self.grid.faces
        if len(self.values) != len(faces) or len(self.normal_derivatives) != len(
            faces
        ):
            raise GridError(f"trace needs one array per face ({len(faces)})")
        lead = (self.grid.nt + 1,) if self.time_dependent else ()
        values = tuple(
            _frozen(v, lead + f.shape, f"trace values on {f.label}")
            for v, f in zip(self.values, faces)
        )
        derivs = tuple(
            _frozen(d, lead + f.shape, f"normal derivatives on {f.label}")
            for d, f in zip(self.normal_derivatives, faces)
        )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "normal_derivatives", derivs)

    @property
    def faces(self) -> Tuple[Face, ...]:
        return self.grid.faces

    def face(self, label: str) -> Tuple[np.ndarray, np.ndarray]:
        for i, f in enumerate(self.faces):
            if f.label == label:
                return self.values[i], self.normal_derivatives[i]
        raise GridError(f"unknown face {label!r}")

    def scatter(self, base: Optional[np.ndarray] = None) -> np.ndarray:
        """Write the trace values into a node array (interior left as ``base``)."""
        shape = self.grid.space_time_shape if self.time_dependent else self.grid.shape
        dtype = np.result_type(*self.values)
        out = np.zeros(shape, dtype=dtype) if base is None else np.array(base, dtype)
        lead = (slice(None),) if self.time_dependent else ()
        for face, vals in zip(self.faces, self.values):
            out[lead + face.index] = vals
        return out

    def map(self, func: Callable[[np.ndarray], np.ndarray]) -> "BoundaryTrace":
        return BoundaryTrace(
            self.grid,
            tuple(func(v) for v in self.values),
            tuple(func(d) for d in self.normal_derivatives),
            self.time_dependent,
        )

    def __sub__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        require_same_grid(self, other)
        return BoundaryTrace(
            self.grid,
            tuple(a - b for a, b in zip(self.values, other.values)),
            tuple(
                a - b for a, b in zip(self.normal_derivatives, other.normal_derivatives)
            ),
            self.time_dependent,
        )

    def max_abs(self) -> float:
        return float(
            max(
                max(np.max(np.abs(v)) for v in self.values),
                max(np.max(np.abs(d)) for d in self.normal_derivatives),
            )
        )

    def flat(self, derivatives_only: bool = False) -> np.ndarray:
        parts = list(self.normal_derivatives)
        if not derivatives_only:
            parts = list(self.values) + parts
        return np.concatenate([np.ravel(p) for p in parts])


def _raw(other):
    if isinstance(other, (ScalarField, SpaceTimeField)):
        return other.values
    return other
