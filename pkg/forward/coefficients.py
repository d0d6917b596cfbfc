"""
Coefficients, cost models and boundary data of the quadratic MFG system.
"""

import logging
from dataclasses import dataclass, field
from math import factorial
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from grid.fields import ScalarField, SpaceTimeField, require_same_grid
from grid.mesh import Grid
from grid.operators import restrict_to_boundary
from mfglab.errors import ConfigError, GridError

logger = logging.getLogger(__name__)

AnyField = Union[ScalarField, SpaceTimeField]


def level_values(f: Optional[AnyField], level: int) -> np.ndarray:
    """Node values of ``f`` at a time level; spatial fields are time-independent."""
    if isinstance(f, SpaceTimeField):
        return f.values[level]
    return f.values


def as_space_time(grid: Grid, value) -> SpaceTimeField:
    if isinstance(value, SpaceTimeField):
        return value
    if isinstance(value, ScalarField):
        return SpaceTimeField.steady(value)
    return SpaceTimeField.constant(grid, float(value))


@dataclass(frozen=True, eq=False)
class MFGCoefficients:
    """Diffusion ``sigma`` and Hamiltonian weight ``kappa``, both positive."""

    sigma: SpaceTimeField
    kappa: SpaceTimeField

    def __post_init__(self):
        require_same_grid(self.sigma, self.kappa)
        for name in ("sigma", "kappa"):
            values = getattr(self, name).values
            if np.min(values) <= 0:
                raise ConfigError(
                    f"must be strictly positive (min {np.min(values):.3e})", name
                )

    @classmethod
    def constant(cls, grid: Grid, sigma: float = 1.0, kappa: float = 1.0):
        return cls(as_space_time(grid, sigma), as_space_time(grid, kappa))

    @property
    def grid(self) -> Grid:
        return self.sigma.grid

    def sigma_at(self, level: int) -> np.ndarray:
        return self.sigma.values[level]

    def kappa_at(self, level: int) -> np.ndarray:
        return self.kappa.values[level]


@dataclass(frozen=True, eq=False)
class CostModel:
    """Truncated Taylor expansions of the running and terminal costs.

    ``F(x, t, m) = sum_k F_k(x, t) (m - m0)^k / k!`` and likewise ``G`` with
    spatial coefficients. The zeroth term is absent, so both costs vanish at
    the expansion density.
    """

    expansion_density: AnyField
    F_coeffs: Sequence[AnyField] = field(default_factory=tuple)
    G_coeffs: Sequence[ScalarField] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "F_coeffs", tuple(self.F_coeffs))
        object.__setattr__(self, "G_coeffs", tuple(self.G_coeffs))
        require_same_grid(self.expansion_density, *self.F_coeffs, *self.G_coeffs)
        for g in self.G_coeffs:
            if isinstance(g, SpaceTimeField):
                raise GridError("terminal cost coefficients are spatial fields")

    @classmethod
    def zero(cls, grid: Grid, expansion_density: Optional[AnyField] = None):
        if expansion_density is None:
            expansion_density = ScalarField.constant(grid, 1.0 / grid.volume)
        return cls(expansion_density)

    @property
    def grid(self) -> Grid:
        return self.expansion_density.grid

    @property
    def order(self) -> int:
        return max(len(self.F_coeffs), len(self.G_coeffs))

    def F(self, k: int) -> Optional[AnyField]:
        return self.F_coeffs[k - 1] if 0 < k <= len(self.F_coeffs) else None

    def G(self, k: int) -> Optional[ScalarField]:
        return self.G_coeffs[k - 1] if 0 < k <= len(self.G_coeffs) else None

    def running(self, level: int, m: np.ndarray) -> np.ndarray:
        """``F(x, t_level, m)`` at every node."""
        dm = m - level_values(self.expansion_density, level)
        total = np.zeros_like(dm, dtype=float)
        for k, coeff in enumerate(self.F_coeffs, start=1):
            total = total + level_values(coeff, level) * dm**k / factorial(k)
        return total

    def terminal(self, m: np.ndarray) -> np.ndarray:
        """``G(x, m)`` at every node, ``m`` taken at the final level."""
        dm = m - level_values(self.expansion_density, -1)
        total = np.zeros_like(dm, dtype=float)
        for k, coeff in enumerate(self.G_coeffs, start=1):
            total = total + coeff.values * dm**k / factorial(k)
        return total

    def recentred(self, density: AnyField) -> "CostModel":
        """The same costs expanded around ``density`` instead of ``m0``.

        Coefficients become ``sum_{k >= j} F_k s^(k-j) / (k-j)!`` with the
        shift ``s = density - m0``; the running ones turn into space-time
        fields when the shift depends on time.
        """
        grid = self.grid
        m0 = self.expansion_density
        timed = isinstance(density, SpaceTimeField) or isinstance(m0, SpaceTimeField)
        if timed:
            shift = as_space_time(grid, density).values - as_space_time(grid, m0).values
        else:
            shift = density.values - m0.values
        if not np.any(shift):
            return CostModel(density, self.F_coeffs, self.G_coeffs)

        def lift(coeff):
            return as_space_time(grid, coeff).values if timed else coeff.values

        def series(coeffs, j, s, values_of):
            total = np.zeros(s.shape)
            for k in range(j, len(coeffs) + 1):
                total += values_of(coeffs[k - 1]) * s ** (k - j) / factorial(k - j)
            return total

        wrap = SpaceTimeField if timed else ScalarField
        final_shift = shift[-1] if timed else shift
        F_new = [
            wrap(grid, series(self.F_coeffs, j, shift, lift))
            for j in range(1, len(self.F_coeffs) + 1)
        ]
        G_new = [
            ScalarField(grid, series(self.G_coeffs, j, final_shift, lambda c: c.values))
            for j in range(1, len(self.G_coeffs) + 1)
        ]
        return CostModel(density, F_new, G_new)

    def with_coefficients(self, F_coeffs=None, G_coeffs=None) -> "CostModel":
        return CostModel(
            self.expansion_density,
            self.F_coeffs if F_coeffs is None else F_coeffs,
            self.G_coeffs if G_coeffs is None else G_coeffs,
        )

    def describe(self) -> dict:
        return {
            "order": self.order,
            "F_orders": [k for k in range(1, len(self.F_coeffs) + 1)],
            "G_orders": [k for k in range(1, len(self.G_coeffs) + 1)],
        }


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Dirichlet data at every time level; only boundary nodes are read.

    ``values`` has the space-time node shape so solvers can copy whole slices.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, copy=True)
        if arr.shape != self.grid.space_time_shape:
            raise GridError(
                f"boundary data has shape {arr.shape}, "
                f"expected {self.grid.space_time_shape}"
            )
        arr = np.where(self.grid.boundary_mask, arr, 0.0)
        if not np.all(np.isfinite(arr)):
            raise GridError("boundary data contain non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def zero(cls, grid: Grid):
        return cls(grid, np.zeros(grid.space_time_shape))

    @classmethod
    def constant(cls, grid: Grid, value: float):
        return cls(grid, np.full(grid.space_time_shape, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[..., np.ndarray]):
        return cls(grid, SpaceTimeField.from_function(grid, func).values)

    @classmethod
    def from_field(cls, f: SpaceTimeField):
        return cls(f.grid, f.values)

    def at(self, level: int) -> np.ndarray:
        return self.values[level]

    def scaled(self, factor: float) -> "BoundaryData":
        return BoundaryData(self.grid, factor * self.values)

    def __add__(self, other: "BoundaryData") -> "BoundaryData":
        return BoundaryData(self.grid, self.values + other.values)

    def boundary_values(self) -> np.ndarray:
        """Values on the boundary nodes only, shape ``(nt + 1, n_boundary)``."""
        flat = self.values.reshape(self.grid.nt + 1, -1)
        return flat[:, self.grid.boundary_indices]


@dataclass(frozen=True, eq=False)
class TimeDependentSolution:
    v: SpaceTimeField
    m: SpaceTimeField
    f: ScalarField
    picard_iterations: int = 0
    final_update_norm: float = 0.0
    update_history: List[float] = field(default_factory=list)

    @property
    def grid(self) -> Grid:
        return self.v.grid

    @classmethod
    def from_stationary(cls, grid: Grid, stationary) -> "TimeDependentSolution":
        """Broadcast a stationary equilibrium over the time levels of ``grid``."""
        v0 = ScalarField(grid, stationary.v0.values)
        m0 = ScalarField(grid, stationary.m0.values)
        return cls(SpaceTimeField.steady(v0), SpaceTimeField.steady(m0), m0)

    def boundary_data(self):
        """Dirichlet data of ``v`` and ``m`` read off the solution."""
        return BoundaryData.from_field(self.v), BoundaryData.from_field(self.m)

    def traces(self):
        return restrict_to_boundary(self.v), restrict_to_boundary(self.m)
