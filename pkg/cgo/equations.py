"""
Scalar second-order equations ``Lap m + s grad v0 . grad m + q m = 0``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from grid.fields import ScalarField, VectorField, require_same_grid
from grid.mesh import Grid
from grid.operators import (
    Factorized,
    advection_matrix,
    dirichlet_rows,
    gradient,
    laplacian,
)
from mfglab.errors import GridError


@dataclass(frozen=True, eq=False)
class ScalarReducedEquation:
    """Drift ``sign * grad v0`` and potential ``q`` over a common grid.

    Substituting ``m = exp(xi.x - sign v0 / 2) (1 + omega)`` removes the drift
    and leaves ``Lap omega + 2 xi.grad omega + H (1 + omega) = 0`` with
    ``H = q - |grad v0|^2 / 4 - sign Lap v0 / 2``.
    """

    v0: ScalarField
    q: ScalarField
    sign: int = 1

    def __post_init__(self):
        require_same_grid(self.v0, self.q)
        if self.sign not in (1, -1):
            raise GridError(f"sign must be +1 or -1, got {self.sign}")

    @property
    def grid(self) -> Grid:
        return self.v0.grid

    @cached_property
    def drift(self) -> VectorField:
        grad = gradient(self.v0)
        return VectorField(self.grid, self.sign * grad.components)

    @cached_property
    def H(self) -> ScalarField:
        grad_sq = gradient(self.v0).squared_norm().values
        lap = laplacian(self.v0).values
        return self.q.with_values(self.q.values - 0.25 * grad_sq - 0.5 * self.sign * lap)

    def adjoint(self) -> "ScalarReducedEquation":
        """Formal adjoint ``Lap u - s grad v0 . grad u + (q - s Lap v0) u``."""
        lap = laplacian(self.v0).values
        q = self.q.with_values(self.q.values - self.sign * lap)
        return ScalarReducedEquation(self.v0, q, -self.sign)

    def shifted(self, potential: ScalarField) -> "ScalarReducedEquation":
        """Same drift with ``potential`` added to ``q``."""
        return ScalarReducedEquation(self.v0, self.q + potential, self.sign)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Stencil matrix of the operator, boundary rows empty."""
        grid = self.grid
        return (
            grid.laplacian_matrix
            + advection_matrix(grid, self.drift)
            + grid.interior_projector @ sp.diags(self.q.values.ravel())
        ).tocsr()

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (self.matrix @ values.ravel()).reshape(self.grid.shape)

    def is_degenerate(self, tol: float = 0.0) -> bool:
        """Whether ``H`` vanishes (within ``tol``) at every node."""
        return bool(np.max(np.abs(self.H.values)) <= tol)

    @cached_property
    def dirichlet_solver(self) -> Factorized:
        return Factorized(dirichlet_rows(self.grid, self.matrix))

    def solve_dirichlet(self, boundary) -> ScalarField:
        """Solution taking the boundary-node values of ``boundary``."""
        values = boundary.values if isinstance(boundary, ScalarField) else boundary
        values = np.asarray(values)
        if values.shape != self.grid.shape:
            raise GridError(f"boundary data of shape {values.shape} do not fit the grid")
        rhs = np.where(self.grid.boundary_mask, values, 0.0)
        solution = self.dirichlet_solver.solve(rhs.ravel())
        return ScalarField(self.grid, solution.reshape(self.grid.shape))
