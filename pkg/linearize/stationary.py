"""
First-order linearization around a stationary Gibbs equilibrium.

With ``sigma = kappa = 1`` the linearized pair is

    -Lap v + grad v0 . grad v = F1 m
    -Lap m - div(m grad v0) - div(m0 grad v) = 0

and, because ``grad m0 = -m0 grad v0``, value data ``g = -h / m0`` force
``v = -m / m0`` so that ``m`` alone solves the reduced scalar equation
``Lap m + grad v0 . grad m + (Lap v0 - F1 m0) m = 0``.
"""

import logging
from typing import Optional

import numpy as np
import scipy.sparse as sp

from cgo.equations import ScalarReducedEquation
from forward.stationary import StationarySolution
from grid.fields import ScalarField, require_same_grid
from grid.operators import (
    Factorized,
    advection_matrix,
    dirichlet_rows,
    flux_matrix,
    gradient,
    laplacian,
    potential_flux_matrix,
)
from linearize.systems import LinearizedSolution
from mfglab.errors import GridError, PositivityFloor

logger = logging.getLogger(__name__)


def gibbs_value_data(base: StationarySolution, h: ScalarField) -> ScalarField:
    """Value data ``-h / m0`` compatible with the linearized Gibbs relation."""
    m0 = base.m0.values
    if np.min(m0) <= 0:
        raise PositivityFloor("stationary density must be positive for Gibbs data")
    return h.with_values(-h.values / m0)


def stationary_matrix(base: StationarySolution, F1: ScalarField) -> sp.csr_matrix:
    """Block operator on ``[v, m]`` with Dirichlet rows in both blocks."""
    grid = require_same_grid(base.v0, F1)
    lap = grid.laplacian_matrix
    drift = gradient(base.v0)
    interior = grid.interior_projector
    hjb_v = dirichlet_rows(grid, -lap + advection_matrix(grid, drift))
    hjb_m = -interior @ sp.diags(F1.values.ravel())
    fpk_v = -potential_flux_matrix(grid, 1.0, base.m0.values)
    fpk_m = dirichlet_rows(grid, -lap - flux_matrix(grid, 1.0, base.v0.values))
    return sp.bmat([[hjb_v, hjb_m], [fpk_v, fpk_m]], format="csr")


def solve_first_order_stationary(
    base: StationarySolution,
    F1: ScalarField,
    h: ScalarField,
    g: Optional[ScalarField] = None,
) -> LinearizedSolution:
    """Coupled stationary linearized solve with Dirichlet data ``(g, h)``.

    ``g`` defaults to :func:`gibbs_value_data`; complex data are accepted.
    Raises ``SingularSystem`` when the linearized operator is resonant.
    """
    grid = require_same_grid(base.v0, F1, h)
    if g is None:
        g = gibbs_value_data(base, h)
    boundary = grid.boundary_mask
    rhs = np.concatenate(
        [
            np.where(boundary, g.values, 0.0).ravel(),
            np.where(boundary, h.values, 0.0).ravel(),
        ]
    )
    matrix = stationary_matrix(base, F1)
    x = Factorized(matrix).solve(rhs)
    residual = float(np.max(np.abs(matrix @ x - rhs)))
    v = ScalarField(grid, x[: grid.size].reshape(grid.shape))
    m = ScalarField(grid, x[grid.size :].reshape(grid.shape))
    logger.debug(f"Stationary linearized solve: residual {residual:.3e}")
    return LinearizedSolution((1,), v, m, 1, residual)


def reduce_to_scalar(
    base: StationarySolution, F1: ScalarField, sign: int = 1
) -> ScalarReducedEquation:
    """Reduced equation for the linearized density.

    ``sign = +1`` gives drift ``grad v0`` and potential ``Lap v0 - F1 m0``;
    ``sign = -1`` gives its formal adjoint.
    """
    if sign not in (1, -1):
        raise GridError(f"sign must be +1 or -1, got {sign}")
    require_same_grid(base.v0, F1)
    q = laplacian(base.v0).values - F1.values * base.m0.values
    equation = ScalarReducedEquation(base.v0, base.v0.with_values(q), 1)
    return equation if sign == 1 else equation.adjoint()


def solve_reduced(
    base: StationarySolution, F1: ScalarField, h: ScalarField
) -> ScalarField:
    """Linearized density from the reduced scalar equation alone."""
    return reduce_to_scalar(base, F1).solve_dirichlet(h)
