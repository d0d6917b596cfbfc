"""
Finite-difference operators, boundary traces and quadrature on a Grid.

Interior stencils are second-order centered; at the boundary every operator
switches to second-order one-sided stencils so traces keep the interior order.
The sparse builders at the bottom act on flattened node vectors and leave the
rows of boundary nodes empty for the solvers to fill with boundary conditions.
"""

import logging
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from grid.fields import BoundaryTrace, ScalarField, SpaceTimeField, VectorField
from grid.mesh import Grid
from mfglab.errors import GridError, SingularSystem

logger = logging.getLogger(__name__)

Field = Union[ScalarField, SpaceTimeField]

REGIONS = ("interior", "boundary", "space-time")


def _check(field, grid: Grid = None):
    if grid is not None and field.grid != grid:
        raise GridError("field does not match grid")
    return field.grid


def _take(values: np.ndarray, axis: int, index) -> np.ndarray:
    return np.take(values, index, axis=axis)


def second_derivative(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """d²/dx² along ``axis``; 4-point one-sided rows at both ends."""
    n = values.shape[axis]
    out = np.empty_like(values)
    moved = np.moveaxis(values, axis, 0)
    res = np.moveaxis(out, axis, 0)
    res[1:-1] = (moved[2:] - 2 * moved[1:-1] + moved[:-2]) / h**2
    res[0] = (2 * moved[0] - 5 * moved[1] + 4 * moved[2] - moved[3]) / h**2
    res[n - 1] = (2 * moved[-1] - 5 * moved[-2] + 4 * moved[-3] - moved[-4]) / h**2
    return out


def gradient(f: ScalarField) -> VectorField:
    grid = f.grid
    comps = [
        np.gradient(f.values, h, axis=axis, edge_order=2)
        for axis, h in enumerate(grid.spacing)
    ]
    return VectorField(grid, np.stack(comps))


def laplacian(f: ScalarField) -> ScalarField:
    grid = f.grid
    total = sum(
        second_derivative(f.values, axis, h) for axis, h in enumerate(grid.spacing)
    )
    return ScalarField(grid, total)


def divergence(w: VectorField) -> ScalarField:
    grid = w.grid
    total = sum(
        np.gradient(w.components[axis], h, axis=axis, edge_order=2)
        for axis, h in enumerate(grid.spacing)
    )
    return ScalarField(grid, total)


def outward_derivative(
    values: np.ndarray, grid: Grid, face, offset: int = 0, points: int = 3
):
    """Outward normal derivative on one face with a one-sided stencil.

    ``points=3`` is the second-order stencil; ``points=2`` differences the
    boundary value with the first interior layer. ``offset`` is the number of
    leading (time) axes in ``values``.
    """
    if points not in (2, 3):
        raise GridError(f"one-sided stencils have 2 or 3 points, got {points}")
    axis = face.axis + offset
    h = grid.spacing[face.axis]
    if face.side == 0:
        f0, f1, f2 = (_take(values, axis, i) for i in (0, 1, 2))
    else:
        f0, f1, f2 = (_take(values, axis, i) for i in (-1, -2, -3))
    if points == 2:
        return (f0 - f1) / h
    return (3 * f0 - 4 * f1 + f2) / (2 * h)


def restrict_to_boundary(f: Field, points: int = 3) -> BoundaryTrace:
    """Boundary values and outward normal derivatives of ``f`` on every face."""
    grid = f.grid
    timed = isinstance(f, SpaceTimeField)
    offset = 1 if timed else 0
    lead = (slice(None),) if timed else ()
    values, derivs = [], []
    for face in grid.faces:
        values.append(f.values[lead + face.index])
        derivs.append(outward_derivative(f.values, grid, face, offset, points))
    return BoundaryTrace(grid, tuple(values), tuple(derivs), time_dependent=timed)


def integrate_faces(grid: Grid, arrays: Sequence[np.ndarray], lateral: bool = False):
    """Sum of per-face trapezoidal integrals, optionally also over time."""
    total = 0.0
    for face, arr in zip(grid.faces, arrays):
        w = grid.face_weights[face.label]
        if lateral:
            w = np.multiply.outer(grid.time_weights, w)
        total = total + np.sum(w * arr)
    return total


def integrate(f: Field, region: str = "interior"):
    """Trapezoidal integral of ``f`` over ``region``.

    ``interior`` is the box Ω, ``boundary`` its surface (for space-time fields
    the lateral surface Σ×(0,T)) and ``space-time`` the cylinder Ω×(0,T).
    """
    if region not in REGIONS:
        raise GridError(f"unknown integration region {region!r}")
    grid = f.grid
    timed = isinstance(f, SpaceTimeField)
    if region == "interior":
        if timed:
            raise GridError("use region 'space-time' for space-time fields")
        value = np.sum(grid.weights * f.values)
    elif region == "space-time":
        if not timed:
            raise GridError("region 'space-time' needs a space-time field")
        per_level = np.tensordot(f.values, grid.weights, axes=grid.dim)
        value = np.dot(grid.time_weights, per_level)
    else:
        trace = restrict_to_boundary(f)
        value = integrate_faces(grid, trace.values, lateral=timed)
    return _scalar(value)


def integrate_values(grid: Grid, values: np.ndarray):
    """Integral over Ω of a raw node array (time levels leading are summed in time)."""
    if values.shape == grid.shape:
        return _scalar(np.sum(grid.weights * values))
    if values.shape == grid.space_time_shape:
        per_level = np.tensordot(values, grid.weights, axes=grid.dim)
        return _scalar(np.dot(grid.time_weights, per_level))
    raise GridError(f"cannot integrate array of shape {values.shape}")


def _scalar(value):
    value = complex(value)
    return value.real if value.imag == 0 else value


def l2_norm(f: Union[ScalarField, np.ndarray], grid: Grid = None) -> float:
    if isinstance(f, ScalarField):
        grid, values = f.grid, f.values
    else:
        values = f
    return float(np.sqrt(np.sum(grid.weights * np.abs(values) ** 2)))


def sup_norm(values, interior_only: bool = False, grid: Grid = None) -> float:
    arr = values.values if hasattr(values, "values") else np.asarray(values)
    if interior_only:
        arr = arr[..., grid.interior_mask]
    return float(np.max(np.abs(arr))) if arr.size else 0.0


# Sparse operators


def _axis_neighbours(grid: Grid, axis: int):
    rows = grid.interior_indices
    stride = grid.strides()[axis]
    return rows, rows + stride, rows - stride


def _node_array(grid: Grid, value) -> np.ndarray:
    if isinstance(value, (ScalarField,)):
        _check(value, grid)
        return value.values.ravel()
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.size, float(arr))
    if arr.shape not in (grid.shape, (grid.size,)):
        raise GridError(f"coefficient has shape {arr.shape}, expected {grid.shape}")
    return arr.ravel()


def advection_matrix(grid: Grid, drift) -> sp.csr_matrix:
    """Matrix of ``u ↦ b·∇u`` with centered differences."""
    comps = drift.components if isinstance(drift, VectorField) else np.asarray(drift)
    total = sp.csr_matrix((grid.size, grid.size))
    for axis, g in enumerate(grid.gradient_matrices):
        total = total + sp.diags(comps[axis].ravel()) @ g
    return total.tocsr()


def flux_matrix(grid: Grid, kappa, potential) -> sp.csr_matrix:
    """Matrix of ``m ↦ ∇·(κ m ∇p)`` in conservative form.

    Face fluxes use midpoint averages of κ and m and the two-point difference
    of ``p``, so summing the rows against the quadrature weights telescopes.
    """
    k = _node_array(grid, kappa)
    p = _node_array(grid, potential)
    data, ii, jj = [], [], []
    for axis, h in enumerate(grid.spacing):
        rows, up, down = _axis_neighbours(grid, axis)
        c_up = 0.5 * (k[rows] + k[up]) * (p[up] - p[rows]) / h**2
        c_down = 0.5 * (k[rows] + k[down]) * (p[rows] - p[down]) / h**2
        for cols, coef in ((up, c_up / 2), (rows, (c_up - c_down) / 2)):
            ii.append(rows)
            jj.append(cols)
            data.append(coef)
        ii.append(rows)
        jj.append(down)
        data.append(-c_down / 2)
    return _assemble(grid, data, ii, jj)


def potential_flux_matrix(grid: Grid, kappa, density) -> sp.csr_matrix:
    """Matrix of ``v ↦ ∇·(κ ρ ∇v)`` with the same face averages as ``flux_matrix``."""
    k = _node_array(grid, kappa)
    rho = _node_array(grid, density)
    data, ii, jj = [], [], []
    for axis, h in enumerate(grid.spacing):
        rows, up, down = _axis_neighbours(grid, axis)
        w_up = 0.25 * (k[rows] + k[up]) * (rho[rows] + rho[up]) / h**2
        w_down = 0.25 * (k[rows] + k[down]) * (rho[rows] + rho[down]) / h**2
        ii += [rows, rows, rows]
        jj += [up, rows, down]
        data += [w_up, -(w_up + w_down), w_down]
    return _assemble(grid, data, ii, jj)


def _assemble(grid: Grid, data, ii, jj) -> sp.csr_matrix:
    return sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(ii), np.concatenate(jj))),
        shape=(grid.size, grid.size),
    )


def flux_divergence(kappa, density: ScalarField, potential: ScalarField) -> ScalarField:
    """``∇·(κ m ∇p)`` at interior nodes (zero on the boundary)."""
    grid = density.grid
    _check(potential, grid)
    values = flux_matrix(grid, kappa, potential.values) @ density.values.ravel()
    return ScalarField(grid, values.reshape(grid.shape))


def normal_derivative_matrix(grid: Grid) -> sp.csr_matrix:
    """Rows of the one-sided outward derivative, face by face in ``grid.faces`` order.

    Multiplying a flattened node vector gives the concatenation of the
    ``normal_derivatives`` of :func:`restrict_to_boundary`.
    """
    nodes = np.arange(grid.size).reshape(grid.shape)
    strides = grid.strides()
    blocks = []
    for face in grid.faces:
        rows_at = nodes[face.index].ravel()
        step = strides[face.axis] * (1 if face.side == 0 else -1)
        h = grid.spacing[face.axis]
        count = rows_at.size
        rows = np.tile(np.arange(count), 3)
        cols = np.concatenate([rows_at, rows_at + step, rows_at + 2 * step])
        data = np.concatenate(
            [np.full(count, 3.0), np.full(count, -4.0), np.full(count, 1.0)]
        ) / (2 * h)
        blocks.append(sp.csr_matrix((data, (rows, cols)), shape=(count, grid.size)))
    return sp.vstack(blocks, format="csr")


def dirichlet_rows(grid: Grid, matrix: sp.spmatrix) -> sp.csr_matrix:
    """Replace boundary rows of ``matrix`` by identity rows."""
    return (grid.interior_projector @ matrix + grid.boundary_projector).tocsr()


class Factorized:
    """Sparse LU factorization that also accepts complex right-hand sides.

    Real matrices are factorized once and complex data solved as separate real
    and imaginary parts; complex matrices are factorized in complex arithmetic.
    """

    def __init__(self, matrix: sp.spmatrix):
        self.shape = matrix.shape
        self.is_complex = np.iscomplexobj(matrix.data) if sp.issparse(matrix) else False
        try:
            self._lu = splu(sp.csc_matrix(matrix))
        except RuntimeError as exc:
            logger.error(f"Sparse factorization failed: {exc}")
            raise SingularSystem(f"discrete system is singular ({exc})") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.is_complex:
            return self._lu.solve(np.ascontiguousarray(rhs, dtype=complex))
        if np.iscomplexobj(rhs):
            return self._lu.solve(np.ascontiguousarray(rhs.real)) + 1j * self._lu.solve(
                np.ascontiguousarray(rhs.imag)
            )
        return self._lu.solve(np.ascontiguousarray(rhs, dtype=float))
