"""
Probe-weighted form of a reduced equation.

With ``m = exp(xi . x - sign v0 / 2) y`` the reduced operator becomes
``exp(...) (Lap y + 2 xi . grad y + H y)`` and ``y`` stays of order one while
``m`` spans many decades across the box. Probing records are kept in this
form and paired through :func:`boundary_pairing`.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from cgo.construction import CGOSolution
from cgo.equations import ScalarReducedEquation
from cgo.probes import ProbeVector
from cgo.remainder import STEPS, Torus
from grid.fields import BoundaryTrace, ScalarField
from grid.operators import Factorized, dirichlet_rows, restrict_to_boundary
from mfglab.errors import GridError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class WeightedEquation:
    """``Lap y + 2 xi . grad y + H y`` for the weighted unknown ``y`` of ``eq``."""

    eq: ScalarReducedEquation
    probe: ProbeVector

    def __post_init__(self):
        if self.probe.dim != self.eq.grid.dim:
            raise GridError(
                f"probe of dimension {self.probe.dim} on a {self.eq.grid.dim}D grid"
            )

    @property
    def grid(self):
        return self.eq.grid

    @cached_property
    def torus(self) -> Torus:
        return Torus(self.grid, self.probe.xi)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Stencil rows at interior nodes, boundary rows empty."""
        grid = self.grid
        rows = grid.interior_indices
        strides = grid.strides()
        H = self.eq.H.values.ravel()
        centre = H[rows] - sum(2 / h**2 for h in grid.spacing)
        ii, jj, data = [rows], [rows], [centre.astype(complex)]
        for axis, stride in enumerate(strides):
            coefficients = self.torus.coefficients(axis)
            for step in STEPS:
                ii.append(rows)
                jj.append(rows + step * stride)
                data.append(np.full(rows.size, coefficients[step], dtype=complex))
        return sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(ii), np.concatenate(jj))),
            shape=(grid.size, grid.size),
        )

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (self.matrix @ np.ravel(values)).reshape(self.grid.shape)

    @cached_property
    def _dirichlet(self) -> Factorized:
        return Factorized(dirichlet_rows(self.grid, self.matrix))

    def solve_dirichlet(self, boundary: np.ndarray) -> ScalarField:
        """Weighted solution with the boundary values of the node array ``boundary``."""
        grid = self.grid
        rhs = np.where(grid.boundary_mask, boundary, 0.0).astype(complex)
        values = self._dirichlet.solve(rhs.ravel()).reshape(grid.shape)
        return ScalarField(grid, values)

    def solve_interior(self, rhs: np.ndarray) -> np.ndarray:
        """Node array solving the stencil rows against ``rhs``, zero on the boundary."""
        grid = self.grid
        rhs = np.where(grid.interior_mask, rhs, 0.0).astype(complex)
        return self._dirichlet.solve(rhs.ravel()).reshape(grid.shape)


def weighted_trace(field: ScalarField) -> BoundaryTrace:
    """Values and two-point outward differences, the form probing records use."""
    return restrict_to_boundary(field, points=2)


def _inward(face, grid):
    """Index of the first interior layer behind ``face``, interior of the face only."""
    index = [slice(1, -1)] * grid.dim
    index[face.axis] = 1 if face.side == 0 else -2
    return tuple(index)


def _on_face(face, grid):
    index = [slice(1, -1)] * grid.dim
    index[face.axis] = 0 if face.side == 0 else -1
    return tuple(index)


def boundary_pairing(difference: BoundaryTrace, adjoint: CGOSolution) -> complex:
    """Boundary form of ``sum h^d exp(i k . x) y2 M d`` over interior nodes.

    ``difference`` is the weighted trace of ``d`` (values and two-point
    outward differences) and ``adjoint`` the twisted partner of the probe
    that weights ``d``. Only face-interior nodes enter; the first interior
    layer is recovered from the two-point difference.
    """
    grid = difference.grid
    if adjoint.twist is None:
        raise GridError("boundary pairing needs a twisted adjoint probe")
    if adjoint.grid != grid:
        raise GridError("trace and adjoint probe live on different grids")
    cell = float(np.prod(grid.spacing))
    phase = np.exp(1j * sum(k * x for k, x in zip(adjoint.twist, grid.coords)))
    weight = cell * phase * adjoint.weighted.values
    torus = Torus(grid, adjoint.probe.xi)
    total = 0.0 + 0.0j
    for face, values, derivs in zip(
        grid.faces, difference.values, difference.normal_derivatives
    ):
        h = grid.spacing[face.axis]
        inward = 1 if face.side == 0 else -1
        c = torus.coefficients(face.axis)
        inner = tuple(slice(1, -1) for _ in face.shape)
        d_face = values[inner]
        d_inner = d_face - h * derivs[inner]
        w_face = weight[_on_face(face, grid)]
        w_inner = weight[_inward(face, grid)]
        total += np.sum(d_face * w_inner * c[-inward] - d_inner * w_face * c[inward])
    return complex(total)


def volume_pairing(
    equation: WeightedEquation, adjoint: CGOSolution, difference: ScalarField
) -> complex:
    """``sum h^d exp(i k . x) y2 M d`` over interior nodes, the oracle of the pairing."""
    grid = equation.grid
    if adjoint.twist is None:
        raise GridError("volume pairing needs a twisted adjoint probe")
    cell = float(np.prod(grid.spacing))
    phase = np.exp(1j * sum(k * x for k, x in zip(adjoint.twist, grid.coords)))
    applied = equation.apply(difference.values)
    integrand = cell * phase * adjoint.weighted.values * applied
    return complex(np.sum(integrand[grid.interior_mask]))

