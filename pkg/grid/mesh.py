"""
Uniform tensor-product grids on axis-aligned boxes.

Nodes include the boundary: an axis with ``nx`` interior points carries
``nx + 2`` nodes and spacing ``(upper - lower) / (nx + 1)``. Arrays over the
nodes are indexed ``[i1, i2, i3]`` (row-major); space-time arrays put the time
level first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from mfglab.errors import GridError

logger = logging.getLogger(__name__)

MIN_INTERIOR_POINTS = 4


@dataclass(frozen=True)
class GridSpec:
    """Box domain, resolution and time horizon."""

    dim: int
    extents: Tuple[Tuple[float, float], ...]
    nx: Tuple[int, ...]
    nt: int = 0
    horizon: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise GridError(f"dimension must be 1, 2 or 3, got {self.dim}")
        extents = tuple((float(lo), float(hi)) for lo, hi in self.extents)
        nx = tuple(int(n) for n in self.nx)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "nx", nx)
        if len(extents) != self.dim or len(nx) != self.dim:
            raise GridError(
                f"expected {self.dim} extents and counts, "
                f"got {len(extents)} and {len(nx)}"
            )
        for axis, (lo, hi) in enumerate(extents):
            if not hi > lo:
                raise GridError(f"degenerate extent on axis {axis + 1}: [{lo}, {hi}]")
        for axis, n in enumerate(nx):
            if n < MIN_INTERIOR_POINTS:
                raise GridError(
                    f"axis {axis + 1} needs at least {MIN_INTERIOR_POINTS} "
                    f"interior points, got {n}"
                )
        if self.nt != 0 and self.nt < 2:
            raise GridError(f"time-dependent grids need nt >= 2, got {self.nt}")
        if not self.horizon > 0:
            raise GridError(f"horizon must be positive, got {self.horizon}")

    @property
    def time_dependent(self) -> bool:
        return self.nt > 0

    def with_resolution(self, nx: Sequence[int], nt: int | None = None) -> "GridSpec":
        return GridSpec(
            dim=self.dim,
            extents=self.extents,
            nx=tuple(nx),
            nt=self.nt if nt is None else nt,
            horizon=self.horizon,
        )

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "extents": [list(e) for e in self.extents],
            "nx": list(self.nx),
            "nt": self.nt,
            "horizon": self.horizon,
        }


@dataclass(frozen=True)
class Face:
    """One side of the box: ``side`` 0 is the lower face, 1 the upper."""

    axis: int
    side: int
    normal: Tuple[float, ...]
    index: Tuple
    shape: Tuple[int, ...]

    @property
    def label(self) -> str:
        return f"x{self.axis + 1}{'-' if self.side == 0 else '+'}"


class Grid:
    """Node coordinates, boundary faces, quadrature and cached operators."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.dim = spec.dim
        self.shape: Tuple[int, ...] = tuple(n + 2 for n in spec.nx)
        self.size = int(np.prod(self.shape))
        self.spacing: Tuple[float, ...] = tuple(
            (hi - lo) / (n + 1) for (lo, hi), n in zip(spec.extents, spec.nx)
        )
        self.axes: Tuple[np.ndarray, ...] = tuple(
            np.linspace(lo, hi, n) for (lo, hi), n in zip(spec.extents, self.shape)
        )
        self.lengths = tuple(hi - lo for lo, hi in spec.extents)
        self.volume = float(np.prod(self.lengths))
        self.nt = spec.nt
        self.horizon = spec.horizon
        self.dt = spec.horizon / spec.nt if spec.nt else 0.0
        self.times = (
            np.linspace(0.0, spec.horizon, spec.nt + 1) if spec.nt else np.zeros(1)
        )

    def __repr__(self):
        return f"Grid(dim={self.dim}, shape={self.shape}, nt={self.nt})"

    def __eq__(self, other):
        return isinstance(other, Grid) and other.spec == self.spec

    def __hash__(self):
        return hash(self.spec)

    @property
    def space_time_shape(self) -> Tuple[int, ...]:
        return (self.nt + 1,) + self.shape

    @cached_property
    def coords(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[tuple(slice(1, -1) for _ in self.shape)] = True
        return mask

    @property
    def boundary_mask(self) -> np.ndarray:
        return ~self.interior_mask

    @cached_property
    def interior_indices(self) -> np.ndarray:
        return np.flatnonzero(self.interior_mask.ravel())

    @cached_property
    def boundary_indices(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask.ravel())

    @cached_property
    def faces(self) -> Tuple[Face, ...]:
        faces = []
        for axis in range(self.dim):
            for side in (0, 1):
                index = [slice(None)] * self.dim
                index[axis] = 0 if side == 0 else -1
                normal = [0.0] * self.dim
                normal[axis] = -1.0 if side == 0 else 1.0
                shape = tuple(n for a, n in enumerate(self.shape) if a != axis)
                faces.append(Face(axis, side, tuple(normal), tuple(index), shape))
        return tuple(faces)

    @cached_property
    def boundary_normals(self) -> np.ndarray:
        """Outward unit normals at the enumerated boundary nodes.

        Edge and corner nodes get the normalized sum of the normals of the
        faces they belong to.
        """
        normals = np.zeros(self.shape + (self.dim,))
        for face in self.faces:
            normals[face.index + (face.axis,)] += face.normal[face.axis]
        flat = normals.reshape(-1, self.dim)[self.boundary_indices]
        return flat / np.linalg.norm(flat, axis=1, keepdims=True)

    @cached_property
    def boundary_coords(self) -> np.ndarray:
        return np.stack([c.ravel()[self.boundary_indices] for c in self.coords], 1)

    @staticmethod
    def _trapezoid(n: int, h: float) -> np.ndarray:
        w = np.full(n, h)
        w[0] = w[-1] = h / 2
        return w

    @cached_property
    def weights(self) -> np.ndarray:
        """Composite trapezoidal weights over the nodes of the box."""
        w = np.ones(())
        for n, h in zip(self.shape, self.spacing):
            w = np.multiply.outer(w, self._trapezoid(n, h))
        return w

    @cached_property
    def face_weights(self) -> Dict[str, np.ndarray]:
        out = {}
        for face in self.faces:
            w = np.ones(())
            for axis, (n, h) in enumerate(zip(self.shape, self.spacing)):
                if axis != face.axis:
                    w = np.multiply.outer(w, self._trapezoid(n, h))
            out[face.label] = w
        return out

    @cached_property
    def time_weights(self) -> np.ndarray:
        if not self.nt:
            raise GridError("grid has no time levels")
        return self._trapezoid(self.nt + 1, self.dt)

    # Sparse operators over all nodes. Rows of boundary nodes are zero; solvers
    # overwrite them with Dirichlet rows.

    def _along_axis(self, axis: int, matrix_1d: sp.spmatrix) -> sp.csr_matrix:
        out = None
        for a, n in enumerate(self.shape):
            factor = matrix_1d if a == axis else sp.identity(n, format="csr")
            out = factor if out is None else sp.kron(out, factor, format="csr")
        return out.tocsr()

    def _interior_rows_1d(self, n: int, stencil: Sequence[float]) -> sp.csr_matrix:
        offsets = [-1, 0, 1]
        rows = np.arange(1, n - 1)
        data, ii, jj = [], [], []
        for off, coef in zip(offsets, stencil):
            if coef == 0:
                continue
            ii.append(rows)
            jj.append(rows + off)
            data.append(np.full(rows.size, coef))
        return sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(ii), np.concatenate(jj))),
            shape=(n, n),
        )

    @cached_property
    def laplacian_matrix(self) -> sp.csr_matrix:
        total = sp.csr_matrix((self.size, self.size))
        for axis, (n, h) in enumerate(zip(self.shape, self.spacing)):
            d2 = self._interior_rows_1d(n, (1 / h**2, -2 / h**2, 1 / h**2))
            total = total + self._along_axis(axis, d2)
        return self._zero_boundary_rows(total)

    @cached_property
    def gradient_matrices(self) -> Tuple[sp.csr_matrix, ...]:
        mats = []
        for axis, (n, h) in enumerate(zip(self.shape, self.spacing)):
            d1 = self._interior_rows_1d(n, (-1 / (2 * h), 0.0, 1 / (2 * h)))
            mats.append(self._zero_boundary_rows(self._along_axis(axis, d1)))
        return tuple(mats)

    @cached_property
    def interior_projector(self) -> sp.csr_matrix:
        return sp.diags(self.interior_mask.ravel().astype(float), format="csr")

    @cached_property
    def boundary_projector(self) -> sp.csr_matrix:
        return sp.diags(self.boundary_mask.ravel().astype(float), format="csr")

    def _zero_boundary_rows(self, matrix: sp.spmatrix) -> sp.csr_matrix:
        return (self.interior_projector @ matrix).tocsr()

    def strides(self) -> Tuple[int, ...]:
        out = []
        for axis in range(self.dim):
            out.append(int(np.prod(self.shape[axis + 1 :])))
        return tuple(out)

    def coarsened(self, factor: int) -> Tuple[np.ndarray, ...]:
        """Indices of every ``factor``-th node per axis, boundary nodes kept."""
        picks = []
        for n in self.shape:
            idx = np.arange(0, n, factor)
            if idx[-1] != n - 1:
                idx = np.append(idx, n - 1)
            picks.append(idx)
        return tuple(picks)

    def time_coarsened(self, factor: int) -> np.ndarray:
        idx = np.arange(0, self.nt + 1, factor)
        if idx[-1] != self.nt:
            idx = np.append(idx, self.nt)
        return idx


def build_grid(spec: GridSpec) -> Grid:
    """Validate ``spec`` and build the grid with its boundary enumeration."""
    grid = Grid(spec)
    logger.debug(
        f"Built grid {grid.shape} with {grid.boundary_indices.size} boundary nodes"
    )
    return grid
