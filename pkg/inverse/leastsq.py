"""
Regularized linear least squares and the coarse bases the recoveries fit in.

Unknown coefficient fields are expanded in tensor-product hat functions on a
mesh keeping every ``factor``-th node of the simulation grid (boundary nodes
always kept). The least-squares systems are solved by Tikhonov-filtered SVD
with the weight taken relative to the largest singular value.
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import scipy.linalg

from grid.mesh import Grid
from mfglab.errors import RankDeficiency

logger = logging.getLogger(__name__)


def hat_matrix(axis: np.ndarray, picks: np.ndarray) -> np.ndarray:
    """Values of the piecewise-linear hats centred on ``axis[picks]``, one column each."""
    coarse = axis[picks]
    return np.column_stack(
        [np.interp(axis, coarse, np.eye(len(picks))[j]) for j in range(len(picks))]
    )


@dataclass(frozen=True, eq=False)
class HatBasis:
    """Tensor-product hats over space (and optionally the time levels)."""

    factors: Tuple[np.ndarray, ...]
    timed: bool

    @classmethod
    def spatial(cls, grid: Grid, factor: int) -> "HatBasis":
        picks = grid.coarsened(factor)
        return cls(
            tuple(hat_matrix(axis, p) for axis, p in zip(grid.axes, picks)), False
        )

    @classmethod
    def space_time(cls, grid: Grid, factor: int) -> "HatBasis":
        spatial = cls.spatial(grid, factor)
        time = hat_matrix(grid.times, grid.time_coarsened(factor))
        return cls((time,) + spatial.factors, True)

    @property
    def coarse_shape(self) -> Tuple[int, ...]:
        return tuple(f.shape[1] for f in self.factors)

    @property
    def size(self) -> int:
        return int(np.prod(self.coarse_shape))

    def function(self, j: int) -> np.ndarray:
        """Hat ``j`` (flat coarse index) on the fine nodes."""
        index = np.unravel_index(j, self.coarse_shape)
        out = self.factors[0][:, index[0]]
        for f, i in zip(self.factors[1:], index[1:]):
            out = np.multiply.outer(out, f[:, i])
        return out

    def synthesize(self, coefficients: np.ndarray) -> np.ndarray:
        """``sum_j c_j phi_j`` on the fine nodes."""
        out = np.reshape(coefficients, self.coarse_shape)
        for axis, f in enumerate(self.factors):
            out = np.moveaxis(np.tensordot(f, out, axes=(1, axis)), 0, axis)
        return out


@dataclass
class TikhonovFit:
    coefficients: np.ndarray
    singular_values: np.ndarray
    mu: float
    residual: float
    relative_residual: float

    @property
    def rank(self) -> int:
        return int(np.sum(self.singular_values > self.mu))

    @property
    def condition(self) -> float:
        s = self.singular_values
        return float(s[0] / s[-1]) if s.size and s[-1] > 0 else float("inf")

    def to_dict(self) -> dict:
        s = self.singular_values
        return {
            "mu": self.mu,
            "rank": self.rank,
            "unknowns": int(s.size),
            "largest_singular_value": float(s[0]) if s.size else 0.0,
            "smallest_singular_value": float(s[-1]) if s.size else 0.0,
            "residual": self.residual,
            "relative_residual": self.relative_residual,
        }


def tikhonov_solve(
    matrix: np.ndarray,
    rhs: np.ndarray,
    weight: float = 1e-6,
    degenerate_fraction: float = 0.5,
) -> TikhonovFit:
    """Minimize ``|A x - b|^2 + mu^2 |x|^2`` with ``mu = weight * s_max``.

    ``rhs`` may hold several right-hand sides as columns. Raises
    :class:`RankDeficiency` when ``A`` vanishes or more than
    ``degenerate_fraction`` of its singular values fall below ``mu``.
    """
    matrix = np.asarray(matrix)
    rhs = np.asarray(rhs)
    U, s, Vh = scipy.linalg.svd(matrix, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        raise RankDeficiency("least-squares matrix vanishes", s)
    mu = weight * s[0]
    small = np.sum(s <= mu)
    if small > degenerate_fraction * s.size:
        logger.error(f"{small} of {s.size} singular values below {mu:.3e}")
        raise RankDeficiency(
            f"{small} of {s.size} directions are unresolved at weight {weight:g}", s
        )
    filtered = s / (s**2 + mu**2)
    projected = U.conj().T @ rhs
    scale = filtered[:, None] if projected.ndim == 2 else filtered
    coefficients = Vh.conj().T @ (scale * projected)
    residual = float(np.linalg.norm(matrix @ coefficients - rhs))
    norm = float(np.linalg.norm(rhs))
    fit = TikhonovFit(
        coefficients, s, float(mu), residual, residual / norm if norm > 0 else 0.0
    )
    logger.debug(
        f"Tikhonov fit: {matrix.shape[0]} rows, {s.size} unknowns, rank {fit.rank}, "
        f"residual {residual:.3e}"
    )
    return fit


def stack_columns(columns: Sequence[np.ndarray]) -> np.ndarray:
    return np.column_stack([np.ravel(c) for c in columns])
