"""
Discrete unique continuation: zero Cauchy data leave only the zero solution.

The homogeneous linearized system is stacked on the rows that read the
outward derivatives of every level, and its null space is inspected by a
dense SVD. A random state projected onto that null space must vanish in the
interior; an interior bump that violates the equations must leave a large
residual.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from forward.coefficients import MFGCoefficients, TimeDependentSolution
from linearize.systems import LinearizedSystem
from mfglab.options import SolverOptions

logger = logging.getLogger(__name__)

NEGATIVE_CONTROL_MARGIN = 1e3


@dataclass
class UCPReport:
    interior_sup: float
    smallest_singular_value: float
    largest_singular_value: float
    bump_residual: float
    rank: int
    unknowns: int
    tolerance: float

    @property
    def injective(self) -> bool:
        return self.rank == self.unknowns

    @property
    def passed(self) -> bool:
        bound = 10 * self.tolerance
        return (
            self.interior_sup <= bound
            and self.bump_residual >= NEGATIVE_CONTROL_MARGIN * bound
        )

    def to_dict(self) -> dict:
        return {**asdict(self), "injective": self.injective, "passed": self.passed}


def interior_bump(system: LinearizedSystem) -> np.ndarray:
    """Unit bump of ``v`` at the centre node of the middle level."""
    grid = system.grid
    v = np.zeros(grid.space_time_shape)
    m = np.zeros(grid.space_time_shape)
    centre = tuple(n // 2 for n in grid.shape)
    v[(grid.nt // 2,) + centre] = 1.0
    return system.stack(v, m)


def ucp_residual_check(
    base: TimeDependentSolution,
    coeffs: MFGCoefficients,
    F1=None,
    G1=None,
    options: Optional[SolverOptions] = None,
    seed: int = 0,
) -> UCPReport:
    options = options if options is not None else SolverOptions.from_settings()
    system = LinearizedSystem.first_order(base, coeffs, F1, G1, options)
    operator = system.cauchy_operator.toarray()
    _, s, Vh = scipy.linalg.svd(operator, full_matrices=False)
    n = operator.shape[1]
    cutoff = s[0] * max(operator.shape) * np.finfo(float).eps if s.size else 0.0
    rank = int(np.sum(s > cutoff))
    grid = system.grid
    if rank < n:
        rng = np.random.default_rng(seed)
        null = Vh[rank:].conj().T
        x = null @ (null.conj().T @ rng.standard_normal(n))
        v, m = system.split(x)
        interior = np.broadcast_to(grid.interior_mask, v.shape)
        interior_sup = float(max(np.max(np.abs(v[interior])), np.max(np.abs(m[interior]))))
    else:
        interior_sup = 0.0
    bump = interior_bump(system)
    bump_residual = float(np.max(np.abs(operator @ bump)) / np.max(np.abs(bump)))
    report = UCPReport(
        interior_sup,
        float(s[-1]) if s.size else 0.0,
        float(s[0]) if s.size else 0.0,
        bump_residual,
        rank,
        n,
        options.tol,
    )
    logger.info(
        f"UCP check: rank {rank}/{n}, interior sup {interior_sup:.3e}, "
        f"smallest singular value {report.smallest_singular_value:.3e}, "
        f"bump residual {bump_residual:.3e}"
    )
    return report
