"""
Stationary state from the baseline traces of a probing archive.

On a baseline with vanishing cost ``w = exp(-v0 / 2)`` is harmonic, so the
Dirichlet trace of ``v0`` fixes ``w`` and hence ``v0`` and the Gibbs density.
The Neumann traces are redundant and serve as a consistency check.
"""

import logging
from dataclasses import dataclass

import numpy as np

from cauchy.measurements import MeasurementC2
from forward.stationary import StationarySolution, build_stationary_baseline
from grid.fields import ScalarField
from grid.operators import Factorized, dirichlet_rows, restrict_to_boundary
from mfglab.errors import InconsistentCauchyData
from mfglab.options import RecoveryOptions

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CauchyMisfit:
    value_flux: float
    density: float

    @property
    def worst(self) -> float:
        return max(self.value_flux, self.density)


def _relative_gap(measured, predicted) -> float:
    gap = max(float(np.max(np.abs(a - b))) for a, b in zip(measured, predicted))
    scale = max(1.0, max(float(np.max(np.abs(a))) for a in measured))
    return gap / scale


def cauchy_misfit(c2: MeasurementC2, base: StationarySolution) -> CauchyMisfit:
    """Distance between the measured baseline traces and those of ``base``."""
    v_trace = restrict_to_boundary(base.v0)
    m_trace = restrict_to_boundary(base.m0)
    return CauchyMisfit(
        _relative_gap(c2.v_trace.normal_derivatives, v_trace.normal_derivatives),
        _relative_gap(c2.m_trace.values, m_trace.values),
    )


def recover_stationary_state(
    c2: MeasurementC2, options: RecoveryOptions = None
) -> StationarySolution:
    """``(v0, m0)`` from the Dirichlet trace of ``v0``; ``lam`` is zero.

    Raises :class:`InconsistentCauchyData` when the Neumann trace of ``v0`` or
    the trace of ``m0`` disagree with the reconstruction by more than
    ``options.cauchy_misfit_tol``.
    """
    options = options if options is not None else RecoveryOptions.from_settings()
    grid = c2.grid
    w_boundary = np.exp(-0.5 * c2.v_trace.scatter())
    solver = Factorized(dirichlet_rows(grid, grid.laplacian_matrix))
    rhs = np.where(grid.boundary_mask, w_boundary, 0.0)
    w = solver.solve(rhs.ravel()).reshape(grid.shape)
    if np.min(w) <= 0:
        raise InconsistentCauchyData("harmonic extension of exp(-v0/2) is not positive")
    v0 = ScalarField(grid, -2.0 * np.log(w))
    base = build_stationary_baseline(grid, v0)
    misfit = cauchy_misfit(c2, base)
    logger.info(
        f"Recovered stationary state: flux misfit {misfit.value_flux:.3e}, "
        f"density misfit {misfit.density:.3e}"
    )
    if misfit.worst > options.cauchy_misfit_tol:
        raise InconsistentCauchyData(
            f"baseline traces do not fit one stationary state "
            f"(misfit {misfit.worst:.3e} > {options.cauchy_misfit_tol:g})"
        )
    return base
