"""
Stationary equilibria: the Gibbs baseline and residual reports.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from forward.coefficients import CostModel, level_values
from grid.fields import ScalarField
from grid.mesh import Grid
from grid.operators import flux_divergence, gradient, integrate, laplacian

logger = logging.getLogger(__name__)

GIBBS_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class StationarySolution:
    """Stationary pair ``(v0, m0)`` with ergodic constant ``lam``."""

    v0: ScalarField
    m0: ScalarField
    lam: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.v0.grid

    def gibbs_gap(self) -> float:
        """Sup distance between ``m0`` and the normalized ``exp(-v0)``."""
        weight = np.exp(-self.v0.values)
        gibbs = weight / integrate(self.v0.with_values(weight))
        return float(np.max(np.abs(self.m0.values - gibbs)))

    def mass(self) -> float:
        return integrate(self.m0)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "mass": self.mass(),
            "gibbs_gap": self.gibbs_gap(),
            "min_density": float(np.min(self.m0.values)),
        }


def build_stationary_baseline(
    grid: Grid, v0_seed: Optional[ScalarField] = None
) -> StationarySolution:
    """Constant baseline, or the Gibbs density of a seeded value function.

    Without a seed, ``v0 = 0`` and ``m0 = 1/|Omega|``. With a seed, ``m0`` is
    ``exp(-v0)`` normalized to unit mass so ``grad m0 = -m0 grad v0``.
    """
    if v0_seed is None:
        v0 = ScalarField.constant(grid, 0.0)
        m0 = ScalarField.constant(grid, 1.0 / grid.volume)
        return StationarySolution(v0, m0, 0.0)
    weight = np.exp(-v0_seed.values)
    m0 = v0_seed.with_values(weight / integrate(v0_seed.with_values(weight)))
    logger.debug(f"Seeded baseline with mass {integrate(m0):.15f}")
    return StationarySolution(v0_seed, m0, 0.0)


def induced_source(sol: StationarySolution, sigma: float = 1.0, kappa: float = 1.0):
    """``-sigma Lap v0 + kappa |grad v0|^2 / 2 + lam``, the source that makes
    ``v0`` solve the stationary HJB equation."""
    v0 = sol.v0
    grad_sq = gradient(v0).squared_norm().values
    values = -sigma * laplacian(v0).values + 0.5 * kappa * grad_sq + sol.lam
    return v0.with_values(values)


@dataclass(frozen=True)
class ResidualReport:
    hjb: float
    fpk: float

    def to_dict(self) -> dict:
        return {"hjb_residual": self.hjb, "fpk_residual": self.fpk}


def verify_stationary_residual(
    sol: StationarySolution,
    cost: CostModel,
    background: Optional[ScalarField] = None,
) -> ResidualReport:
    """Sup norms of the stationary HJB and FPK residuals at interior nodes.

    ``background`` is subtracted from the HJB residual; pass
    :func:`induced_source` of a seeded baseline to fold its forcing in.
    """
    grid = sol.grid
    v0, m0 = sol.v0, sol.m0
    grad_sq = gradient(v0).squared_norm().values
    hjb = -laplacian(v0).values + 0.5 * grad_sq + sol.lam
    hjb = hjb - cost.running(0, m0.values)
    if background is not None:
        hjb = hjb - level_values(background, 0)
    fpk = -laplacian(m0).values - flux_divergence(1.0, m0, v0).values
    interior = grid.interior_mask
    report = ResidualReport(
        float(np.max(np.abs(hjb[interior]))), float(np.max(np.abs(fpk[interior])))
    )
    logger.info(f"Stationary residuals: hjb {report.hjb:.3e}, fpk {report.fpk:.3e}")
    return report
