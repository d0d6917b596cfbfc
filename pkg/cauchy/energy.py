"""
Running-cost energy from boundary measurements.

Testing the value equation against ``m`` and the density equation against
``v`` and integrating by parts gives

    int_Q F m = B - 1/2 int_Q kappa m |grad v|^2

with the boundary functional

    B = - int v(T) m(T) + int v(0) m(0) - int_S sigma m d_nu v
        + int_S v d_nu(sigma m) + int_S v m kappa d_nu v

computable from a ``MeasurementC1`` alone. On constant-density experiments
``grad v`` vanishes and ``B`` is the energy itself, which determines the
coefficient of a power-law cost.
"""

import logging
from dataclasses import dataclass
from math import factorial
from typing import Union

import numpy as np

from cauchy.measurements import MeasurementC1, extract_c1
from forward.coefficients import CostModel, MFGCoefficients, TimeDependentSolution
from grid.fields import ScalarField, SpaceTimeField, require_same_grid
from grid.mesh import Grid
from grid.operators import integrate_faces, integrate_values
from mfglab.errors import ConfigError, PositivityFloor

logger = logging.getLogger(__name__)


def energy_integral_from_boundary(c1: MeasurementC1, coeffs: MFGCoefficients) -> float:
    """The boundary functional ``B`` of ``c1``; ``coeffs`` supplies the known ``kappa``."""
    grid = c1.grid
    slices = integrate_values(
        grid, c1.v_initial.values * c1.m_initial.values
    ) - integrate_values(grid, c1.v_final.values * c1.m_final.values)
    v, dv = c1.v_trace.values, c1.v_trace.normal_derivatives
    sigma_m, d_sigma_m = c1.sigma_m_trace.values, c1.sigma_m_trace.normal_derivatives
    m = c1.m_trace.values
    momentum = c1.momentum(coeffs)
    lateral = [
        -sm * dvf + vf * dsm + vf * mf * p
        for sm, dvf, vf, dsm, mf, p in zip(sigma_m, dv, v, d_sigma_m, m, momentum)
    ]
    value = float(slices + integrate_faces(grid, lateral, lateral=True))
    logger.debug(f"Boundary energy functional {value:.12g}")
    return value


def running_energy(
    solution: TimeDependentSolution, running: Union[SpaceTimeField, np.ndarray]
) -> float:
    """``int_Q F m`` by space-time quadrature, the volume side of the identity."""
    values = running.values if isinstance(running, SpaceTimeField) else running
    return float(integrate_values(solution.grid, values * solution.m.values))


def transport_defect(solution: TimeDependentSolution, coeffs: MFGCoefficients) -> float:
    """``1/2 int_Q kappa m |grad v|^2``, second order up to the boundary."""
    grid = require_same_grid(solution.v, coeffs)
    grads = np.gradient(
        solution.v.values,
        *grid.spacing,
        axis=tuple(range(1, grid.dim + 1)),
        edge_order=2,
    )
    if grid.dim == 1:
        grads = [grads]
    grad_sq = sum(g**2 for g in grads)
    integrand = 0.5 * coeffs.kappa.values * solution.m.values * grad_sq
    return float(integrate_values(grid, integrand))


def cost_energy(solution: TimeDependentSolution, cost: CostModel) -> float:
    """``int_Q F(m) m`` for a cost model."""
    running = np.stack(
        [cost.running(n, level.values) for n, level in enumerate(solution.m.levels())]
    )
    return running_energy(solution, running)


@dataclass(frozen=True)
class EnergyIdentityCheck:
    boundary: float
    volume: float
    defect: float
    h: float

    @property
    def gap(self) -> float:
        return abs(self.boundary - (self.volume + self.defect))

    @property
    def constant(self) -> float:
        """``gap / h^2``, the reported constant of the second-order agreement."""
        return self.gap / self.h**2

    def to_dict(self) -> dict:
        return {
            "boundary": self.boundary,
            "volume": self.volume,
            "defect": self.defect,
            "gap": self.gap,
            "h": self.h,
            "constant": self.constant,
        }


def check_energy_identity(
    solution: TimeDependentSolution,
    coeffs: MFGCoefficients,
    running: Union[SpaceTimeField, np.ndarray],
) -> EnergyIdentityCheck:
    """Compare ``B`` from the measured traces with the volume oracle."""
    boundary = energy_integral_from_boundary(extract_c1(solution, coeffs), coeffs)
    check = EnergyIdentityCheck(
        boundary,
        running_energy(solution, running),
        transport_defect(solution, coeffs),
        max(solution.grid.spacing),
    )
    logger.info(
        f"Energy identity: boundary {check.boundary:.6e}, volume {check.volume:.6e}, "
        f"defect {check.defect:.6e}, gap {check.gap:.3e}"
    )
    return check


@dataclass(frozen=True)
class PowerLawExperiment:
    """Constant density ``c`` under the running energy ``F m = alpha m^k``.

    ``F = alpha m^(k-1)`` is constant in space, so ``v = alpha c^(k-1) (T - t)``
    and ``m = c`` solve the system with zero terminal cost and ``B`` equals
    ``alpha c^k T |Omega|``.
    """

    grid: Grid
    alpha: float
    k: int
    c: float

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"power must be at least 1, got {self.k}", "k")
        if not self.grid.nt:
            raise ConfigError("power-law experiments need time levels", "grid.nt")

    @property
    def rate(self) -> float:
        return self.alpha * self.c ** (self.k - 1)

    def solution(self) -> TimeDependentSolution:
        grid = self.grid
        remaining = self.grid.horizon - grid.times
        v = np.broadcast_to(
            (self.rate * remaining).reshape((-1,) + (1,) * grid.dim),
            grid.space_time_shape,
        )
        m = np.full(grid.space_time_shape, float(self.c))
        f = ScalarField.constant(grid, self.c)
        return TimeDependentSolution(SpaceTimeField(grid, v), SpaceTimeField(grid, m), f)

    def boundary_data(self):
        return self.solution().boundary_data()

    def cost_model(self) -> CostModel:
        """``F(m) = alpha m^(k-1)`` expanded around the zero density, for ``k >= 2``."""
        if self.k < 2:
            raise ConfigError("a constant running cost has no Taylor coefficient", "k")
        grid = self.grid
        coeffs = [ScalarField.constant(grid, 0.0) for _ in range(self.k - 2)]
        coeffs.append(ScalarField.constant(grid, self.alpha * factorial(self.k - 1)))
        return CostModel(ScalarField.constant(grid, 0.0), coeffs)


def recover_power_coefficient(
    c1: MeasurementC1, coeffs: MFGCoefficients, k: int, c: float
) -> float:
    """``alpha = B / (c^k T |Omega|)`` for a run at constant density ``c``.

    The cost is read as ``F m = alpha m^k``, so ``B = alpha c^k T |Omega|``.
    """
    if k < 1:
        raise ConfigError(f"power must be at least 1, got {k}", "k")
    if c <= 0:
        raise PositivityFloor(f"constant density must be positive, got {c}")
    grid = c1.grid
    energy = energy_integral_from_boundary(c1, coeffs)
    alpha = energy / (c**k * grid.horizon * grid.volume)
    logger.info(f"Recovered power coefficient {alpha:.12g} (k={k}, c={c})")
    return alpha

