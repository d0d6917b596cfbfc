"""
Numerical checks that the linearized solves are derivatives of the forward map.
"""

import json
import logging
from concurrent.futures import Executor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from forward.coefficients import (
    BoundaryData,
    CostModel,
    MFGCoefficients,
    TimeDependentSolution,
)
from forward.solvers import solve_mfg_timedep
from linearize.systems import (
    LinearizedExpansion,
    LinearizedSystem,
    PerturbationInput,
    solve_second_order,
)
from mfglab.options import SolverOptions

logger = logging.getLogger(__name__)

SLOPE_WINDOW = (1.8, 2.2)


@dataclass
class FrechetReport:
    epsilons: List[float]
    errors: List[float]
    slope: Optional[float]
    linear_residual: float
    forward_iterations: List[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        if self.slope is None:
            return max(self.errors, default=0.0) == 0.0
        return SLOPE_WINDOW[0] <= self.slope <= SLOPE_WINDOW[1]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class CrossDerivativeReport:
    epsilon: float
    v_error: float
    m_error: float
    scale: float

    @property
    def relative_error(self) -> float:
        return max(self.v_error, self.m_error) / max(self.scale, 1e-300)

    def to_dict(self) -> dict:
        return {**asdict(self), "relative_error": self.relative_error}


def fitted_slope(epsilons: Sequence[float], errors: Sequence[float]) -> Optional[float]:
    """Least-squares slope of ``log e`` against ``log eps``; None if any e is 0."""
    errors = np.asarray(errors, dtype=float)
    if len(errors) < 2 or np.any(errors <= 0):
        return None
    slope, _ = np.polyfit(np.log(epsilons), np.log(errors), 1)
    return float(slope)


def _sup_gap(*pairs) -> float:
    return max(float(np.max(np.abs(a - b))) for a, b in pairs)


def _map(executor: Optional[Executor], func, items):
    return list(executor.map(func, items) if executor is not None else map(func, items))


def frechet_check(
    base: TimeDependentSolution,
    coeffs: MFGCoefficients,
    cost: CostModel,
    g: BoundaryData,
    h: BoundaryData,
    epsilons: Sequence[float] = (1e-1, 3e-2, 1e-2),
    options: Optional[SolverOptions] = None,
    executor: Optional[Executor] = None,
) -> FrechetReport:
    """Taylor remainder ``e(eps) = |S(eps (g, h)) - S(0) - eps A(g, h)|_sup``.

    The linearization is taken around ``base``; ``S(0)`` is re-solved from its
    data so that a zero perturbation leaves no remainder at all. Perturbed
    problems keep the initial density of ``base`` and add ``eps g``, ``eps h``
    to its boundary values.
    """
    options = options if options is not None else SolverOptions.from_settings()
    g0, h0 = base.boundary_data()
    system = LinearizedSystem(base, coeffs, cost, options)
    first = system.solve(g=g, h=h, order=(1,))

    def perturbed(eps):
        return solve_mfg_timedep(
            coeffs,
            cost,
            base.f,
            g0 + g.scaled(eps),
            h0 + h.scaled(eps),
            options,
            initial=base,
        )

    reference, *solutions = _map(executor, perturbed, [0.0] + list(epsilons))
    errors = []
    for eps, sol in zip(epsilons, solutions):
        errors.append(
            _sup_gap(
                (sol.v.values - reference.v.values, eps * first.v_lin.values),
                (sol.m.values - reference.m.values, eps * first.m_lin.values),
            )
        )
    slope = fitted_slope(epsilons, errors)
    report = FrechetReport(
        [float(e) for e in epsilons],
        errors,
        slope,
        first.residual,
        [sol.picard_iterations for sol in solutions],
    )
    logger.info(f"Frechet check: errors {errors}, slope {slope}")
    return report


def cross_derivative_check(
    base: TimeDependentSolution,
    coeffs: MFGCoefficients,
    cost: CostModel,
    perturbations: PerturbationInput,
    epsilon: float,
    options: Optional[SolverOptions] = None,
    executor: Optional[Executor] = None,
) -> CrossDerivativeReport:
    """Compare the mixed (1, 2) solve with a second difference of the forward map.

    ``[S(e, e) - S(e, 0) - S(0, e) + S(0, 0)] / e^2`` is evaluated with
    the first two perturbation inputs.
    """
    options = options if options is not None else SolverOptions.from_settings()
    g0, h0 = base.boundary_data()
    system = LinearizedSystem(base, coeffs, cost, options)
    expansion = LinearizedExpansion(system, perturbations)
    mixed = solve_second_order(
        base, coeffs, cost, expansion((1,)), expansion((2,)), options
    )

    def solve(amplitudes):
        amplitudes = tuple(amplitudes) + (0.0,) * (len(perturbations.labels) - 2)
        g, h = perturbations.applied_to(g0, h0, amplitudes)
        return solve_mfg_timedep(coeffs, cost, base.f, g, h, options, initial=base)

    both, first_only, second_only = _map(
        executor, solve, [(epsilon, epsilon), (epsilon, 0.0), (0.0, epsilon)]
    )
    scale = epsilon**2

    def second_difference(attr):
        values = [getattr(s, attr).values for s in (both, first_only, second_only)]
        return (values[0] - values[1] - values[2] + getattr(base, attr).values) / scale

    v_error = float(np.max(np.abs(second_difference("v") - mixed.v_lin.values)))
    m_error = float(np.max(np.abs(second_difference("m") - mixed.m_lin.values)))
    size = max(
        float(np.max(np.abs(mixed.v_lin.values))),
        float(np.max(np.abs(mixed.m_lin.values))),
    )
    report = CrossDerivativeReport(float(epsilon), v_error, m_error, size)
    logger.info(f"Cross-derivative check at eps {epsilon}: {report.to_dict()}")
    return report
