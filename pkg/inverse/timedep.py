"""
Terminal and higher-order costs from perturbation archives.

All fits share one pattern: the unknown coefficient is expanded in coarse
hats, each hat is pushed through the linearized system as a source, and the
resulting Neumann traces form the columns of a least-squares system whose
right-hand side is the measured trace minus the response to everything
already known. The systems are linearized around a known base solution
whose density is also the expansion density of the costs.
"""

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from cauchy.measurements import ExperimentRecord, MeasurementC3
from forward.coefficients import CostModel, MFGCoefficients, TimeDependentSolution
from grid.fields import ScalarField, SpaceTimeField, require_same_grid
from grid.mesh import Grid
from grid.operators import restrict_to_boundary
from inverse.leastsq import HatBasis, TikhonovFit, stack_columns, tikhonov_solve
from linearize.systems import (
    LinearizedExpansion,
    LinearizedSolution,
    LinearizedSystem,
    Sources,
    mixed_sources,
)
from mfglab.errors import ArchiveError, ProductDegeneracy
from mfglab.options import RecoveryOptions, SolverOptions

logger = logging.getLogger(__name__)

METHOD = "direct"


def neumann_data(solution: LinearizedSolution) -> np.ndarray:
    """Outward derivatives of ``v`` and ``m`` at every level, flattened."""
    return np.concatenate(
        [
            restrict_to_boundary(solution.v_lin).flat(derivatives_only=True),
            restrict_to_boundary(solution.m_lin).flat(derivatives_only=True),
        ]
    )


def measured_neumann(record: ExperimentRecord) -> np.ndarray:
    return np.concatenate(
        [
            record.v_trace.flat(derivatives_only=True),
            record.m_trace.flat(derivatives_only=True),
        ]
    )


def _map(executor: Optional[Executor], func: Callable, items: Sequence):
    return list(executor.map(func, items) if executor is not None else map(func, items))


def _extend_to_boundary(grid: Grid, values: np.ndarray, timed: bool) -> np.ndarray:
    """Replace boundary values by those of the nearest interior node."""
    inner = tuple(slice(1, -1) for _ in range(grid.dim))
    if timed:
        pad = [(0, 0)] + [(1, 1)] * grid.dim
        return np.pad(values[(slice(None),) + inner], pad, mode="edge")
    return np.pad(values[inner], 1, mode="edge")


def _interior_hats(basis: HatBasis, grid: Grid) -> List[np.ndarray]:
    hats = [basis.function(j) * grid.interior_mask for j in range(basis.size)]
    return [hat for hat in hats if np.any(hat)]


def _synthesize(hats: Sequence[np.ndarray], coefficients: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape)
    for c, hat in zip(coefficients, hats):
        out = out + c * hat
    return out


def _first_order_records(c3: MeasurementC3) -> List[ExperimentRecord]:
    records = sorted(c3.of_order(1), key=lambda r: r.labels)
    if not records:
        raise ArchiveError("archive holds no first-order perturbation records")
    return records


@dataclass
class TerminalFit:
    G1: ScalarField
    fit: TikhonovFit
    iterations: int
    steps: List[float] = field(default_factory=list)
    misfit: float = 0.0

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "steps": self.steps,
            "misfit": self.misfit,
            "fit": self.fit.to_dict(),
        }


def terminal_misfit(
    c3: MeasurementC3,
    base: TimeDependentSolution,
    coeffs: MFGCoefficients,
    F1,
    G1: ScalarField,
    options: Optional[SolverOptions] = None,
) -> float:
    """Largest Neumann misfit of the first-order records under ``(F1, G1)``."""
    system = LinearizedSystem.first_order(base, coeffs, F1, G1, options)
    worst = 0.0
    for record in _first_order_records(c3):
        g, h = record.boundary_data()
        predicted = neumann_data(system.solve(g=g, h=h, method=METHOD))
        worst = max(worst, float(np.max(np.abs(measured_neumann(record) - predicted))))
    return worst


def recover_terminal_linear(
    c3: MeasurementC3,
    base: TimeDependentSolution,
    coeffs: MFGCoefficients,
    F1,
    options: Optional[RecoveryOptions] = None,
    solver_options: Optional[SolverOptions] = None,
    executor: Optional[Executor] = None,
) -> TerminalFit:
    """``G1`` by Gauss-Newton steps on the first-order records.

    ``v(T) = G1 m(T)`` makes the traces depend on ``G1`` through ``m(T)`` as
    well, so each step solves the system coupled by the current ``G1`` with
    terminal sources ``phi_j m(T)`` for the hats ``phi_j``.
    """
    options = options if options is not None else RecoveryOptions.from_settings()
    grid = require_same_grid(c3, base.v, coeffs)
    hats = _interior_hats(HatBasis.spatial(grid, options.coarsening), grid)
    records = _first_order_records(c3)
    data = [record.boundary_data() for record in records]
    measured = [measured_neumann(record) for record in records]
    coefficients = np.zeros(len(hats))
    steps: List[float] = []
    fit = None
    iteration = 0
    for iteration in range(1, options.max_iter + 1):
        G1 = ScalarField(grid, _synthesize(hats, coefficients, grid.shape))
        system = LinearizedSystem.first_order(base, coeffs, F1, G1, solver_options)
        states = [system.solve(g=g, h=h, method=METHOD) for g, h in data]
        residual = np.concatenate(
            [y - neumann_data(state) for y, state in zip(measured, states)]
        )
        zeros = Sources.zeros(grid)

        def column(job):
            state, hat = job
            terminal = hat * state.m_lin.values[grid.nt]
            sources = Sources(zeros.hjb, zeros.fpk, terminal)
            return neumann_data(system.solve(sources, method=METHOD))

        blocks = []
        for state in states:
            blocks.append(stack_columns(_map(executor, column, [(state, hat) for hat in hats])))
        fit = tikhonov_solve(
            np.vstack(blocks),
            residual,
            options.tikhonov_weight,
            options.degenerate_fraction,
        )
        coefficients = coefficients + fit.coefficients
        step = float(np.linalg.norm(fit.coefficients))
        steps.append(step)
        logger.debug(f"Terminal fit step {iteration}: |step| {step:.3e}")
        if step <= 1e-10 * max(1.0, float(np.linalg.norm(coefficients))):
            break
    values = _extend_to_boundary(grid, _synthesize(hats, coefficients, grid.shape), False)
    G1 = ScalarField(grid, values)
    misfit = terminal_misfit(c3, base, coeffs, F1, G1, solver_options)
    logger.info(
        f"Recovered G1 on {len(hats)} hats in {iteration} steps (misfit {misfit:.3e})"
    )
    return TerminalFit(G1, fit, iteration, steps, misfit)


@dataclass
class HigherOrderFit:
    order: int
    F: SpaceTimeField
    G: ScalarField
    fit: TikhonovFit
    degenerate_fraction: float
    records: int

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "records": self.records,
            "degenerate_fraction": self.degenerate_fraction,
            "fit": self.fit.to_dict(),
        }


def truncated(cost: CostModel, order: int) -> CostModel:
    """``cost`` without its coefficients of order ``order`` and above."""
    return cost.with_coefficients(
        F_coeffs=cost.F_coeffs[: order - 1], G_coeffs=cost.G_coeffs[: order - 1]
    )


def _padded(coeffs: Sequence, order: int, zero) -> List:
    out = list(coeffs[: order - 1])
    while len(out) < order - 1:
        out.append(zero)
    return out


def with_order(cost: CostModel, order: int, F, G) -> CostModel:
    """``cost`` truncated below ``order`` and extended by ``F``, ``G`` at ``order``."""
    zero = ScalarField.constant(cost.grid, 0.0)
    return cost.with_coefficients(
        F_coeffs=_padded(cost.F_coeffs, order, zero) + [F],
        G_coeffs=_padded(cost.G_coeffs, order, zero) + [G],
    )


def density_products(
    expansion: LinearizedExpansion, records: Sequence[ExperimentRecord]
) -> List[np.ndarray]:
    """``prod_l m^(l)`` over the labels of each record."""
    products = []
    for record in records:
        joint = np.ones(expansion.system.grid.space_time_shape)
        for label in record.labels:
            joint = joint * expansion.solution((label,)).m_lin.values
        products.append(joint)
    return products


def degenerate_share(grid: Grid, products: Sequence[np.ndarray], floor: float) -> float:
    """Share of interior nodes after ``t = 0`` where every product is below the floor."""
    largest = np.max(np.abs(np.stack(products)), axis=0)[1:]
    scale = float(np.max(largest)) if largest.size else 0.0
    interior = np.broadcast_to(grid.interior_mask, largest.shape)
    if scale == 0:
        return 1.0
    return float(np.mean(largest[interior] < floor * scale))


def recover_higher_order(
    c3: MeasurementC3,
    base: TimeDependentSolution,
    coeffs: MFGCoefficients,
    known: CostModel,
    order: int,
    options: Optional[RecoveryOptions] = None,
    solver_options: Optional[SolverOptions] = None,
    executor: Optional[Executor] = None,
) -> HigherOrderFit:
    """``F_k`` and ``G_k`` from the order-``k`` records, all lower orders known.

    The products ``prod m^(l)`` of the first-order densities multiply the
    unknowns in the sources of the order-``k`` system, so the hats are pushed
    through with ``psi_j prod m^(l)`` as running and ``phi_j prod m^(l)(T)`` as
    terminal source, record by record.
    """
    options = options if options is not None else RecoveryOptions.from_settings()
    if order < 2:
        raise ValueError(f"higher-order recovery needs order >= 2, got {order}")
    grid = require_same_grid(c3, base.v, coeffs, known)
    records = sorted(c3.of_order(order), key=lambda r: r.labels)
    if not records:
        raise ArchiveError(f"archive holds no order-{order} perturbation records")
    system = LinearizedSystem(base, coeffs, truncated(known, order), solver_options)
    expansion = LinearizedExpansion(system, c3.perturbation_input(), METHOD)
    products = density_products(expansion, records)
    share = degenerate_share(grid, products, options.positivity_floor)
    if share > options.degenerate_fraction:
        raise ProductDegeneracy(
            f"first-order densities multiply to nearly zero on {share:.0%} of the "
            f"cylinder; choose other perturbation inputs"
        )

    running_hats = _interior_hats(HatBasis.space_time(grid, options.coarsening), grid)
    terminal_hats = _interior_hats(HatBasis.spatial(grid, options.coarsening), grid)
    zero_st = np.zeros(grid.space_time_shape)
    zero_terminal = np.zeros(grid.shape)

    def column(job):
        kind, hat, product = job
        if kind == "F":
            sources = Sources(hat * product, zero_st, zero_terminal)
        else:
            sources = Sources(zero_st, zero_st, hat * product[grid.nt])
        return neumann_data(system.solve(sources, method=METHOD))

    blocks, residuals = [], []
    for record, product in zip(records, products):
        known_sources = mixed_sources(system, record.labels, expansion.solution)
        response = system.solve(known_sources, method=METHOD, order=record.labels)
        residuals.append(measured_neumann(record) - neumann_data(response))
        jobs = [("F", hat, product) for hat in running_hats]
        jobs += [("G", hat, product) for hat in terminal_hats]
        blocks.append(stack_columns(_map(executor, column, jobs)))
    fit = tikhonov_solve(
        np.vstack(blocks),
        np.concatenate(residuals),
        options.tikhonov_weight,
        options.degenerate_fraction,
    )
    split = len(running_hats)
    F_values = _synthesize(running_hats, fit.coefficients[:split], grid.space_time_shape)
    G_values = _synthesize(terminal_hats, fit.coefficients[split:], grid.shape)
    result = HigherOrderFit(
        order,
        SpaceTimeField(grid, _extend_to_boundary(grid, F_values, True)),
        ScalarField(grid, _extend_to_boundary(grid, G_values, False)),
        fit,
        share,
        len(records),
    )
    logger.info(
        f"Recovered order-{order} costs from {len(records)} records "
        f"({split} running and {len(terminal_hats)} terminal hats, "
        f"residual {fit.residual:.3e})"
    )
    return result


def round_trip_residual(
    c3: MeasurementC3,
    base: TimeDependentSolution,
    coeffs: MFGCoefficients,
    cost: CostModel,
    order: int,
    solver_options: Optional[SolverOptions] = None,
) -> float:
    """L2 misfit of the order-``order`` records re-simulated under ``cost``."""
    system = LinearizedSystem(base, coeffs, cost, solver_options)
    expansion = LinearizedExpansion(system, c3.perturbation_input(), METHOD)
    gaps = [
        measured_neumann(record) - neumann_data(expansion.solution(record.labels))
        for record in c3.of_order(order)
    ]
    return float(np.linalg.norm(np.concatenate(gaps))) if gaps else 0.0
