"""
Time-dependent solvers for the quadratic MFG system.

The HJB equation is marched backward with implicit Euler steps, each solved
by Newton's method; the Fokker-Planck equation is marched forward with
implicit Euler steps in conservative form. The coupled system is solved by a
damped Picard iteration between the two.
"""

import logging
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from forward.coefficients import (
    BoundaryData,
    CostModel,
    MFGCoefficients,
    TimeDependentSolution,
)
from grid.fields import ScalarField, SpaceTimeField, require_same_grid
from grid.mesh import Grid
from grid.operators import (
    dirichlet_rows,
    flux_matrix,
    integrate_faces,
    integrate_values,
    restrict_to_boundary,
)
from mfglab.errors import (
    BlowUp,
    IncompatibleData,
    MaxIterationsExceeded,
    NegativeDensity,
    NewtonFailure,
)
from mfglab.options import SolverOptions

logger = logging.getLogger(__name__)


def _options(options: Optional[SolverOptions]) -> SolverOptions:
    return options if options is not None else SolverOptions.from_settings()


def _check_bound(values: np.ndarray, bound: float, what: str):
    peak = float(np.max(np.abs(values)))
    if not np.isfinite(peak) or peak > bound:
        logger.error(f"{what} exceeded blow-up bound: {peak:.3e} > {bound:.3e}")
        raise BlowUp(f"{what} exceeded bound {bound:.3e} (max {peak:.3e})")


def _hjb_step(
    grid: Grid,
    v_next: np.ndarray,
    source: np.ndarray,
    sigma: np.ndarray,
    kappa: np.ndarray,
    boundary: np.ndarray,
    options: SolverOptions,
) -> np.ndarray:
    """One implicit step ``(v - v_next)/dt - sigma L v + kappa |G v|^2 / 2 = F``."""
    dt = grid.dt
    lap = grid.laplacian_matrix
    grads = grid.gradient_matrices
    interior = grid.interior_mask.ravel()
    base = sp.identity(grid.size, format="csr") / dt - sp.diags(sigma) @ lap
    v = np.where(interior, v_next, boundary)
    for _ in range(options.newton_max_iter):
        gv = [g @ v for g in grads]
        residual = (
            (v - v_next) / dt
            - sigma * (lap @ v)
            + 0.5 * kappa * sum(c**2 for c in gv)
            - source
        )
        residual = np.where(interior, residual, v - boundary)
        jac = base + sum(sp.diags(kappa * c) @ g for c, g in zip(gv, grads))
        jac = dirichlet_rows(grid, jac)
        delta = spsolve(jac.tocsc(), -residual)
        v = v + delta
        if np.max(np.abs(delta)) <= options.newton_tol * max(1.0, np.max(np.abs(v))):
            return v
    logger.error(f"Newton step stalled with update {np.max(np.abs(delta)):.3e}")
    raise NewtonFailure(
        f"implicit HJB step did not converge in {options.newton_max_iter} iterations"
    )


def solve_hjb_backward(
    coeffs: MFGCoefficients,
    cost: CostModel,
    m: SpaceTimeField,
    g: BoundaryData,
    options: Optional[SolverOptions] = None,
) -> SpaceTimeField:
    """Solve ``-v_t - sigma Lap v + kappa |grad v|^2 / 2 = F(x, t, m)`` backward.

    The terminal level is ``G(x, m(T))`` in the interior and ``g`` on the
    boundary.
    """
    options = _options(options)
    grid = require_same_grid(coeffs, m)
    nt = grid.nt
    shape = grid.shape
    v = np.zeros(grid.space_time_shape)
    interior = grid.interior_mask
    v[nt] = np.where(interior, cost.terminal(m.values[nt]), g.at(nt))
    for n in range(nt - 1, -1, -1):
        step = _hjb_step(
            grid,
            v[n + 1].ravel(),
            cost.running(n, m.values[n]).ravel(),
            coeffs.sigma_at(n).ravel(),
            coeffs.kappa_at(n).ravel(),
            g.at(n).ravel(),
            options,
        )
        v[n] = step.reshape(shape)
        _check_bound(v[n], options.blowup_bound, "value function")
    return SpaceTimeField(grid, v)


def fpk_step_matrix(grid: Grid, sigma: np.ndarray, kappa: np.ndarray, v: np.ndarray):
    """Implicit FPK matrix ``I/dt - L(sigma .) - div(kappa . grad v)`` with Dirichlet rows."""
    eye = sp.identity(grid.size, format="csr")
    mat = (
        eye / grid.dt
        - grid.laplacian_matrix @ sp.diags(sigma.ravel())
        - flux_matrix(grid, kappa, v)
    )
    return dirichlet_rows(grid, mat)


def solve_fpk_forward(
    coeffs: MFGCoefficients,
    v: SpaceTimeField,
    f: ScalarField,
    h: BoundaryData,
    options: Optional[SolverOptions] = None,
) -> SpaceTimeField:
    """Solve ``m_t - Lap(sigma m) - div(kappa m grad v) = 0`` forward from ``f``."""
    options = _options(options)
    grid = require_same_grid(coeffs, v, f)
    interior = grid.interior_mask.ravel()
    m = np.zeros(grid.space_time_shape)
    m[0] = f.values
    for n in range(grid.nt):
        mat = fpk_step_matrix(
            grid, coeffs.sigma_at(n + 1), coeffs.kappa_at(n + 1), v.values[n + 1]
        )
        rhs = np.where(interior, m[n].ravel() / grid.dt, h.at(n + 1).ravel())
        m[n + 1] = spsolve(mat.tocsc(), rhs).reshape(grid.shape)
        _check_bound(m[n + 1], options.blowup_bound, "density")
    nonnegative_data = np.min(f.values) >= 0 and np.min(h.boundary_values()) >= 0
    if nonnegative_data and np.min(m) < -options.negative_density_tol:
        logger.error(f"Density went negative: min {np.min(m):.3e}")
        raise NegativeDensity(f"density reached {np.min(m):.3e} for nonnegative data")
    return SpaceTimeField(grid, m)


def initial_guess(
    f: ScalarField, g: BoundaryData, h: BoundaryData
) -> Tuple[SpaceTimeField, SpaceTimeField]:
    """Zero value function and frozen initial density, both lifted to the data."""
    grid = f.grid
    boundary = grid.boundary_mask
    v = np.where(boundary, g.values, 0.0)
    m = np.where(boundary, h.values, np.broadcast_to(f.values, grid.space_time_shape))
    return SpaceTimeField(grid, v), SpaceTimeField(grid, m)


def solve_mfg_timedep(
    coeffs: MFGCoefficients,
    cost: CostModel,
    f: ScalarField,
    g: BoundaryData,
    h: BoundaryData,
    options: Optional[SolverOptions] = None,
    initial: Optional[TimeDependentSolution] = None,
) -> TimeDependentSolution:
    """Damped Picard iteration between the backward HJB and forward FPK solves.

    Each sweep recomputes ``v`` from the current density, then relaxes the
    density towards the FPK solution driven by the new ``v``. Stops once the
    sup norm of the sweep update drops below ``options.tol``.
    """
    options = _options(options)
    if initial is not None:
        v, m = initial.v, initial.m
    else:
        v, m = initial_guess(f, g, h)
    history = []
    for iteration in range(1, options.max_iter + 1):
        v_new = solve_hjb_backward(coeffs, cost, m, g, options)
        m_new = solve_fpk_forward(coeffs, v_new, f, h, options)
        update = max(
            float(np.max(np.abs(v_new.values - v.values))),
            float(np.max(np.abs(m_new.values - m.values))),
        )
        history.append(update)
        logger.debug(f"Picard sweep {iteration}: update {update:.3e}")
        v = v_new
        if update < options.tol:
            logger.info(
                f"Forward MFG solve converged in {iteration} sweeps "
                f"(update {update:.3e})"
            )
            return TimeDependentSolution(v, m_new, f, iteration, update, history)
        m = m.with_values(options.theta * m_new.values + (1 - options.theta) * m.values)
    logger.error(f"Picard iteration hit {options.max_iter} sweeps")
    raise MaxIterationsExceeded("forward MFG Picard iteration did not converge", update)


def check_compatibility(
    cost: CostModel,
    f: ScalarField,
    g: BoundaryData,
    h: BoundaryData,
    tol: float = 1e-10,
):
    """Reject data violating the corner conditions ``h(0) = f`` and ``g(T) = G(h(T))``.

    Only boundary nodes are compared; the data are not repaired.
    """
    grid = f.grid
    bidx = grid.boundary_indices
    scale = 1.0 + float(np.max(np.abs(f.values)))
    initial_gap = np.max(np.abs(h.at(0).ravel()[bidx] - f.values.ravel()[bidx]))
    if initial_gap > tol * scale:
        raise IncompatibleData(
            f"initial density differs from boundary density by {initial_gap:.3e}"
        )
    terminal = cost.terminal(h.at(grid.nt)).ravel()[bidx]
    terminal_gap = np.max(np.abs(g.at(grid.nt).ravel()[bidx] - terminal))
    if terminal_gap > tol * (1.0 + float(np.max(np.abs(terminal)))):
        raise IncompatibleData(
            f"terminal value data differ from G(x, m(T)) by {terminal_gap:.3e}"
        )


def mass_balance(coeffs: MFGCoefficients, solution: TimeDependentSolution):
    """Per-step mass change against the boundary flux of the density.

    Returns ``(dM/dt, flux)`` arrays of length ``nt``; the flux at step ``n``
    is ``int_S d_nu(sigma m) + kappa m d_nu v`` at level ``n + 1``.
    """
    grid = solution.grid
    masses = np.array([integrate_values(grid, lvl.values) for lvl in solution.m.levels()])
    rates = np.diff(masses) / grid.dt
    sigma_m = SpaceTimeField(grid, coeffs.sigma.values * solution.m.values)
    trace_sm = restrict_to_boundary(sigma_m)
    trace_v = restrict_to_boundary(solution.v)
    trace_m = restrict_to_boundary(solution.m)
    trace_k = restrict_to_boundary(coeffs.kappa)
    flux = []
    for n in range(1, grid.nt + 1):
        arrays = [
            dsm[n] + k[n] * mv[n] * dv[n]
            for dsm, k, mv, dv in zip(
                trace_sm.normal_derivatives,
                trace_k.values,
                trace_m.values,
                trace_v.normal_derivatives,
            )
        ]
        flux.append(integrate_faces(grid, arrays))
    return rates, np.array(flux)
