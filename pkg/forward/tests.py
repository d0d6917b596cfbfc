from unittest.mock import patch

import numpy as np
from django.test import SimpleTestCase

from forward.coefficients import (
    BoundaryData,
    CostModel,
    MFGCoefficients,
    TimeDependentSolution,
)
from forward.solvers import (
    check_compatibility,
    mass_balance,
    solve_fpk_forward,
    solve_hjb_backward,
    solve_mfg_timedep,
)
from forward.stationary import (
    build_stationary_baseline,
    induced_source,
    verify_stationary_residual,
)
from grid.fields import ScalarField, SpaceTimeField
from grid.mesh import GridSpec, build_grid
from grid.operators import gradient
from mfglab.errors import (
    BlowUp,
    ConfigError,
    IncompatibleData,
    MaxIterationsExceeded,
    NegativeDensity,
)
from mfglab.options import SolverOptions

PI = np.pi


def line(n, nt=0, horizon=1.0):
    return build_grid(GridSpec(1, [(0.0, 1.0)], [n], nt, horizon))


def fitted_order(spacings, errors):
    return np.polyfit(np.log(spacings), np.log(errors), 1)[0]


def manufactured_value(x, t):
    return np.exp(-t) * np.cos(PI * x)


def manufactured_hjb_source(x, t):
    return (
        (1 + PI**2) * np.exp(-t) * np.cos(PI * x)
        + 0.5 * PI**2 * np.exp(-2 * t) * np.sin(PI * x) ** 2
    )


def perturbed_problem(grid, eps):
    """Constant baseline with F = (m - 1), G = (m - 1)/2 and data of size eps."""
    m0 = ScalarField.constant(grid, 1.0)
    cost = CostModel(
        m0, [ScalarField.constant(grid, 1.0)], [ScalarField.constant(grid, 0.5)]
    )
    g = BoundaryData.from_function(grid, lambda x, t: eps * 0.5 * t * (1 + x))
    h = BoundaryData.from_function(grid, lambda x, t: 1 + eps * t * (1 + x))
    return cost, m0, g, h


class CoefficientTests(SimpleTestCase):
    """Test coefficient and cost containers."""

    def test_rejects_nonpositive_sigma(self):
        """Test that a vanishing diffusion coefficient is rejected."""
        grid = line(5, nt=4)
        with self.assertRaises(ConfigError):
            MFGCoefficients.constant(grid, sigma=0.0)

    def test_cost_vanishes_at_expansion_density(self):
        """Test F and G vanish at m0."""
        grid = line(5, nt=4)
        m0 = ScalarField.constant(grid, 0.7)
        F1 = ScalarField.constant(grid, 2.0)
        cost = CostModel(m0, [F1, F1], [F1])
        np.testing.assert_allclose(cost.running(2, m0.values), 0.0)
        np.testing.assert_allclose(cost.terminal(m0.values), 0.0)

    def test_taylor_series_evaluation(self):
        """Test F = F1 dm + F2 dm^2 / 2 at a sample density."""
        grid = line(5, nt=4)
        m0 = ScalarField.constant(grid, 1.0)
        cost = CostModel(
            m0, [ScalarField.constant(grid, 3.0), ScalarField.constant(grid, 4.0)]
        )
        m = np.full(grid.shape, 1.5)
        np.testing.assert_allclose(cost.running(0, m), 3.0 * 0.5 + 4.0 * 0.25 / 2)

    def test_boundary_data_ignores_interior(self):
        """Test boundary data keep only boundary node values."""
        grid = line(5, nt=2)
        data = BoundaryData.constant(grid, 2.0)
        self.assertEqual(data.at(1)[0], 2.0)
        self.assertEqual(data.at(1)[3], 0.0)


class HJBTests(SimpleTestCase):
    """Test the backward HJB solver."""

    def test_zero_data_gives_zero(self):
        """Test zero costs and zero boundary data give v = 0."""
        grid = line(8, nt=5)
        coeffs = MFGCoefficients.constant(grid)
        cost = CostModel.zero(grid)
        m = SpaceTimeField.constant(grid, 3.0)
        v = solve_hjb_backward(coeffs, cost, m, BoundaryData.zero(grid))
        np.testing.assert_allclose(v.values, 0.0, atol=1e-14)

    def test_manufactured_solution_second_order(self):
        """Test the HJB solver converges at order two on a manufactured solution."""
        horizon = 0.25
        spacings, errors = [], []
        for n in (7, 15, 31):
            h = 1.0 / (n + 1)
            grid = line(n, nt=int(round(horizon / h**2)), horizon=horizon)
            coeffs = MFGCoefficients.constant(grid)
            source = SpaceTimeField.from_function(grid, manufactured_hjb_source)
            exact = SpaceTimeField.from_function(grid, manufactured_value)
            cost = CostModel(
                ScalarField.constant(grid, 0.0), [source], [exact.final]
            )
            m = SpaceTimeField.constant(grid, 1.0)
            v = solve_hjb_backward(coeffs, cost, m, BoundaryData.from_field(exact))
            errors.append(np.max(np.abs(v.values - exact.values)))
            spacings.append(h)
        self.assertAlmostEqual(fitted_order(spacings, errors), 2.0, delta=0.3)

    def test_terminal_condition_assigned(self):
        """Test v(T) equals G(x, m(T)) exactly at interior nodes."""
        grid = line(6, nt=3)
        coeffs = MFGCoefficients.constant(grid)
        m0 = ScalarField.constant(grid, 0.2)
        G1 = ScalarField.from_function(grid, lambda x: 1 + x)
        cost = CostModel(m0, [ScalarField.constant(grid, 0.3)], [G1])
        m = SpaceTimeField.constant(grid, 0.7)
        v = solve_hjb_backward(coeffs, cost, m, BoundaryData.zero(grid))
        interior = grid.interior_mask
        np.testing.assert_array_equal(
            v.final.values[interior], (G1.values * 0.5)[interior]
        )

    def test_blow_up_detected(self):
        """Test values beyond the configured bound raise BlowUp."""
        grid = line(6, nt=3)
        coeffs = MFGCoefficients.constant(grid)
        options = SolverOptions(blowup_bound=1e-3)
        with self.assertRaises(BlowUp):
            solve_hjb_backward(
                coeffs,
                CostModel.zero(grid),
                SpaceTimeField.constant(grid, 1.0),
                BoundaryData.constant(grid, 1.0),
                options,
            )


class FPKTests(SimpleTestCase):
    """Test the forward Fokker-Planck solver."""

    def test_uniform_density_is_steady(self):
        """Test a uniform density with zero drift stays uniform."""
        grid = build_grid(GridSpec(2, [(0, 1), (0, 1)], [6, 6], nt=5))
        coeffs = MFGCoefficients.constant(grid)
        m = solve_fpk_forward(
            coeffs,
            SpaceTimeField.zeros(grid),
            ScalarField.constant(grid, 1.0),
            BoundaryData.constant(grid, 1.0),
        )
        np.testing.assert_allclose(m.values, 1.0, atol=1e-12)

    def test_spatially_constant_value_has_no_drift(self):
        """Test a value function constant in x leaves the heat evolution."""
        grid = line(10, nt=8)
        coeffs = MFGCoefficients.constant(grid)
        f = ScalarField.from_function(grid, lambda x: 1 + 0.5 * np.cos(PI * x))
        h = BoundaryData.from_function(grid, lambda x, t: 1 + 0.5 * np.cos(PI * x))
        heat = solve_fpk_forward(coeffs, SpaceTimeField.zeros(grid), f, h)
        drifted = solve_fpk_forward(
            coeffs, SpaceTimeField.from_function(grid, lambda x, t: 3 * t + 0 * x), f, h
        )
        np.testing.assert_allclose(drifted.values, heat.values, atol=1e-12)

    def test_manufactured_heat_solution_second_order(self):
        """Test the FPK solver converges at order two on a heat solution."""
        horizon = 0.1
        spacings, errors = [], []
        for n in (7, 15, 31):
            h = 1.0 / (n + 1)
            grid = line(n, nt=int(round(horizon / h**2)), horizon=horizon)
            exact = SpaceTimeField.from_function(
                grid, lambda x, t: 1 + np.exp(-(PI**2) * t) * np.cos(PI * x)
            )
            m = solve_fpk_forward(
                MFGCoefficients.constant(grid),
                SpaceTimeField.zeros(grid),
                exact.initial,
                BoundaryData.from_field(exact),
            )
            errors.append(np.max(np.abs(m.values - exact.values)))
            spacings.append(h)
        self.assertAlmostEqual(fitted_order(spacings, errors), 2.0, delta=0.3)

    def test_negative_density_alarm(self):
        """Test a negative density for nonnegative data raises the alarm."""
        grid = line(5, nt=2)
        with patch("forward.solvers.spsolve", return_value=-np.ones(grid.size)):
            with self.assertRaises(NegativeDensity):
                solve_fpk_forward(
                    MFGCoefficients.constant(grid),
                    SpaceTimeField.zeros(grid),
                    ScalarField.constant(grid, 1.0),
                    BoundaryData.constant(grid, 1.0),
                )

    def test_mass_balance(self):
        """Test the mass change tracks the boundary flux to O(h^2)."""
        grid = line(31, nt=40, horizon=0.1)
        exact = SpaceTimeField.from_function(
            grid, lambda x, t: 1 + np.exp(-(PI**2) * t) * np.sin(PI * x)
        )
        coeffs = MFGCoefficients.constant(grid)
        m = solve_fpk_forward(
            coeffs,
            SpaceTimeField.zeros(grid),
            exact.initial,
            BoundaryData.from_field(exact),
        )
        solution = TimeDependentSolution(SpaceTimeField.zeros(grid), m, exact.initial)
        rates, flux = mass_balance(coeffs, solution)
        self.assertLess(np.max(np.abs(rates - flux)), 5e-2 * np.max(np.abs(flux)))


class PicardTests(SimpleTestCase):
    """Test the coupled forward-backward iteration."""

    def setUp(self):
        self.grid = line(15, nt=20)
        self.coeffs = MFGCoefficients.constant(self.grid)

    def test_stable_solution_traces_converge_in_one_sweep(self):
        """Test the constant baseline is reproduced in a single sweep."""
        cost, m0, g, h = perturbed_problem(self.grid, 0.0)
        sol = solve_mfg_timedep(self.coeffs, cost, m0, g, h)
        self.assertEqual(sol.picard_iterations, 1)
        np.testing.assert_allclose(sol.m.values, 1.0, atol=1e-12)
        np.testing.assert_allclose(sol.v.values, 0.0, atol=1e-12)

    def test_distance_is_linear_in_perturbation(self):
        """Test the solution moves O(eps) away from the baseline."""
        distances = []
        epsilons = [1e-2, 1e-3]
        for eps in epsilons:
            cost, m0, g, h = perturbed_problem(self.grid, eps)
            sol = solve_mfg_timedep(self.coeffs, cost, m0, g, h)
            distances.append(
                max(np.max(np.abs(sol.v.values)), np.max(np.abs(sol.m.values - 1)))
            )
        self.assertAlmostEqual(fitted_order(epsilons, distances), 1.0, delta=0.2)

    def test_damping_does_not_change_solution(self):
        """Test two damping weights reach the same fixed point."""
        cost, m0, g, h = perturbed_problem(self.grid, 1e-2)
        tol = 1e-10
        a = solve_mfg_timedep(
            self.coeffs, cost, m0, g, h, SolverOptions(theta=0.5, tol=tol)
        )
        b = solve_mfg_timedep(
            self.coeffs, cost, m0, g, h, SolverOptions(theta=0.8, tol=tol)
        )
        np.testing.assert_allclose(a.v.values, b.v.values, atol=10 * tol)
        np.testing.assert_allclose(a.m.values, b.m.values, atol=10 * tol)

    def test_update_norms_decrease(self):
        """Test Picard updates decrease after the first sweep."""
        cost, m0, g, h = perturbed_problem(self.grid, 1e-2)
        sol = solve_mfg_timedep(self.coeffs, cost, m0, g, h)
        history = sol.update_history[1:]
        self.assertTrue(all(b < a for a, b in zip(history, history[1:])))
        self.assertLess(sol.final_update_norm, 1e-8)

    def test_iteration_cap(self):
        """Test the iteration cap raises with the last update norm."""
        cost, m0, g, h = perturbed_problem(self.grid, 1e-2)
        with self.assertRaises(MaxIterationsExceeded) as ctx:
            solve_mfg_timedep(self.coeffs, cost, m0, g, h, SolverOptions(max_iter=1))
        self.assertGreater(ctx.exception.last_update_norm, 0.0)

    def test_incompatible_initial_corner(self):
        """Test boundary density inconsistent with f at t=0 is rejected."""
        cost, m0, g, _ = perturbed_problem(self.grid, 1e-2)
        h = BoundaryData.constant(self.grid, 2.0)
        with self.assertRaises(IncompatibleData):
            check_compatibility(cost, m0, g, h)

    def test_compatible_data_accepted(self):
        """Test the perturbed data pass the corner checks."""
        cost, m0, g, h = perturbed_problem(self.grid, 1e-2)
        check_compatibility(cost, m0, g, h)


class StationaryTests(SimpleTestCase):
    """Test the stationary baseline and residual report."""

    def test_constant_baseline(self):
        """Test the unseeded baseline is v0 = 0, m0 = 1, lambda = 0."""
        grid = build_grid(GridSpec(2, [(0, 1), (0, 1)], [5, 5]))
        sol = build_stationary_baseline(grid)
        np.testing.assert_array_equal(sol.v0.values, 0.0)
        np.testing.assert_allclose(sol.m0.values, 1.0)
        self.assertEqual(sol.lam, 0.0)

    def test_seeded_baseline_normalization(self):
        """Test the seeded baseline has unit mass and satisfies the Gibbs relation."""
        grid = line(31)
        seed = ScalarField.from_function(grid, lambda x: np.cos(PI * x))
        sol = build_stationary_baseline(grid, seed)
        self.assertAlmostEqual(sol.mass(), 1.0, delta=1e-12)
        self.assertLessEqual(sol.gibbs_gap(), 1e-10)

    def test_seeded_baseline_gradient_relation(self):
        """Test grad m0 + m0 grad v0 vanishes at order two under refinement."""
        gaps = []
        for n in (31, 63):
            grid = line(n)
            seed = ScalarField.from_function(grid, lambda x: np.cos(PI * x))
            sol = build_stationary_baseline(grid, seed)
            grad_m = gradient(sol.m0).components[0]
            grad_v = gradient(sol.v0).components[0]
            gaps.append(np.max(np.abs(grad_m + sol.m0.values * grad_v)))
        self.assertGreater(gaps[0] / gaps[1], 3.0)

    def test_constant_baseline_residuals(self):
        """Test the constant baseline has vanishing residuals."""
        grid = line(8)
        sol = build_stationary_baseline(grid)
        report = verify_stationary_residual(sol, CostModel.zero(grid, sol.m0))
        self.assertLessEqual(report.hjb, 1e-12)
        self.assertLessEqual(report.fpk, 1e-12)

    def test_seeded_residual_after_folding(self):
        """Test folding the induced source removes the HJB residual."""
        grid = line(15)
        seed = ScalarField.from_function(grid, lambda x: 0.3 * np.cos(PI * x))
        sol = build_stationary_baseline(grid, seed)
        report = verify_stationary_residual(
            sol, CostModel.zero(grid, sol.m0), background=induced_source(sol)
        )
        self.assertLessEqual(report.hjb, 1e-10)

    def test_random_field_flags_non_equilibrium(self):
        """Test a random value function gives a large residual."""
        grid = line(15)
        rng = np.random.default_rng(3)
        seed = ScalarField(grid, rng.normal(size=grid.shape))
        sol = build_stationary_baseline(grid, seed)
        report = verify_stationary_residual(sol, CostModel.zero(grid, sol.m0))
        self.assertGreater(report.hjb, 0.1)
