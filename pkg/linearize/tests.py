import json

import numpy as np
import pytest
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from forward.coefficients import BoundaryData, CostModel, MFGCoefficients
from forward.solvers import solve_mfg_timedep
from forward.stationary import build_stationary_baseline
from grid.fields import ScalarField
from grid.mesh import GridSpec, build_grid
from grid.operators import laplacian
from linearize.frechet import cross_derivative_check, fitted_slope, frechet_check
from linearize.partitions import proper_subsets, set_partitions
from linearize.stationary import (
    gibbs_value_data,
    reduce_to_scalar,
    solve_first_order_stationary,
    solve_reduced,
)
from linearize.systems import (
    LinearizedExpansion,
    LinearizedSystem,
    PerturbationInput,
    check_linear_compatibility,
    solve_first_order,
    solve_order,
    solve_second_order,
)
from mfglab.errors import IncompatibleData, StabilityViolation
from mfglab.options import SolverOptions

PI = np.pi
BELL = {1: 1, 2: 2, 3: 5, 4: 15}
TIGHT = SolverOptions(tol=1e-12, newton_tol=1e-13, max_iter=400)


def line(n, nt=0, horizon=1.0):
    return build_grid(GridSpec(1, [(0.0, 1.0)], [n], nt, horizon))


def baseline_problem(grid, F2=0.0):
    """Unit density with F = (m - 1) + F2 (m - 1)^2 / 2 and G = (m - 1) / 2."""
    m0 = ScalarField.constant(grid, 1.0)
    F = [ScalarField.constant(grid, 1.0)]
    if F2:
        F.append(ScalarField.constant(grid, F2))
    cost = CostModel(m0, F, [ScalarField.constant(grid, 0.5)])
    coeffs = MFGCoefficients.constant(grid)
    base = solve_mfg_timedep(
        coeffs, cost, m0, BoundaryData.zero(grid), BoundaryData.constant(grid, 1.0), TIGHT
    )
    return coeffs, cost, base


def first_perturbation(grid):
    g = BoundaryData.from_function(grid, lambda x, t: 0.5 * t * (1 + x))
    h = BoundaryData.from_function(grid, lambda x, t: t * (1 + x))
    return g, h


def second_perturbation(grid):
    g = BoundaryData.from_function(grid, lambda x, t: 0.5 * t * (2 - x))
    h = BoundaryData.from_function(grid, lambda x, t: t * (2 - x))
    return g, h


class PartitionTests(SimpleTestCase):
    """Test the combinatorics behind the higher-order sources."""

    def test_partition_counts_are_bell_numbers(self):
        """Test the number of set partitions of n positions."""
        for n, count in BELL.items():
            self.assertEqual(len(list(set_partitions(range(n)))), count)

    def test_partitions_cover_every_position_once(self):
        """Test each partition is a disjoint cover."""
        for partition in set_partitions(range(4)):
            flat = sorted(p for block in partition for p in block)
            self.assertEqual(flat, [0, 1, 2, 3])

    @given(st.integers(min_value=2, max_value=5))
    def test_proper_subset_count(self, n):
        """Test there are 2^n - 2 ordered splits into a proper subset and its rest."""
        splits = list(proper_subsets(range(n)))
        self.assertEqual(len(splits), 2**n - 2)
        for a, b in splits:
            self.assertEqual(sorted(a + b), list(range(n)))


class FirstOrderTests(SimpleTestCase):
    """Test the first-order linearized forward-backward solve."""

    def setUp(self):
        self.grid = line(11, nt=12)
        self.coeffs, self.cost, self.base = baseline_problem(self.grid)
        self.system = LinearizedSystem(self.base, self.coeffs, self.cost, TIGHT)
        self.g, self.h = first_perturbation(self.grid)

    def test_zero_data_give_zero_solution(self):
        """Test zero boundary data give the zero pair."""
        sol = self.system.solve()
        np.testing.assert_array_equal(sol.v_lin.values, 0.0)
        np.testing.assert_array_equal(sol.m_lin.values, 0.0)

    def test_initial_density_vanishes(self):
        """Test the linearized density starts from zero."""
        sol = self.system.solve(g=self.g, h=self.h)
        np.testing.assert_array_equal(sol.m_lin.initial.values, 0.0)

    def test_picard_matches_space_time_solve(self):
        """Test the damped iteration reproduces the monolithic direct solve."""
        picard = self.system.solve(g=self.g, h=self.h, method="picard")
        direct = self.system.solve(g=self.g, h=self.h, method="direct")
        np.testing.assert_allclose(picard.v_lin.values, direct.v_lin.values, atol=1e-8)
        np.testing.assert_allclose(picard.m_lin.values, direct.m_lin.values, atol=1e-8)
        self.assertLess(direct.residual, 1e-9)

    def test_homogeneity(self):
        """Test doubling the data doubles the solution."""
        single = self.system.solve(g=self.g, h=self.h)
        double = self.system.solve(g=self.g.scaled(2.0), h=self.h.scaled(2.0))
        np.testing.assert_allclose(
            double.v_lin.values, 2 * single.v_lin.values, atol=1e-9
        )
        np.testing.assert_allclose(
            double.m_lin.values, 2 * single.m_lin.values, atol=1e-9
        )

    def test_wrapper_builds_system_from_first_derivatives(self):
        """Test solve_first_order with explicit F1 and G1 agrees with the system."""
        sol = solve_first_order(
            self.base,
            self.coeffs,
            ScalarField.constant(self.grid, 1.0),
            ScalarField.constant(self.grid, 0.5),
            self.g,
            self.h,
            TIGHT,
            method="direct",
        )
        ref = self.system.solve(g=self.g, h=self.h, method="direct")
        np.testing.assert_allclose(sol.m_lin.values, ref.m_lin.values, atol=1e-12)

    def test_terminal_coupling(self):
        """Test v(T) = G1 m(T) in the interior."""
        sol = self.system.solve(g=self.g, h=self.h, method="direct")
        interior = self.grid.interior_mask
        np.testing.assert_allclose(
            sol.v_lin.final.values[interior],
            0.5 * sol.m_lin.final.values[interior],
            atol=1e-10,
        )

    def test_iteration_cap_reports_stability_violation(self):
        """Test a non-converged linear iteration raises StabilityViolation."""
        system = LinearizedSystem(
            self.base, self.coeffs, self.cost, SolverOptions(tol=1e-14, max_iter=2)
        )
        with self.assertRaises(StabilityViolation):
            system.solve(g=self.g, h=self.h)

    def test_unknown_method(self):
        """Test an unknown solve method is rejected."""
        with self.assertRaises(ValueError):
            self.system.solve(method="gmres")

    def test_compatibility_of_linearized_data(self):
        """Test the linearized corner conditions."""
        check_linear_compatibility(ScalarField.constant(self.grid, 0.5), self.g, self.h)
        shifted = self.h + BoundaryData.constant(self.grid, 1.0)
        with self.assertRaises(IncompatibleData):
            check_linear_compatibility(
                ScalarField.constant(self.grid, 0.5), self.g, shifted
            )
        with self.assertRaises(IncompatibleData):
            check_linear_compatibility(None, self.g, self.h)


class HigherOrderTests(SimpleTestCase):
    """Test mixed derivatives of second and third order."""

    def setUp(self):
        self.grid = line(9, nt=10)
        self.coeffs, self.cost, self.base = baseline_problem(self.grid, F2=2.0)
        self.system = LinearizedSystem(self.base, self.coeffs, self.cost, TIGHT)
        g1, h1 = first_perturbation(self.grid)
        g2, h2 = second_perturbation(self.grid)
        self.perturbations = PerturbationInput([g1, g2], [h1, h2], [1e-2, 1e-2])

    def test_zero_first_order_inputs(self):
        """Test zero first-order solutions give a zero mixed solution."""
        zero = self.system.solve(method="direct")
        sol = solve_second_order(
            self.base, self.coeffs, self.cost, zero, zero, TIGHT, method="direct"
        )
        np.testing.assert_allclose(sol.v_lin.values, 0.0, atol=1e-14)
        np.testing.assert_allclose(sol.m_lin.values, 0.0, atol=1e-14)

    def test_symmetry_in_the_two_perturbations(self):
        """Test swapping perturbations 1 and 2 leaves the mixed solution unchanged."""
        expansion = LinearizedExpansion(self.system, self.perturbations, "direct")
        first, second = expansion((1,)), expansion((2,))
        a = solve_second_order(self.base, self.coeffs, self.cost, first, second, TIGHT)
        b = solve_second_order(self.base, self.coeffs, self.cost, second, first, TIGHT)
        np.testing.assert_allclose(a.v_lin.values, b.v_lin.values, atol=1e-10)
        np.testing.assert_allclose(a.m_lin.values, b.m_lin.values, atol=1e-10)

    def test_expansion_memoizes_sorted_labels(self):
        """Test (2, 1) and (1, 2) refer to the same solve."""
        expansion = LinearizedExpansion(self.system, self.perturbations, "direct")
        self.assertIs(expansion((2, 1)), expansion((1, 2)))

    def test_third_order_is_trilinear(self):
        """Test doubling every perturbation scales the third-order term by eight."""
        sol = solve_order(self.system, self.perturbations, (1, 1, 2), "direct")
        doubled = PerturbationInput(
            [g.scaled(2.0) for g in self.perturbations.g],
            [h.scaled(2.0) for h in self.perturbations.h],
            self.perturbations.epsilon,
        )
        scaled = solve_order(self.system, doubled, (1, 1, 2), "direct")
        np.testing.assert_allclose(
            scaled.m_lin.values, 8 * sol.m_lin.values, rtol=1e-8, atol=1e-12
        )

    def test_orders_beyond_three_rejected(self):
        """Test the recursion stops at order three."""
        expansion = LinearizedExpansion(self.system, self.perturbations)
        with self.assertRaises(ValueError):
            expansion((1, 1, 2, 2))

    @pytest.mark.slow
    def test_second_difference_oracle(self):
        """Test the cross second difference of the forward map approaches the mixed solve."""
        coarse = cross_derivative_check(
            self.base, self.coeffs, self.cost, self.perturbations, 4e-2, TIGHT
        )
        fine = cross_derivative_check(
            self.base, self.coeffs, self.cost, self.perturbations, 1e-2, TIGHT
        )
        self.assertLess(fine.relative_error, coarse.relative_error)
        self.assertLess(fine.relative_error, 5e-2)


class FrechetTests(SimpleTestCase):
    """Test the Taylor remainder of the first-order linearization."""

    def setUp(self):
        self.grid = line(9, nt=10)

    def test_zero_perturbation_has_zero_remainder(self):
        """Test e = 0 when the perturbation vanishes."""
        coeffs, cost, base = baseline_problem(self.grid)
        zero = BoundaryData.zero(self.grid)
        report = frechet_check(base, coeffs, cost, zero, zero, options=TIGHT)
        self.assertEqual(max(report.errors), 0.0)
        self.assertIsNone(report.slope)
        self.assertTrue(report.passed)

    @pytest.mark.slow
    def test_remainder_is_quadratic_for_two_cost_models(self):
        """Test the fitted remainder slope lies in [1.8, 2.2]."""
        g, h = first_perturbation(self.grid)
        for F2 in (0.0, 2.0):
            coeffs, cost, base = baseline_problem(self.grid, F2=F2)
            report = frechet_check(base, coeffs, cost, g, h, options=TIGHT)
            self.assertTrue(report.passed, msg=report.to_json())
            self.assertEqual(json.loads(report.to_json())["passed"], True)

    def test_slope_fit(self):
        """Test the log-log slope of an exact power law."""
        eps = [1e-1, 1e-2, 1e-3]
        self.assertAlmostEqual(fitted_slope(eps, [e**2 for e in eps]), 2.0)
        self.assertIsNone(fitted_slope(eps, [0.0, 1.0, 1.0]))


class StationaryLinearizationTests(SimpleTestCase):
    """Test the stationary linearized system and its scalar reduction."""

    def setUp(self):
        self.grid = build_grid(GridSpec(2, [(0.0, 1.0), (0.0, 1.0)], [9, 9]))
        self.base = build_stationary_baseline(self.grid)
        self.F1 = ScalarField.constant(self.grid, 3.0)
        self.h = ScalarField.from_function(
            self.grid, lambda x, y: np.cos(PI * x) + x * y
        )

    def test_zero_data_give_zero(self):
        """Test zero Dirichlet data give the zero solution."""
        zero = ScalarField.constant(self.grid, 0.0)
        sol = solve_first_order_stationary(self.base, self.F1, zero)
        np.testing.assert_allclose(sol.m_lin.values, 0.0, atol=1e-14)

    def test_reduced_equation_reproduces_coupled_density(self):
        """Test the reduced scalar solve matches the coupled solve on a constant base."""
        coupled = solve_first_order_stationary(self.base, self.F1, self.h)
        reduced = solve_reduced(self.base, self.F1, self.h)
        np.testing.assert_allclose(coupled.m_lin.values, reduced.values, atol=1e-8)

    def test_gibbs_relation_of_linearized_pair(self):
        """Test v = -m / m0 for Gibbs-compatible value data."""
        sol = solve_first_order_stationary(self.base, self.F1, self.h)
        np.testing.assert_allclose(
            sol.v_lin.values, -sol.m_lin.values / self.base.m0.values, atol=1e-8
        )

    def test_homogeneity(self):
        """Test scaling the data scales the solution."""
        one = solve_first_order_stationary(self.base, self.F1, self.h)
        three = solve_first_order_stationary(
            self.base, self.F1, self.h.with_values(3 * self.h.values)
        )
        np.testing.assert_allclose(three.m_lin.values, 3 * one.m_lin.values, atol=1e-10)

    def test_complex_data(self):
        """Test complex boundary data are solved as real and imaginary parts."""
        data = self.h.with_values((1 + 2j) * self.h.values)
        sol = solve_first_order_stationary(self.base, self.F1, data)
        real = solve_first_order_stationary(self.base, self.F1, self.h)
        np.testing.assert_allclose(
            sol.m_lin.values, (1 + 2j) * real.m_lin.values, atol=1e-12
        )

    def test_explicit_value_data(self):
        """Test value data other than the Gibbs choice are honoured on the boundary."""
        g = ScalarField.constant(self.grid, 0.25)
        sol = solve_first_order_stationary(self.base, self.F1, self.h, g)
        boundary = self.grid.boundary_mask
        np.testing.assert_allclose(sol.v_lin.values[boundary], 0.25)

    def test_gibbs_value_data(self):
        """Test the Gibbs-compatible value data are -h / m0."""
        g = gibbs_value_data(self.base, self.h)
        np.testing.assert_allclose(g.values, -self.h.values)

    def test_reduction_on_constant_base(self):
        """Test a constant base has no drift and potential -F1 / |Omega|."""
        eq = reduce_to_scalar(self.base, self.F1)
        np.testing.assert_allclose(eq.drift.components, 0.0)
        np.testing.assert_allclose(eq.q.values, -3.0)

    def test_reduction_on_seeded_base(self):
        """Test the potential is Lap v0 - F1 m0 node-wise on a seeded base."""
        v0 = ScalarField.from_function(self.grid, lambda x, y: np.cos(PI * x))
        base = build_stationary_baseline(self.grid, v0)
        eq = reduce_to_scalar(base, self.F1)
        expected = laplacian(v0).values - 3.0 * base.m0.values
        np.testing.assert_allclose(eq.q.values, expected)
        self.assertEqual(eq.sign, 1)

    def test_zero_cost_keeps_laplacian_potential(self):
        """Test F1 = 0 leaves q = Lap v0."""
        v0 = ScalarField.from_function(self.grid, lambda x, y: np.sin(PI * y))
        base = build_stationary_baseline(self.grid, v0)
        eq = reduce_to_scalar(base, ScalarField.constant(self.grid, 0.0))
        np.testing.assert_allclose(eq.q.values, laplacian(v0).values)

    def test_adjoint_variant(self):
        """Test sign -1 returns the formal adjoint of the reduced operator."""
        v0 = ScalarField.from_function(self.grid, lambda x, y: np.cos(PI * x))
        base = build_stationary_baseline(self.grid, v0)
        eq = reduce_to_scalar(base, self.F1, sign=-1)
        self.assertEqual(eq.sign, -1)
        np.testing.assert_allclose(eq.q.values, -3.0 * base.m0.values, atol=1e-12)

    @settings(max_examples=10, deadline=None)
    @given(st.floats(min_value=-5.0, max_value=5.0))
    def test_reduction_agreement_for_any_constant_cost(self, F1):
        """Test coupled and reduced densities agree for constant F1 below resonance."""
        cost = ScalarField.constant(self.grid, F1)
        coupled = solve_first_order_stationary(self.base, cost, self.h)
        reduced = solve_reduced(self.base, cost, self.h)
        np.testing.assert_allclose(coupled.m_lin.values, reduced.values, atol=1e-8)
