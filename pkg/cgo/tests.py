import tempfile
from pathlib import Path

import numpy as np
import pytest
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from cgo.construction import adjoint_probe, build_cgo, verify_decay
from cgo.equations import ScalarReducedEquation
from cgo.probes import ProbeVector, complement_basis, make_xi_pair, probe_pair
from cgo.remainder import (
    Torus,
    iterate_remainder,
    remainder_oracle,
    solve_remainder,
)
from cgo.weighted import (
    WeightedEquation,
    boundary_pairing,
    volume_pairing,
    weighted_trace,
)
from grid.fieldio import read_field
from grid.fields import ScalarField
from grid.mesh import GridSpec, build_grid
from mfglab.errors import ConfigError, GridError, NonContraction, OverflowCap
from mfglab.options import ProbeOptions

PI = np.pi
K1 = (1.0, 0.0, 0.0)

vectors = st.lists(
    st.floats(min_value=-5.0, max_value=5.0, allow_nan=False), min_size=3, max_size=3
).filter(lambda k: np.linalg.norm(k) > 0.1)


def unit_box(dim, n):
    return build_grid(GridSpec(dim, [(0.0, 1.0)] * dim, [n] * dim))


def constant_equation(grid, q, sign=1):
    return ScalarReducedEquation(
        ScalarField.constant(grid, 0.0), ScalarField.constant(grid, q), sign
    )


def seeded_equation(grid, amplitude=0.1):
    v0 = ScalarField.from_function(grid, lambda x, y, z: amplitude * np.cos(PI * x))
    return ScalarReducedEquation(v0, ScalarField.constant(grid, 0.0))


class ProbeVectorTests(SimpleTestCase):
    """Test the complex frequency pairs."""

    @settings(max_examples=100, deadline=None)
    @given(vectors, st.floats(min_value=0.25, max_value=20.0))
    def test_isotropy_and_magnitude(self, k, R):
        """Test xi.xi = 0 and |xi|^2 = |k|^2 / 4 + 4 R^2 |k|^2 for both probes."""
        k = np.array(k)
        expected = 0.25 * k @ k + 4 * R**2 * (k @ k)
        for probe in make_xi_pair(k, R):
            self.assertLessEqual(probe.isotropy_defect(), 1e-12)
            self.assertAlmostEqual(probe.magnitude**2 / expected, 1.0, delta=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(vectors, st.floats(min_value=0.25, max_value=20.0))
    def test_pair_sums_to_ik(self, k, R):
        """Test the two probes add up to i k."""
        first, second = make_xi_pair(k, R)
        scale = first.magnitude
        np.testing.assert_allclose(first.xi + second.xi, 1j * np.array(k), atol=1e-13 * scale)

    def test_negated_frequency_gives_conjugate_pair(self):
        """Test the pair for -k is the conjugate of the pair for k."""
        for k in [(PI, 0.0, 0.0), (1.0, -2.0, 0.5), (0.0, 3.0, 4.0)]:
            pair = make_xi_pair(k, 2.0)
            negated = make_xi_pair(-np.array(k), 2.0)
            for probe, other in zip(pair, negated):
                np.testing.assert_allclose(other.xi, np.conj(probe.xi), atol=1e-14)
                np.testing.assert_array_equal(probe.conj().k, other.k)

    def test_complement_basis_is_orthonormal(self):
        """Test the completing vectors, also for k almost along an axis."""
        for k in [np.array([1.0, 0.0, 0.0]), np.array([5.0, 1e-7, 0.0])]:
            a, b = complement_basis(k)
            for u in (a, b):
                self.assertAlmostEqual(np.linalg.norm(u), 1.0, delta=1e-14)
                self.assertLess(abs(u @ k) / np.linalg.norm(k), 1e-14)
            self.assertLess(abs(a @ b), 1e-14)

    def test_axis_frequency_uses_smallest_free_axes(self):
        """Test k along x1 is completed by x2 and x3."""
        a, b = complement_basis(np.array(K1))
        np.testing.assert_allclose(a, [0.0, 1.0, 0.0])
        np.testing.assert_allclose(b, [0.0, 0.0, 1.0])

    def test_zero_frequency_pair(self):
        """Test the non-oscillating pair for k = 0."""
        first, second = probe_pair((0.0, 0.0, 0.0), 1.5)
        self.assertLess(first.isotropy_defect(), 1e-14)
        np.testing.assert_allclose(first.xi + second.xi, 0.0)
        self.assertAlmostEqual(first.magnitude, 2 * 1.5, delta=1e-12)

    def test_rejected_inputs(self):
        """Test zero k, low dimension, small R and an unknown role."""
        with self.assertRaises(ConfigError):
            make_xi_pair((0.0, 0.0, 0.0), 1.0)
        with self.assertRaises(ConfigError):
            make_xi_pair((1.0, 0.0), 1.0)
        with self.assertRaises(ConfigError):
            make_xi_pair(K1, 0.2)
        with self.assertRaises(ConfigError):
            ProbeVector(np.zeros(3), np.zeros(3), 1.0, role="third")

    def test_isotropic_helper(self):
        """Test the planar probe used for 2D solver checks."""
        probe = ProbeVector.isotropic(2, 3.0)
        self.assertEqual(probe.isotropy_defect(), 0.0)
        self.assertAlmostEqual(probe.magnitude, 3.0 * np.sqrt(2))
        self.assertEqual(probe.to_dict()["xi_imag"], [0.0, 3.0])


class ReducedEquationTests(SimpleTestCase):
    """Test the drift-free potential of the reduced equations."""

    def test_constant_base_keeps_potential(self):
        """Test H = q when v0 is constant."""
        eq = constant_equation(unit_box(3, 4), 0.3)
        np.testing.assert_allclose(eq.H.values, 0.3)
        self.assertFalse(eq.is_degenerate())
        self.assertTrue(constant_equation(unit_box(3, 4), 0.0).is_degenerate())

    def test_adjoint_flips_drift(self):
        """Test the adjoint carries the opposite drift sign."""
        grid = unit_box(3, 4)
        adjoint = seeded_equation(grid).adjoint()
        self.assertEqual(adjoint.sign, -1)
        self.assertEqual(adjoint.adjoint().sign, 1)

    def test_dirichlet_solve_reproduces_boundary_values(self):
        """Test the Dirichlet solve keeps the prescribed boundary values."""
        grid = unit_box(2, 6)
        eq = ScalarReducedEquation(
            ScalarField.from_function(grid, lambda x, y: 0.2 * x * y),
            ScalarField.constant(grid, -1.0),
        )
        data = ScalarField.from_function(grid, lambda x, y: 1 + x - y)
        solution = eq.solve_dirichlet(data)
        mask = grid.boundary_mask
        np.testing.assert_allclose(solution.values[mask], data.values[mask])
        residual = eq.apply(solution.values)
        self.assertLess(np.max(np.abs(residual[grid.interior_mask])), 1e-10)

    def test_dirichlet_solve_rejects_wrong_shape(self):
        """Test boundary data on another grid are refused."""
        eq = constant_equation(unit_box(2, 6), 1.0)
        with self.assertRaises(GridError):
            eq.solve_dirichlet(np.zeros((3, 3)))


class RemainderTests(SimpleTestCase):
    """Test the remainder iteration on the doubled torus."""

    def setUp(self):
        self.grid = unit_box(3, 4)
        self.probe = make_xi_pair(K1, 1.0)[0]

    def test_zero_potential_gives_zero_remainder(self):
        """Test H = 0 leaves no remainder and no iterations."""
        result = iterate_remainder(constant_equation(self.grid, 0.0), self.probe)
        self.assertEqual(result.iterations, 0)
        self.assertEqual(result.norm, 0.0)
        self.assertEqual(result.residual, 0.0)

    def test_iteration_matches_direct_solve(self):
        """Test the fixed point agrees with a sparse solve on the same torus."""
        eq = constant_equation(self.grid, 0.3)
        omega = solve_remainder(eq, self.probe)
        oracle = remainder_oracle(eq, self.probe)
        np.testing.assert_allclose(omega.values, oracle.values, atol=1e-6)
        self.assertGreater(np.max(np.abs(omega.values)), 1e-4)

    def test_remainder_equation_holds_in_the_box(self):
        """Test the reported residual of the remainder equation."""
        result = iterate_remainder(constant_equation(self.grid, 0.3), self.probe)
        self.assertGreater(result.iterations, 0)
        self.assertLess(result.residual, 1e-8)
        self.assertEqual(result.floored_modes, 0)

    def test_planar_probe(self):
        """Test the 2D path against the direct solve."""
        grid = unit_box(2, 8)
        eq = constant_equation(grid, 0.5)
        probe = ProbeVector.isotropic(2, 2.0)
        np.testing.assert_allclose(
            solve_remainder(eq, probe).values,
            remainder_oracle(eq, probe).values,
            atol=1e-6,
        )

    def test_torus_shift_axis_and_symbol(self):
        """Test the antiperiodic axis follows the largest real part."""
        torus = Torus(self.grid, np.array([0.5j, 0.1, 2.0 + 1j]))
        self.assertEqual(torus.shifted_axis, 2)
        self.assertEqual(torus.shape, (12, 12, 12))
        self.assertFalse(np.any(torus.floored(1e-8)))

    def test_large_potential_does_not_contract(self):
        """Test a strong potential with a short probe is reported."""
        eq = constant_equation(self.grid, 200.0)
        probe = make_xi_pair(K1, 0.25)[0]
        with self.assertRaises(NonContraction):
            iterate_remainder(eq, probe)

    def test_dimension_mismatch(self):
        """Test a planar probe is refused on a 3D grid."""
        with self.assertRaises(GridError):
            iterate_remainder(constant_equation(self.grid, 0.3), ProbeVector.isotropic(2, 1.0))


class CGOSolutionTests(SimpleTestCase):
    """Test assembled probes."""

    def test_zero_potential_probe(self):
        """Test H = 0 assembles the bare exponential."""
        grid = unit_box(3, 4)
        probe = make_xi_pair(K1, 0.5)[0]
        cgo = build_cgo(constant_equation(grid, 0.0), probe)
        phase = sum(xi * x for xi, x in zip(probe.xi, grid.coords))
        np.testing.assert_allclose(cgo.assembled.values, np.exp(phase))
        self.assertEqual(cgo.remainder_residual, 0.0)
        self.assertEqual(cgo.omega_norm, 0.0)

    def test_assembled_residual_is_second_order(self):
        """Test the relative residual of the bare exponential under refinement."""
        probe = make_xi_pair(K1, 0.5)[0]
        residuals = []
        for n in (4, 9):
            grid = unit_box(3, n)
            residuals.append(build_cgo(constant_equation(grid, 0.0), probe).relative_residual)
            h = grid.spacing[0]
            exact = abs(sum((2 * np.cosh(xi * h) - 2) / h**2 for xi in probe.xi))
            self.assertAlmostEqual(residuals[-1] / exact, 1.0, delta=1e-8)
        self.assertLess(residuals[1], 0.3 * residuals[0])

    def test_seeded_base_residual_decreases(self):
        """Test refinement reduces the residual on a seeded base."""
        probe = make_xi_pair(K1, 0.5)[0]
        coarse = build_cgo(seeded_equation(unit_box(3, 4)), probe)
        fine = build_cgo(seeded_equation(unit_box(3, 9)), probe)
        self.assertGreater(coarse.iterations, 0)
        self.assertLess(fine.relative_residual, 0.5 * coarse.relative_residual)

    def test_conjugate_frequency_gives_conjugate_fields(self):
        """Test k -> -k conjugates the assembled probe."""
        eq = constant_equation(unit_box(3, 4), 0.3)
        first = build_cgo(eq, make_xi_pair(K1, 1.0)[0])
        mirrored = build_cgo(eq, make_xi_pair((-1.0, 0.0, 0.0), 1.0)[0])
        np.testing.assert_allclose(
            mirrored.assembled.values, np.conj(first.assembled.values), atol=1e-9
        )

    def test_overflow_cap(self):
        """Test an exponent above the cap is refused."""
        eq = constant_equation(unit_box(3, 4), 0.3)
        with self.assertRaises(OverflowCap):
            build_cgo(eq, make_xi_pair(K1, 2.0)[0], ProbeOptions(overflow_cap=1.0))

    def test_fields_written_as_real_imaginary_pairs(self):
        """Test complex export and re-import."""
        eq = constant_equation(unit_box(3, 4), 0.3)
        cgo = build_cgo(eq, make_xi_pair(K1, 1.0)[0])
        with tempfile.TemporaryDirectory() as tmp:
            paths = cgo.save(tmp, "probe")
            self.assertEqual(len(paths), 4)
            back = read_field(Path(tmp) / "probe_assembled")
        np.testing.assert_array_equal(back.values, cgo.assembled.values)
        self.assertEqual(cgo.summary()["sign"], 1)


class DecayTests(SimpleTestCase):
    """Test remainder decay in |xi|."""

    def test_degenerate_report(self):
        """Test H = 0 flags the exact case."""
        report = verify_decay(constant_equation(unit_box(3, 4), 0.0), K1, [1, 2])
        self.assertTrue(report.degenerate)
        self.assertTrue(report.passed)
        self.assertIsNone(report.slope)

    def test_report_csv(self):
        """Test the CSV layout of the decay report."""
        report = verify_decay(constant_equation(unit_box(3, 4), 0.3), K1, [1, 2])
        rows = report.to_csv().splitlines()
        self.assertEqual(rows[0], "R,xi_norm,omega_norm,iterations")
        self.assertEqual(len(rows), 3)
        with tempfile.TemporaryDirectory() as tmp:
            path = report.write_csv(Path(tmp) / "decay.csv")
            self.assertEqual(path.read_text(), report.to_csv())

    @pytest.mark.slow
    def test_decay_rate(self):
        """Test |w| falls like 1 / |xi| over R in {1, 2, 4, 8}."""
        eq = constant_equation(unit_box(3, 11), 0.2)
        report = verify_decay(eq, K1, [1, 2, 4, 8])
        norms = [row.omega_norm for row in report.rows]
        iterations = [row.iterations for row in report.rows]
        self.assertTrue(all(a > b for a, b in zip(norms, norms[1:])))
        self.assertTrue(all(a >= b for a, b in zip(iterations, iterations[1:])))
        self.assertGreaterEqual(report.slope, -1.3)
        self.assertLessEqual(report.slope, -0.7)
        self.assertTrue(report.passed)

    @pytest.mark.slow
    def test_remainder_is_linear_in_small_potentials(self):
        """Test doubling H doubles |w| for a long probe."""
        grid = unit_box(3, 11)
        probe = make_xi_pair(K1, 8.0)[0]
        single = iterate_remainder(constant_equation(grid, 0.1), probe).norm
        double = iterate_remainder(constant_equation(grid, 0.2), probe).norm
        self.assertAlmostEqual(double / single, 2.0, delta=0.4)


class TwistedRemainderTests(SimpleTestCase):
    """Test the remainder of the weighted adjoint stencil."""

    def setUp(self):
        self.grid = unit_box(3, 5)
        self.k = np.array(K1) * PI
        self.first = make_xi_pair(self.k, 1.0)[0]

    def test_constant_part_vanishes_without_twist(self):
        """Test the untwisted stencil annihilates constants."""
        self.assertEqual(Torus(self.grid, self.first.xi).constant_part, 0.0)
        twisted = Torus(self.grid, self.first.xi, self.k)
        self.assertGreater(abs(twisted.constant_part), 0.0)
        self.assertLess(abs(twisted.constant_part), 0.5 * PI**2)

    def test_twisted_iteration_matches_direct_solve(self):
        """Test the twisted fixed point against the sparse torus solve."""
        eq = seeded_equation(self.grid)
        result = iterate_remainder(eq, self.first, twist=self.k)
        oracle = remainder_oracle(eq, self.first, twist=self.k)
        np.testing.assert_allclose(result.omega.values, oracle.values, atol=1e-6)
        self.assertLess(result.residual, 1e-8)

    def test_twist_dimension_mismatch(self):
        """Test a planar twist is refused on a 3D grid."""
        with self.assertRaises(GridError):
            iterate_remainder(seeded_equation(self.grid), self.first, twist=[1.0, 0.0])

    def test_adjoint_probe_fields(self):
        """Test the adjoint probe carries its twist and no assembled field."""
        adjoint = adjoint_probe(seeded_equation(self.grid), self.first)
        self.assertIsNone(adjoint.assembled)
        self.assertEqual(adjoint.sign, -1)
        np.testing.assert_array_equal(adjoint.twist, self.k)
        np.testing.assert_array_equal(adjoint.conj().twist, -self.k)
        self.assertEqual(adjoint.summary()["twist"], list(self.k))
        with tempfile.TemporaryDirectory() as tmp:
            self.assertEqual(len(adjoint.save(tmp, "adjoint")), 2)


class WeightedEquationTests(SimpleTestCase):
    """Test the probe-weighted Dirichlet problem and its boundary pairing."""

    def setUp(self):
        self.grid = unit_box(3, 5)
        self.k = np.array([PI, 0.0, 0.0])
        self.first = make_xi_pair(self.k, 1.0)[0]

    def test_constants_solve_the_unperturbed_problem(self):
        """Test y = 1 is the weighted solution for H = 0."""
        weighted = WeightedEquation(constant_equation(self.grid, 0.0), self.first)
        solution = weighted.solve_dirichlet(np.ones(self.grid.shape))
        np.testing.assert_allclose(solution.values, 1.0, atol=1e-10)

    def test_dirichlet_solve_reproduces_the_probe(self):
        """Test the Dirichlet solve with probe boundary values returns the probe."""
        eq = constant_equation(self.grid, 0.3)
        probe = iterate_remainder(eq, self.first).omega
        y = 1 + probe.values
        solution = WeightedEquation(eq, self.first).solve_dirichlet(y)
        np.testing.assert_allclose(solution.values, y, atol=1e-7)

    def test_boundary_pairing_equals_volume_sum(self):
        """Test the summation by parts of the weighted records is exact."""
        grid = self.grid
        reference = seeded_equation(grid)
        source = ScalarField.from_function(grid, lambda x, y, z: 0.2 * (1 + x * y))
        true = reference.shifted(-source)
        measured = WeightedEquation(true, self.first).solve_dirichlet(np.ones(grid.shape))
        weighted_reference = WeightedEquation(reference, self.first)
        modelled = weighted_reference.solve_dirichlet(measured.values)
        adjoint = adjoint_probe(reference, self.first)
        difference = weighted_trace(measured) - weighted_trace(modelled)
        boundary = boundary_pairing(difference, adjoint)
        volume = volume_pairing(weighted_reference, adjoint, measured - modelled)
        self.assertAlmostEqual(abs(boundary - volume) / abs(volume), 0.0, delta=1e-7)
        phase = np.exp(1j * PI * grid.coords[0])
        integrand = phase * adjoint.weighted.values * source.values * measured.values
        direct = np.prod(grid.spacing) * np.sum(integrand[grid.interior_mask])
        self.assertAlmostEqual(abs(direct - volume) / abs(volume), 0.0, delta=1e-7)

    def test_pairing_needs_a_twist(self):
        """Test untwisted probes are refused by the pairing."""
        eq = constant_equation(self.grid, 0.3)
        probe = build_cgo(eq, self.first)
        trace = weighted_trace(ScalarField.constant(self.grid, 1.0))
        with self.assertRaises(GridError):
            boundary_pairing(trace, probe)
