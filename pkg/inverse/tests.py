import json
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from django.test import SimpleTestCase

from cauchy.measurements import ProbeRecord, extract_c2, extract_c3
from cauchy.probing import frequency_lattice, probe_experiment, record_label
from forward.coefficients import (
    BoundaryData,
    CostModel,
    MFGCoefficients,
    TimeDependentSolution,
)
from forward.stationary import build_stationary_baseline
from grid.fieldio import read_field
from grid.fields import ScalarField, SpaceTimeField
from grid.mesh import GridSpec, build_grid
from grid.operators import integrate, l2_norm, restrict_to_boundary
from inverse.fourier import (
    FourierSamples,
    cosine_indices,
    cosine_mode,
    divide_by_density,
    invert_fourier,
    linearize_samples,
    recover_first_order,
    recover_fourier_samples,
    remodel,
    synthesize_source,
)
from inverse.leastsq import HatBasis, hat_matrix, tikhonov_solve
from inverse.report import ReconstructionReport, relative_l2_error
from inverse.stationary import recover_stationary_state
from inverse.timedep import (
    recover_higher_order,
    recover_terminal_linear,
    round_trip_residual,
    terminal_misfit,
    with_order,
)
from inverse.ucp import ucp_residual_check
from linearize.systems import LinearizedExpansion, LinearizedSystem, PerturbationInput
from mfglab.errors import (
    ArchiveError,
    InconsistentCauchyData,
    PositivityFloor,
    RankDeficiency,
)
from mfglab.options import RecoveryOptions

PI = np.pi


def line(n, nt=0):
    return build_grid(GridSpec(1, [(0.0, 1.0)], [n], nt, 1.0))


def box(extents, n):
    return build_grid(GridSpec(len(extents), extents, [n] * len(extents)))


def unit_box(dim, n):
    return box([(0.0, 1.0)] * dim, n)


def flat_base(grid):
    """``v = 0`` and ``m = 1`` at every level."""
    v = SpaceTimeField.constant(grid, 0.0)
    m = SpaceTimeField.constant(grid, 1.0)
    return TimeDependentSolution(v, m, m.initial)


def precise(**overrides):
    return RecoveryOptions(**{"tikhonov_weight": 1e-10, "symmetry_tol": 1e-6, **overrides})


class StationaryStateTests(SimpleTestCase):
    """Test the stationary state read off the baseline traces."""

    def test_harmonic_weight_is_recovered_exactly(self):
        """Test a discretely harmonic exp(-v0/2) comes back to round-off."""
        grid = unit_box(3, 5)
        w = ScalarField.from_function(grid, lambda x, y, z: 2 + x * y + 0.5 * z)
        base = build_stationary_baseline(grid, w.with_values(-2 * np.log(w.values)))
        recovered = recover_stationary_state(extract_c2(base))
        np.testing.assert_allclose(recovered.v0.values, base.v0.values, atol=1e-10)
        np.testing.assert_allclose(recovered.m0.values, base.m0.values, rtol=1e-9)
        self.assertAlmostEqual(recovered.mass(), 1.0, places=12)
        self.assertEqual(recovered.lam, 0.0)

    def test_constant_traces_give_uniform_density(self):
        """Test a constant baseline gives m0 = 1/|Omega|."""
        grid = box([(0.0, 2.0), (0.0, 1.0)], 6)
        recovered = recover_stationary_state(extract_c2(build_stationary_baseline(grid)))
        np.testing.assert_allclose(recovered.v0.values, 0.0, atol=1e-12)
        np.testing.assert_allclose(recovered.m0.values, 0.5, rtol=1e-12)
        self.assertAlmostEqual(integrate(recovered.m0), 1.0, places=12)

    def test_non_harmonic_weight_is_inconsistent(self):
        """Test Neumann traces of a non-Hopf-Cole state are refused."""
        grid = unit_box(3, 5)
        v0 = ScalarField.from_function(grid, lambda x, y, z: 3 * x**2 + 0 * y * z)
        with self.assertRaises(InconsistentCauchyData):
            recover_stationary_state(extract_c2(build_stationary_baseline(grid, v0)))


class HatBasisTests(SimpleTestCase):
    """Test the coarse recovery bases."""

    def test_hats_partition_unity(self):
        """Test every fine node is covered with total weight one."""
        axis = np.linspace(0.0, 1.0, 11)
        hats = hat_matrix(axis, np.array([0, 3, 6, 9, 10]))
        np.testing.assert_allclose(hats.sum(axis=1), 1.0)
        np.testing.assert_allclose(hats[[0, 3, 6, 9, 10]], np.eye(5))

    def test_synthesis_matches_functions(self):
        """Test synthesis of a unit vector gives the matching hat."""
        grid = build_grid(GridSpec(2, [(0.0, 1.0)] * 2, [6, 6], 5, 1.0))
        for basis in (HatBasis.spatial(grid, 3), HatBasis.space_time(grid, 3)):
            self.assertEqual(basis.size, int(np.prod(basis.coarse_shape)))
            np.testing.assert_allclose(basis.synthesize(np.ones(basis.size)), 1.0)
            unit = np.zeros(basis.size)
            unit[basis.size // 2] = 1.0
            np.testing.assert_allclose(
                basis.synthesize(unit), basis.function(basis.size // 2), atol=1e-14
            )
        self.assertEqual(HatBasis.spatial(grid, 3).coarse_shape, (4, 4))
        self.assertEqual(HatBasis.space_time(grid, 3).coarse_shape, (3, 4, 4))


class TikhonovTests(SimpleTestCase):
    """Test the filtered SVD solve."""

    def test_unregularized_solve_is_exact(self):
        """Test a well-posed system is solved exactly with zero weight."""
        rng = np.random.default_rng(0)
        matrix = rng.standard_normal((12, 4))
        truth = np.array([1.0, -2.0, 0.5, 3.0])
        fit = tikhonov_solve(matrix, matrix @ truth, weight=0.0)
        np.testing.assert_allclose(fit.coefficients, truth, atol=1e-12)
        self.assertEqual(fit.rank, 4)
        self.assertLess(fit.relative_residual, 1e-12)
        self.assertEqual(fit.to_dict()["unknowns"], 4)

    def test_several_right_hand_sides(self):
        """Test columns of the right-hand side are solved independently."""
        matrix = np.diag([2.0, 1.0, 0.5])
        rhs = np.column_stack([[2.0, 1.0, 0.5], [0.0, 2.0, 0.0]])
        fit = tikhonov_solve(matrix, rhs, weight=0.0)
        np.testing.assert_allclose(fit.coefficients, [[1, 0], [1, 2], [1, 0]], atol=1e-14)

    def test_weight_damps_weak_directions(self):
        """Test a direction at the weight is halved."""
        fit = tikhonov_solve(np.diag([1.0, 1e-3]), np.array([1.0, 1e-3]), weight=1e-3)
        self.assertAlmostEqual(fit.coefficients[1], 0.5, places=12)
        self.assertAlmostEqual(fit.mu, 1e-3)

    def test_rank_deficiency(self):
        """Test vanishing and mostly unresolved matrices are refused."""
        with self.assertRaises(RankDeficiency):
            tikhonov_solve(np.zeros((3, 2)), np.ones(3))
        with self.assertRaises(RankDeficiency) as caught:
            tikhonov_solve(np.diag([1.0, 1e-12, 1e-12]), np.ones(3), weight=1e-6)
        self.assertEqual(len(caught.exception.singular_values), 3)


class FourierSampleTests(SimpleTestCase):
    """Test pairing samples on a constant baseline."""

    def setUp(self):
        self.grid = unit_box(3, 5)
        self.base = build_stationary_baseline(self.grid)
        self.indices = frequency_lattice(3, 1)
        self.source = ScalarField.from_function(self.grid, lambda x, y, z: 0.3 * np.cos(PI * x))

    def test_zero_source_gives_zero_samples(self):
        """Test identical records and model pair to zero."""
        F1 = ScalarField.constant(self.grid, 0.0)
        c2 = probe_experiment(self.base, F1, self.indices[:5], [2.0])
        samples = recover_fourier_samples(c2, self.base)
        self.assertEqual(len(samples.samples), 5)
        np.testing.assert_allclose(samples.values(), 0.0, atol=1e-10)

    def test_samples_are_conjugate_symmetric(self):
        """Test the samples at -k are the conjugates of those at k."""
        c2 = probe_experiment(self.base, self.source, self.indices, [2.0])
        samples = recover_fourier_samples(c2, self.base)
        self.assertEqual(samples.band, 1)
        self.assertLess(samples.check_conjugate_symmetry(1e-6), 1e-6)
        self.assertGreater(np.max(np.abs(samples.values())), 1e-3)
        broken = replace(samples.samples[1], value=samples.samples[1].value + 1.0)
        samples.samples[1] = broken
        with self.assertRaises(InconsistentCauchyData):
            samples.check_conjugate_symmetry(1e-6)

    def test_exact_models_give_the_exact_mode(self):
        """Test samples modelled with the true source return its cosine coefficients."""
        c2 = probe_experiment(self.base, self.source, self.indices, [2.0])
        samples = remodel(recover_fourier_samples(c2, self.base), c2, self.base, self.source)
        fitted = synthesize_source(samples, 1, precise())
        self.assertEqual(set(fitted.coefficients), set(cosine_indices(3, 1)))
        self.assertAlmostEqual(fitted.coefficients[(1, 0, 0)], 0.3, places=5)
        for n in ((0, 0, 0), (0, 1, 0), (1, 1, 0), (0, 0, 1)):
            self.assertAlmostEqual(fitted.coefficients[n], 0.0, places=5)
        np.testing.assert_allclose(fitted.source.values, self.source.values, atol=1e-5)

    def test_synthesis_divides_out_the_kernel(self):
        """Test doubling every sample's model halves the fitted coefficients."""
        c2 = probe_experiment(self.base, self.source, self.indices, [2.0])
        samples = remodel(recover_fourier_samples(c2, self.base), c2, self.base, self.source)
        doubled = FourierSamples(
            self.grid, [replace(s, model=2 * s.model) for s in samples.samples]
        )
        fitted = synthesize_source(doubled, 1, precise())
        self.assertAlmostEqual(fitted.coefficients[(1, 0, 0)], 0.15, places=5)
        np.testing.assert_allclose(fitted.source.values, 0.5 * self.source.values, atol=1e-5)

    def test_constant_base_scales_by_volume(self):
        """Test F1 = |Omega| Q on a constant baseline."""
        grid = box([(0.0, 2.0), (0.0, 1.0), (0.0, 1.0)], 5)
        base = build_stationary_baseline(grid)
        F1 = ScalarField.from_function(grid, lambda x, y, z: 0.6 * np.cos(PI * x / 2))
        source = F1 * base.m0.values
        c2 = probe_experiment(base, F1, frequency_lattice(3, 1), [2.0])
        samples = remodel(recover_fourier_samples(c2, base), c2, base, source)
        recovered = invert_fourier(samples, base, precise(), band=1)
        fitted = synthesize_source(samples, 1, precise())
        np.testing.assert_allclose(recovered.values, 2.0 * fitted.source.values, rtol=1e-12)
        np.testing.assert_allclose(recovered.values, F1.values, atol=1e-4)

    def test_first_order_refinement_converges(self):
        """Test Gauss-Newton refinement drives the pairing residual down to the truth."""
        F1 = ScalarField.from_function(
            self.grid, lambda x, y, z: 0.4 + 0.3 * np.cos(PI * x) * np.cos(PI * y)
        )
        c2 = probe_experiment(self.base, F1, self.indices, [2.0])
        result = recover_first_order(c2, self.base, band=1, options=precise(refinements=6))
        self.assertGreaterEqual(len(result.history), 1)
        self.assertLessEqual(len(result.history), 6)
        self.assertEqual(len(result.residuals), len(result.history) + 1)
        for before, after in zip(result.residuals, result.residuals[1:]):
            self.assertLess(after, before)
        self.assertLess(result.residuals[-1], 1e-6)
        self.assertLess(relative_l2_error(result.F1, F1), 1e-3)
        self.assertAlmostEqual(result.source.coefficients[(1, 1, 0)], 0.3, places=3)
        self.assertEqual(
            set(result.to_dict()),
            {"source", "samples", "refinement_changes", "pairing_residuals"},
        )

    def test_linearization_matches_differences(self):
        """Test the pairing Jacobian against a central difference of the residuals."""
        F1 = ScalarField.from_function(self.grid, lambda x, y, z: 0.4 + 0.3 * np.cos(PI * x))
        c2 = probe_experiment(self.base, F1, self.indices[:7], [2.0])
        samples = recover_fourier_samples(c2, self.base)
        modes = [cosine_mode(self.grid, n) for n in cosine_indices(3, 1)]
        coefficients = np.linspace(0.1, 0.3, len(modes))
        at = linearize_samples(samples, c2, self.base, modes, coefficients)
        self.assertEqual(at.jacobian.shape, (7, len(modes)))
        step = 1e-6
        for j in (0, 1, 5):
            shift = np.zeros(len(modes))
            shift[j] = step
            up = linearize_samples(samples, c2, self.base, modes, coefficients + shift)
            down = linearize_samples(samples, c2, self.base, modes, coefficients - shift)
            difference = (up.residual - down.residual) / (2 * step)
            scale = np.max(np.abs(at.jacobian[:, j]))
            np.testing.assert_allclose(at.jacobian[:, j], difference, atol=1e-6 * scale)

    def test_probe_mismatch_refused(self):
        """Test a record whose probe vector does not match its label."""
        trace = restrict_to_boundary(ScalarField.constant(self.grid, 1.0))
        record = ProbeRecord(
            record_label((1, 0, 0), 2.0), (1, 0, 0), 2.0, np.array([0.0, 1j, 1.0]), trace
        )
        with self.assertRaises(ArchiveError):
            recover_fourier_samples(extract_c2(self.base, [record]), self.base)

    def test_radius_selection(self):
        """Test samples can be restricted to one radius."""
        F1 = ScalarField.constant(self.grid, 0.0)
        c2 = probe_experiment(self.base, F1, self.indices[:3], [1.0, 2.0])
        self.assertEqual(len(recover_fourier_samples(c2, self.base, R=2.0).samples), 3)
        with self.assertRaises(ArchiveError):
            recover_fourier_samples(c2, self.base, R=4.0)

    def test_positivity_floor(self):
        """Test division by a vanishing density is refused."""
        grid = line(7)
        steep = build_stationary_baseline(grid, ScalarField.from_function(grid, lambda x: 40 * x))
        with self.assertRaises(PositivityFloor):
            divide_by_density(ScalarField.constant(grid, 1.0), steep, 1e-6)

    def test_cosine_modes(self):
        """Test modes follow the box extents."""
        grid = box([(1.0, 3.0)], 7)
        np.testing.assert_allclose(cosine_mode(grid, (2,)), np.cos(PI * (grid.coords[0] - 1.0)))
        self.assertEqual(len(cosine_indices(3, 2)), 27)

    @pytest.mark.slow
    @pytest.mark.integration
    def test_end_to_end_in_three_dimensions(self):
        """Test a band-one running cost on the 16-cube improves with R to within 10%."""
        grid = unit_box(3, 16)
        base = build_stationary_baseline(grid)
        F1 = ScalarField.from_function(
            grid,
            lambda x, y, z: 0.4
            + 0.3 * np.cos(PI * x)
            + 0.2 * np.cos(PI * y) * np.cos(PI * z),
        )
        radii = [2.0, 4.0, 8.0]
        c2 = probe_experiment(base, F1, frequency_lattice(3, 1), radii)
        options = precise(refinements=8)
        errors = [
            relative_l2_error(recover_first_order(c2, base, R, 1, options).F1, F1)
            for R in radii
        ]
        self.assertLessEqual(errors[-1], 0.1)
        for before, after in zip(errors, errors[1:]):
            self.assertLessEqual(after, max(before, 1e-4))

    @pytest.mark.slow
    def test_samples_approach_the_transform_as_R_grows(self):
        """Test the sample of cos(2 pi x) at its frequency nears the discrete transform."""
        grid = unit_box(3, 16)
        base = build_stationary_baseline(grid)
        Q = ScalarField.from_function(grid, lambda x, y, z: np.cos(2 * PI * x))
        radii = [2.0, 4.0, 8.0]
        c2 = probe_experiment(base, Q, [(2, 0, 0)], radii)
        cell = float(np.prod(grid.spacing))
        errors = []
        for R in radii:
            (sample,) = recover_fourier_samples(c2, base, R=R).samples
            phase = np.exp(1j * sum(k * x for k, x in zip(sample.k, grid.coords)))
            exact = np.sum((cell * phase * Q.values)[grid.interior_mask])
            errors.append(abs(sample.value - exact) / abs(exact))
        self.assertLess(errors[1], errors[0])
        self.assertLess(errors[2], errors[1])


def first_order_suite(system, inputs):
    """First-order solutions of ``system`` for the ``(g, h)`` pairs in ``inputs``."""
    return [
        system.solve(g=g, h=h, method="direct", order=(label,))
        for label, (g, h) in enumerate(inputs, start=1)
    ]


class TerminalRecoveryTests(SimpleTestCase):
    """Test the first-order terminal cost."""

    def setUp(self):
        self.grid = line(7, nt=8)
        self.base = flat_base(self.grid)
        self.coeffs = MFGCoefficients.constant(self.grid, sigma=0.25)
        self.F1 = SpaceTimeField.constant(self.grid, 1.0)
        self.options = precise(coarsening=2)

    def archive(self, G1):
        system = LinearizedSystem.first_order(self.base, self.coeffs, self.F1, G1)
        g = BoundaryData.zero(self.grid)
        profiles = (lambda x: 1 + x, lambda x: 2 - x)
        inputs = [
            (g, BoundaryData.from_function(self.grid, lambda x, t, p=p: t * p(x)))
            for p in profiles
        ]
        return extract_c3(self.base, first_order_suite(system, inputs))

    def test_zero_terminal_cost(self):
        """Test data generated without terminal coupling give G1 = 0."""
        zero = ScalarField.constant(self.grid, 0.0)
        result = recover_terminal_linear(
            self.archive(zero), self.base, self.coeffs, self.F1, self.options
        )
        self.assertLess(l2_norm(result.G1), 1e-10)
        self.assertEqual(result.iterations, 1)

    def test_truth_in_the_hat_span(self):
        """Test a terminal cost built from the hats is recovered on the interior."""
        basis = HatBasis.spatial(self.grid, 2)
        coarse = self.grid.axes[0][self.grid.coarsened(2)[0]]
        G1 = ScalarField(self.grid, basis.synthesize(1 + 0.5 * np.cos(PI * coarse)))
        c3 = self.archive(G1)
        self.assertLess(terminal_misfit(c3, self.base, self.coeffs, self.F1, G1), 1e-10)
        result = recover_terminal_linear(c3, self.base, self.coeffs, self.F1, self.options)
        interior = self.grid.interior_mask
        np.testing.assert_allclose(result.G1.values[interior], G1.values[interior], atol=1e-4)
        self.assertLess(result.misfit, 1e-6)
        self.assertLessEqual(result.iterations, self.options.max_iter)

    def test_smooth_terminal_cost(self):
        """Test 1 + cos(pi x)/2 within fifteen percent."""
        G1 = ScalarField.from_function(self.grid, lambda x: 1 + 0.5 * np.cos(PI * x))
        result = recover_terminal_linear(
            self.archive(G1), self.base, self.coeffs, self.F1, self.options
        )
        self.assertLess(relative_l2_error(result.G1, G1), 0.15)
        self.assertEqual(set(result.to_dict()), {"iterations", "steps", "misfit", "fit"})

    def test_terminal_cost_in_two_dimensions(self):
        """Test 1 + cos(pi x1)/2 on the unit square within fifteen percent."""
        grid = build_grid(GridSpec(2, [(0.0, 1.0)] * 2, [7, 7], 8, 1.0))
        base = flat_base(grid)
        coeffs = MFGCoefficients.constant(grid, sigma=0.25)
        F1 = SpaceTimeField.constant(grid, 1.0)
        G1 = ScalarField.from_function(grid, lambda x, y: 1 + 0.5 * np.cos(PI * x))
        system = LinearizedSystem.first_order(base, coeffs, F1, G1)
        g = BoundaryData.zero(grid)
        profiles = (
            lambda x, y: 1 + x,
            lambda x, y: 2 - x,
            lambda x, y: 1 + y,
            lambda x, y: 2 - y,
        )
        inputs = [
            (g, BoundaryData.from_function(grid, lambda x, y, t, p=p: t * p(x, y)))
            for p in profiles
        ]
        c3 = extract_c3(base, first_order_suite(system, inputs))
        result = recover_terminal_linear(c3, base, coeffs, F1, precise(coarsening=4))
        self.assertLess(relative_l2_error(result.G1, G1), 0.15)


class HigherOrderRecoveryTests(SimpleTestCase):
    """Test the second-order running and terminal costs."""

    def setUp(self):
        self.use(line(7, nt=8))
        self.options = precise(coarsening=4, tikhonov_weight=1e-9)

    def use(self, grid):
        self.grid = grid
        self.base = flat_base(grid)
        self.coeffs = MFGCoefficients.constant(grid, sigma=0.25)
        self.known = CostModel(
            self.base.m,
            (SpaceTimeField.constant(grid, 1.0),),
            (ScalarField.constant(grid, 0.5),),
        )

    def archive(self, F2, G2=None):
        if G2 is None:
            G2 = ScalarField.constant(self.grid, 0.0)
        system = LinearizedSystem(self.base, self.coeffs, with_order(self.known, 2, F2, G2))
        profiles = (lambda x: 1 + 0 * x, lambda x: x, lambda x: 1 - x)
        g = [
            BoundaryData.from_function(self.grid, lambda x, t, p=p: 0.5 * t * p(x))
            for p in profiles
        ]
        h = [BoundaryData.from_function(self.grid, lambda x, t, p=p: t * p(x)) for p in profiles]
        expansion = LinearizedExpansion(system, PerturbationInput(g, h, (1.0,) * 3), "direct")
        labels = [(1,), (2,), (3,), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)]
        return extract_c3(self.base, [expansion.solution(l) for l in labels], (1.0,) * 3)

    def inner_error(self, recovered, truth):
        inner = (slice(1, -1), slice(1, -1))
        error = np.linalg.norm((recovered.values - truth.values)[inner])
        return error / np.linalg.norm(truth.values[inner])

    def test_zero_second_order_costs(self):
        """Test data without second-order costs give zero."""
        F2 = SpaceTimeField.constant(self.grid, 0.0)
        result = recover_higher_order(
            self.archive(F2), self.base, self.coeffs, self.known, 2, self.options
        )
        self.assertLess(np.max(np.abs(result.F.values)), 1e-8)
        self.assertLess(np.max(np.abs(result.G.values)), 1e-8)
        self.assertEqual(result.records, 6)

    @pytest.mark.slow
    def test_running_cost_and_round_trip(self):
        """Test sin(pi x) exp(-t) on the coarse hats and the re-simulated traces."""
        basis = HatBasis.space_time(self.grid, 4)
        times = self.grid.times[self.grid.time_coarsened(4)]
        nodes = self.grid.axes[0][self.grid.coarsened(4)[0]]
        coarse = np.exp(-times)[:, None] * np.sin(PI * nodes)[None, :]
        F2 = SpaceTimeField(self.grid, basis.synthesize(coarse.ravel()))
        c3 = self.archive(F2)
        result = recover_higher_order(c3, self.base, self.coeffs, self.known, 2, self.options)
        self.assertLess(self.inner_error(result.F, F2), 0.15)
        self.assertLess(l2_norm(result.G), 0.15 * l2_norm(F2.at(self.grid.nt // 2)))
        cost = with_order(self.known, 2, result.F, result.G)
        residual = round_trip_residual(c3, self.base, self.coeffs, cost, 2)
        self.assertLessEqual(residual, 2 * result.fit.residual + 1e-10)

    def test_smooth_running_cost(self):
        """Test sin(pi x) exp(-t) itself, off the hat span, with no terminal cost."""
        F2 = SpaceTimeField.from_function(self.grid, lambda x, t: np.sin(PI * x) * np.exp(-t))
        result = recover_higher_order(
            self.archive(F2), self.base, self.coeffs, self.known, 2, self.options
        )
        self.assertLess(self.inner_error(result.F, F2), 0.15)
        self.assertLess(np.max(np.abs(result.G.values)), 1e-3)

    @pytest.mark.slow
    def test_running_and_terminal_costs_together(self):
        """Test sin(pi x) exp(-t) with the terminal cost 0.5 + 0.3 cos(pi x)."""
        self.use(line(15, nt=16))
        F2 = SpaceTimeField.from_function(self.grid, lambda x, t: np.sin(PI * x) * np.exp(-t))
        G2 = ScalarField.from_function(self.grid, lambda x: 0.5 + 0.3 * np.cos(PI * x))
        result = recover_higher_order(
            self.archive(F2, G2), self.base, self.coeffs, self.known, 2, self.options
        )
        self.assertLess(self.inner_error(result.F, F2), 0.15)
        self.assertLess(relative_l2_error(result.G, G2), 0.05)

    def test_first_order_records_required(self):
        """Test an archive without mixed records is refused."""
        system = LinearizedSystem.first_order(self.base, self.coeffs)
        g = BoundaryData.from_function(self.grid, lambda x, t: 0 * x * t)
        h = BoundaryData.from_function(self.grid, lambda x, t: t * (1 + x))
        c3 = extract_c3(self.base, first_order_suite(system, [(g, h)]))
        with self.assertRaises(ArchiveError):
            recover_higher_order(c3, self.base, self.coeffs, self.known, 2, self.options)
        with self.assertRaises(ValueError):
            recover_higher_order(c3, self.base, self.coeffs, self.known, 1, self.options)


class UCPTests(SimpleTestCase):
    """Test the homogeneous system with zero Cauchy data."""

    def test_small_system(self):
        """Test zero Cauchy data leave only the zero state."""
        grid = line(7, nt=8)
        coeffs = MFGCoefficients.constant(grid, sigma=0.5)
        report = ucp_residual_check(
            flat_base(grid), coeffs, 1.0, ScalarField.constant(grid, 0.5)
        )
        self.assertTrue(report.injective)
        self.assertTrue(report.passed)
        self.assertLessEqual(report.interior_sup, 10 * report.tolerance)
        self.assertGreater(report.smallest_singular_value, 0.0)
        self.assertEqual(report.unknowns, 2 * 9 * 9)

    def test_bump_negative_control(self):
        """Test an interior bump leaves a residual far above the tolerance."""
        grid = build_grid(GridSpec(2, [(0.0, 1.0)] * 2, [5, 5], 4, 1.0))
        F1 = SpaceTimeField.from_function(grid, lambda x, y, t: 1 + 0.5 * np.cos(PI * x))
        report = ucp_residual_check(flat_base(grid), MFGCoefficients.constant(grid), F1)
        self.assertGreaterEqual(report.bump_residual, 1e3 * 10 * report.tolerance)
        self.assertTrue(report.to_dict()["passed"])

    def test_zero_coefficient_system(self):
        """Test the uncoupled system reports exactly zero."""
        grid = line(5, nt=4)
        report = ucp_residual_check(flat_base(grid), MFGCoefficients.constant(grid))
        self.assertEqual(report.interior_sup, 0.0)


class ReportTests(SimpleTestCase):
    """Test reconstruction reports."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.grid = line(7, nt=4)

    def tearDown(self):
        self.tmp.cleanup()

    def test_relative_error(self):
        """Test relative and absolute errors."""
        truth = ScalarField.constant(self.grid, 2.0)
        self.assertAlmostEqual(relative_l2_error(truth * 1.1, truth), 0.1, places=12)
        zero = ScalarField.constant(self.grid, 0.0)
        self.assertAlmostEqual(relative_l2_error(truth, zero), 2.0, places=12)
        st = SpaceTimeField.constant(self.grid, 1.0)
        self.assertAlmostEqual(relative_l2_error(st * 0.5, st), 0.5, places=12)

    def test_interior_only_ignores_boundary(self):
        """Test boundary nodes are left out on request."""
        truth = ScalarField.constant(self.grid, 1.0)
        values = truth.values.copy()
        values[0] = 5.0
        moved = truth.with_values(values)
        self.assertGreater(relative_l2_error(moved, truth), 0.1)
        self.assertEqual(relative_l2_error(moved, truth, interior_only=True), 0.0)

    def test_write(self):
        """Test the JSON report and field files."""
        field = ScalarField.from_function(self.grid, lambda x: 1 + x)
        report = ReconstructionReport(parameters={"tikhonov_weight": 1e-6}, seed=7)
        report.add("F1", field, {"rank": 3})
        report.compare({"F1": field, "G1": field})
        path = report.write(self.root)
        data = json.loads(path.read_text())
        self.assertEqual(data["relative_l2_error"], {"F1": 0.0})
        self.assertEqual(data["seed"], 7)
        self.assertEqual(data["diagnostics"]["F1"], {"rank": 3})
        loaded = read_field(self.root / "fields" / "F1.mfgf")
        np.testing.assert_array_equal(loaded.values, field.values)
