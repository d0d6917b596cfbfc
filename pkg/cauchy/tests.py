import json
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest
from django.test import SimpleTestCase

from cauchy.archives import config_hash, read_archive, read_manifest, write_archive
from cauchy.energy import (
    PowerLawExperiment,
    check_energy_identity,
    energy_integral_from_boundary,
    recover_power_coefficient,
)
from cauchy.measurements import (
    ExperimentRecord,
    MeasurementC2,
    MeasurementC3,
    ProbeRecord,
    extract_c1,
    extract_c2,
    extract_c3,
    gaussian_noise,
)
from cauchy.probing import frequency_lattice, probe_experiment, record_label
from forward.coefficients import (
    BoundaryData,
    MFGCoefficients,
    TimeDependentSolution,
)
from forward.solvers import solve_mfg_timedep
from forward.stationary import build_stationary_baseline
from grid.fields import ScalarField, SpaceTimeField
from grid.mesh import GridSpec, build_grid
from grid.operators import restrict_to_boundary
from linearize.systems import LinearizedSolution
from mfglab.errors import (
    ArchiveError,
    ArchiveIntegrityError,
    ConfigError,
    GridError,
    PositivityFloor,
)

PI = np.pi


def line(n, nt=0, horizon=1.0):
    return build_grid(GridSpec(1, [(0.0, 1.0)], [n], nt, horizon))


def square(n, nt=0):
    return build_grid(GridSpec(2, [(0.0, 1.0)] * 2, [n, n], nt))


def unit_box(dim, n):
    return build_grid(GridSpec(dim, [(0.0, 1.0)] * dim, [n] * dim))


def fitted_order(spacings, errors):
    return np.polyfit(np.log(spacings), np.log(errors), 1)[0]


def field_solution(grid, v, m):
    v = SpaceTimeField.from_function(grid, v)
    m = SpaceTimeField.from_function(grid, m)
    return TimeDependentSolution(v, m, m.initial)


def heat_solution(grid):
    """Constant value, heat-equation density: a solution with F = 0."""
    return field_solution(
        grid,
        lambda x, t: 2.0 + 0 * x * t,
        lambda x, t: 1 + np.exp(-(PI**2) * t) * np.cos(PI * x),
    )


BETA = 0.5


def _w(x):
    return 0.3 * np.cos(PI * x)


def gibbs_solution(grid):
    """``v = w + beta (T - t)`` with the Gibbs density ``exp(-w)``."""
    return field_solution(
        grid,
        lambda x, t: _w(x) + BETA * (grid.horizon - t),
        lambda x, t: np.exp(-_w(x)) + 0 * t,
    )


def gibbs_running(grid):
    def F(x, t):
        dw = -0.3 * PI * np.sin(PI * x)
        d2w = -0.3 * PI**2 * np.cos(PI * x)
        return BETA - d2w + 0.5 * dw**2 + 0 * t

    return SpaceTimeField.from_function(grid, F)


class MeasurementC1Tests(SimpleTestCase):
    """Test the slices and lateral traces of forward solutions."""

    def test_constant_solution_has_no_flux(self):
        """Test normal derivatives vanish for a constant solution."""
        grid = square(5, nt=3)
        solution = field_solution(grid, lambda x, y, t: 1.5 + 0 * t, lambda x, y, t: 0.8 + 0 * t)
        c1 = extract_c1(solution, MFGCoefficients.constant(grid))
        for trace in c1.traces().values():
            self.assertTrue(trace.time_dependent)
            for d in trace.normal_derivatives:
                np.testing.assert_allclose(d, 0.0, atol=1e-12)
        np.testing.assert_allclose(c1.v_final.values, 1.5)
        np.testing.assert_allclose(c1.sigma_m_trace.values[0], 0.8)

    def test_sigma_m_trace_uses_coefficients(self):
        """Test the sigma m trace scales with sigma."""
        grid = line(6, nt=3)
        solution = heat_solution(grid)
        c1 = extract_c1(solution, MFGCoefficients.constant(grid, sigma=2.0))
        for a, b in zip(c1.sigma_m_trace.values, c1.m_trace.values):
            np.testing.assert_allclose(a, 2.0 * b)

    def test_traces_are_local(self):
        """Test an interior bump away from the traces leaves C1 unchanged."""
        grid = square(9, nt=6)
        coeffs = MFGCoefficients.constant(grid)
        base = field_solution(
            grid,
            lambda x, y, t: np.sin(x + 2 * y) * (1 - t),
            lambda x, y, t: 1 + 0.2 * x * y + 0.1 * t,
        )
        bump = np.zeros(grid.space_time_shape)
        bump[2:5, 4:7, 4:7] = 0.7
        moved = TimeDependentSolution(base.v + bump, base.m + bump, base.f)
        first, second = extract_c1(base, coeffs), extract_c1(moved, coeffs)
        for name, trace in first.traces().items():
            self.assertEqual((trace - second.traces()[name]).max_abs(), 0.0, name)
        for name, values in first.slices().items():
            np.testing.assert_array_equal(values.values, second.slices()[name].values)

    def test_momentum_reads_kappa(self):
        """Test kappa d_nu v on each face."""
        grid = line(7, nt=2)
        solution = field_solution(grid, lambda x, t: x**2 + 0 * t, lambda x, t: 1 + 0 * x * t)
        coeffs = MFGCoefficients.constant(grid, kappa=3.0)
        momentum = extract_c1(solution, coeffs).momentum(coeffs)
        # d_nu (x^2) is 0 at x = 0 and 2 at x = 1; the 3-point stencil is exact.
        np.testing.assert_allclose(momentum[0], 0.0, atol=1e-12)
        np.testing.assert_allclose(momentum[1], 6.0, atol=1e-12)

    def test_stationary_traces_rejected(self):
        """Test a C1 record needs time-dependent traces."""
        grid = line(5, nt=2)
        c1 = extract_c1(heat_solution(grid), MFGCoefficients.constant(grid))
        with self.assertRaises(GridError):
            c1.map_traces(lambda trace: restrict_to_boundary(c1.m_initial))


class EnergyIdentityTests(SimpleTestCase):
    """Test the boundary functional against the volume energy."""

    def test_heat_solution_carries_no_energy(self):
        """Test B vanishes for a constant value function and F = 0."""
        grid = line(15, nt=16)
        coeffs = MFGCoefficients.constant(grid)
        check = check_energy_identity(
            heat_solution(grid), coeffs, SpaceTimeField.zeros(grid)
        )
        self.assertAlmostEqual(check.boundary, 0.0, places=10)
        self.assertEqual(check.volume, 0.0)
        self.assertEqual(check.defect, 0.0)
        self.assertLess(check.gap, 1e-10)

    @pytest.mark.slow
    def test_gibbs_solution_second_order(self):
        """Test the identity gap decays at second order under refinement."""
        spacings, gaps, constants = [], [], []
        for n in (7, 15, 31):
            grid = line(n, nt=n + 1)
            check = check_energy_identity(
                gibbs_solution(grid), MFGCoefficients.constant(grid), gibbs_running(grid)
            )
            self.assertGreater(check.volume, 0.1)
            spacings.append(check.h)
            gaps.append(check.gap)
            constants.append(check.constant)
        self.assertLess(gaps[-1], 1e-3)
        self.assertGreater(fitted_order(spacings, gaps), 1.7)
        self.assertLess(max(constants), 10 * min(constants))
        self.assertEqual(set(check.to_dict()), {"boundary", "volume", "defect", "gap", "h", "constant"})

    def test_boundary_functional_is_linear_in_the_density(self):
        """Test B doubles with m when v is held fixed."""
        grid = line(9, nt=6)
        coeffs = MFGCoefficients.constant(grid)
        solution = gibbs_solution(grid)
        doubled = TimeDependentSolution(solution.v, solution.m * 2.0, solution.f)
        single = energy_integral_from_boundary(extract_c1(solution, coeffs), coeffs)
        double = energy_integral_from_boundary(extract_c1(doubled, coeffs), coeffs)
        self.assertAlmostEqual(double, 2 * single, places=12)


class PowerLawTests(SimpleTestCase):
    """Test the constant-density power-law experiment."""

    def test_closed_form_recovery(self):
        """Test alpha is recovered exactly from the closed-form solution."""
        grid = line(7, nt=8)
        coeffs = MFGCoefficients.constant(grid)
        experiment = PowerLawExperiment(grid, alpha=0.7, k=2, c=0.5)
        c1 = extract_c1(experiment.solution(), coeffs)
        self.assertAlmostEqual(energy_integral_from_boundary(c1, coeffs), 0.175, places=12)
        self.assertAlmostEqual(recover_power_coefficient(c1, coeffs, 2, 0.5), 0.7, places=12)

    def test_recovery_in_two_dimensions(self):
        """Test a cubic law on a square box of area two."""
        grid = build_grid(GridSpec(2, [(0.0, 2.0), (0.0, 1.0)], [6, 5], 4, 0.5))
        coeffs = MFGCoefficients.constant(grid, sigma=0.5)
        experiment = PowerLawExperiment(grid, alpha=1.3, k=3, c=2.0)
        c1 = extract_c1(experiment.solution(), coeffs)
        self.assertAlmostEqual(recover_power_coefficient(c1, coeffs, 3, 2.0), 1.3, places=12)

    def test_cost_is_read_against_the_density(self):
        """Test the rate F = alpha c^(k-1), so the integral of F m is alpha c^k T |Omega|."""
        grid = build_grid(GridSpec(2, [(0.0, 2.0), (0.0, 1.0)], [6, 5], 4, 0.5))
        coeffs = MFGCoefficients.constant(grid, sigma=0.5)
        experiment = PowerLawExperiment(grid, alpha=1.3, k=3, c=2.0)
        self.assertAlmostEqual(experiment.rate, 5.2, places=12)
        c1 = extract_c1(experiment.solution(), coeffs)
        energy = energy_integral_from_boundary(c1, coeffs)
        self.assertAlmostEqual(energy, 1.3 * 2.0**3 * 0.5 * 2.0, places=10)
        self.assertNotAlmostEqual(energy / (2.0**4 * 0.5 * 2.0), 1.3, places=3)

    def test_forward_solver_reproduces_the_experiment(self):
        """Test the MFG solver driven by the experiment's data and cost."""
        grid = line(7, nt=8)
        coeffs = MFGCoefficients.constant(grid)
        experiment = PowerLawExperiment(grid, alpha=0.7, k=2, c=0.5)
        g, h = experiment.boundary_data()
        solution = solve_mfg_timedep(
            coeffs, experiment.cost_model(), ScalarField.constant(grid, 0.5), g, h
        )
        exact = experiment.solution()
        np.testing.assert_allclose(solution.v.values, exact.v.values, atol=1e-7)
        np.testing.assert_allclose(solution.m.values, exact.m.values, atol=1e-7)
        alpha = recover_power_coefficient(extract_c1(solution, coeffs), coeffs, 2, 0.5)
        self.assertAlmostEqual(alpha, 0.7, places=6)

    def test_zero_coefficient(self):
        """Test alpha = 0 gives a zero energy."""
        grid = line(5, nt=4)
        coeffs = MFGCoefficients.constant(grid)
        c1 = extract_c1(PowerLawExperiment(grid, 0.0, 2, 0.5).solution(), coeffs)
        self.assertEqual(recover_power_coefficient(c1, coeffs, 2, 0.5), 0.0)

    def test_rejected_parameters(self):
        """Test vanishing density and powers below one."""
        grid = line(5, nt=4)
        coeffs = MFGCoefficients.constant(grid)
        c1 = extract_c1(PowerLawExperiment(grid, 0.7, 2, 0.5).solution(), coeffs)
        with self.assertRaises(PositivityFloor):
            recover_power_coefficient(c1, coeffs, 2, 0.0)
        with self.assertRaises(ConfigError):
            recover_power_coefficient(c1, coeffs, 0, 0.5)
        with self.assertRaises(ConfigError):
            PowerLawExperiment(grid, 0.7, 0, 0.5)
        with self.assertRaises(ConfigError):
            PowerLawExperiment(grid, 0.7, 1, 0.5).cost_model()
        with self.assertRaises(ConfigError):
            PowerLawExperiment(line(5), 0.7, 2, 0.5)


class MeasurementC2Tests(SimpleTestCase):
    """Test probing records and their comparison."""

    def setUp(self):
        self.grid = square(5)
        self.base = build_stationary_baseline(self.grid)

    def record(self, n, R, value=1.0):
        trace = restrict_to_boundary(ScalarField.constant(self.grid, value))
        return ProbeRecord(record_label(n, R), n, R, np.array([1j, 1.0]), trace)

    def test_record_lookup(self):
        """Test records are found by frequency index and radius."""
        c2 = extract_c2(self.base, [self.record((1, 0), 1.0), self.record((1, 0), 2.0)])
        self.assertEqual(c2.record([1, 0], 2).label, "n_p1_p0_R2")
        self.assertEqual(c2.radii(), (1.0, 2.0))
        with self.assertRaises(ArchiveError):
            c2.record((0, 1), 1.0)

    def test_duplicate_keys_rejected(self):
        """Test two records with the same (n, R) are refused."""
        with self.assertRaises(GridError):
            extract_c2(self.base, [self.record((1, 0), 1.0), self.record((1, 0), 1.0)])

    def test_equivalence(self):
        """Test equivalence is reflexive and sees perturbed records."""
        c2 = extract_c2(self.base, [self.record((0, 1), 1.0)])
        same = extract_c2(self.base, [self.record((0, 1), 1.0)])
        shifted = extract_c2(self.base, [self.record((0, 1), 1.0, value=1.001)])
        self.assertTrue(c2.equivalent(c2))
        self.assertTrue(c2.equivalent(same) and same.equivalent(c2))
        self.assertFalse(c2.equivalent(shifted))
        self.assertTrue(c2.equivalent(shifted, tol=1e-2))
        self.assertFalse(c2.equivalent(extract_c2(self.base)))

    def test_record_label(self):
        """Test signed labels."""
        self.assertEqual(record_label((1, -2, 0), 0.5), "n_p1_m2_p0_R0.5")


class ProbingTests(SimpleTestCase):
    """Test synthetic probing experiments."""

    def setUp(self):
        self.grid = unit_box(3, 5)
        self.base = build_stationary_baseline(self.grid)
        self.indices = [(0, 0, 0), (1, 0, 0), (0, 1, 0)]

    def test_frequency_lattice(self):
        """Test the lattice size and that the zero index comes first."""
        lattice = frequency_lattice(3, 1)
        self.assertEqual(len(lattice), 27)
        self.assertEqual(lattice[0], (0, 0, 0))
        self.assertEqual(len(set(lattice)), 27)
        self.assertEqual(frequency_lattice(2, 0), [(0, 0)])
        with self.assertRaises(ConfigError):
            frequency_lattice(2, -1)

    def test_zero_source_records_unit_traces(self):
        """Test F1 = 0 records y = 1 on the boundary."""
        F1 = ScalarField.constant(self.grid, 0.0)
        c2 = probe_experiment(self.base, F1, self.indices, [2.0])
        self.assertEqual(len(c2.records), 3)
        for record in c2.records:
            self.assertFalse(record.trace.time_dependent)
            for values, derivs in zip(record.trace.values, record.trace.normal_derivatives):
                np.testing.assert_allclose(values, 1.0, atol=1e-12)
                np.testing.assert_allclose(derivs, 0.0, atol=1e-10)

    def test_records_carry_probe_vectors(self):
        """Test each record stores an isotropic probe of its radius."""
        F1 = ScalarField.constant(self.grid, 0.0)
        c2 = probe_experiment(self.base, F1, self.indices[1:], [1.0, 2.0])
        for record in c2.records:
            self.assertAlmostEqual(abs(np.sum(record.xi * record.xi)), 0.0, places=10)
        self.assertEqual(c2.radii(), (1.0, 2.0))

    @pytest.mark.slow
    def test_parallel_records_match_serial(self):
        """Test an executor produces the same records as the serial path."""
        F1 = ScalarField.constant(self.grid, 0.5)
        serial = probe_experiment(self.base, F1, self.indices, [2.0])
        with ThreadPoolExecutor(max_workers=2) as pool:
            parallel = probe_experiment(self.base, F1, self.indices, [2.0], executor=pool)
        self.assertTrue(serial.equivalent(parallel))
        deviation = max(
            np.max(np.abs(values - 1.0)) for r in serial.records for values in r.trace.values
        )
        self.assertGreater(deviation, 1e-6)


def perturbation_records(grid):
    v = SpaceTimeField.from_function(grid, lambda x, t: t * (1 + x))
    m = SpaceTimeField.from_function(grid, lambda x, t: 0.5 * t * x)
    first = LinearizedSolution((1,), v, m)
    second = LinearizedSolution((2,), v * 2.0, m * 0.0)
    mixed = LinearizedSolution((2, 1), v * v, m * 3.0)
    return [first, second, mixed], v, m


class MeasurementC3Tests(SimpleTestCase):
    """Test perturbation records."""

    def setUp(self):
        self.grid = line(6, nt=4)
        base = field_solution(self.grid, lambda x, t: 1 - t + 0 * x, lambda x, t: 1 + 0 * x * t)
        self.derivatives, self.v, self.m = perturbation_records(self.grid)
        self.c3 = extract_c3(base, self.derivatives, epsilon=(0.1, 0.2))

    def test_records_by_order(self):
        """Test records are tagged with sorted multi-indices."""
        self.assertEqual(len(self.c3.of_order(1)), 2)
        self.assertEqual(self.c3.record((1, 2)).name, "d1_2")
        self.assertEqual(self.c3.record([2, 1]).order, 2)
        with self.assertRaises(ArchiveError):
            self.c3.record((1, 1))

    def test_perturbation_input_from_traces(self):
        """Test the first-order Dirichlet data are read back from the traces."""
        inputs = self.c3.perturbation_input()
        self.assertEqual(inputs.epsilon, (0.1, 0.2))
        expected = BoundaryData.from_field(self.v)
        np.testing.assert_allclose(inputs.g[0].boundary_values(), expected.boundary_values())
        np.testing.assert_allclose(
            inputs.h[0].boundary_values(), BoundaryData.from_field(self.m).boundary_values()
        )
        np.testing.assert_allclose(inputs.g[1].boundary_values(), 2 * expected.boundary_values())

    def test_first_order_labels_must_be_contiguous(self):
        """Test a suite missing label 1 cannot be turned into inputs."""
        gap = MeasurementC3(
            self.grid,
            self.c3.v_trace,
            self.c3.m_trace,
            [self.c3.record((2,))],
        )
        with self.assertRaises(ArchiveError):
            gap.perturbation_input()

    def test_stationary_derivatives_rejected(self):
        """Test records need space-time solutions."""
        flat = LinearizedSolution((1,), self.v.initial, self.m.initial)
        base = field_solution(self.grid, lambda x, t: 0 * x * t, lambda x, t: 1 + 0 * x * t)
        with self.assertRaises(GridError):
            extract_c3(base, [flat])

    def test_record_traces_time_dependent(self):
        """Test a stationary trace cannot form a record."""
        trace = restrict_to_boundary(self.v.initial)
        with self.assertRaises(GridError):
            ExperimentRecord((1,), trace, trace)


class NoiseTests(SimpleTestCase):
    """Test reproducible trace noise."""

    def setUp(self):
        self.trace = restrict_to_boundary(
            ScalarField.from_function(square(5), lambda x, y: 1 + x * y)
        )

    def test_zero_level_is_identity(self):
        """Test level zero returns the trace untouched."""
        self.assertIs(gaussian_noise(0.0, 1)(self.trace), self.trace)

    def test_seeded_noise_is_reproducible(self):
        """Test the same seed gives the same noise and another seed does not."""
        a = gaussian_noise(0.01, 7)(self.trace)
        b = gaussian_noise(0.01, 7)(self.trace)
        c = gaussian_noise(0.01, 8)(self.trace)
        self.assertEqual((a - b).max_abs(), 0.0)
        self.assertGreater((a - c).max_abs(), 0.0)
        self.assertLess((a - self.trace).max_abs(), 0.1 * self.trace.max_abs())

    def test_negative_level_rejected(self):
        with self.assertRaises(ValueError):
            gaussian_noise(-0.1, 0)


class ArchiveTests(SimpleTestCase):
    """Test measurement archives on disk."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.digest = config_hash({"grid": {"nx": [5]}, "seed": 0})

    def tearDown(self):
        self.tmp.cleanup()

    def test_config_hash_is_canonical(self):
        """Test key order does not change the hash."""
        self.assertEqual(config_hash({"a": 1, "b": [1, 2]}), config_hash({"b": [1, 2], "a": 1}))
        self.assertNotEqual(config_hash({"a": 1}), config_hash({"a": 2}))
        self.assertEqual(len(self.digest), 64)

    def test_c1_round_trip(self):
        """Test slices and traces of a C1 archive survive the disk."""
        grid = line(6, nt=4)
        coeffs = MFGCoefficients.constant(grid)
        c1 = extract_c1(gibbs_solution(grid), coeffs)
        write_archive(self.root / "c1", c1, self.digest, knowns={"sigma": 1.0})
        loaded, manifest = read_archive(self.root / "c1", self.digest, kind="c1")
        self.assertEqual(manifest["knowns"], {"sigma": 1.0})
        self.assertEqual(manifest["grid"], grid.spec.to_dict())
        for name, trace in c1.traces().items():
            self.assertEqual((trace - loaded.traces()[name]).max_abs(), 0.0)
        np.testing.assert_array_equal(loaded.v_initial.values, c1.v_initial.values)
        self.assertAlmostEqual(
            energy_integral_from_boundary(loaded, coeffs),
            energy_integral_from_boundary(c1, coeffs),
            places=12,
        )

    def test_c2_round_trip_keeps_complex_probes(self):
        """Test records, labels and probe vectors of a C2 archive."""
        grid = square(5)
        base = build_stationary_baseline(grid)
        trace = restrict_to_boundary(
            ScalarField.from_function(grid, lambda x, y: np.exp(1j * x) + y)
        )
        record = ProbeRecord("n_p1_p0_R1", (1, 0), 1.0, np.array([0.5 + 1j, 1 - 0.5j]), trace)
        c2 = extract_c2(base, [record])
        write_archive(self.root / "c2", c2, self.digest)
        loaded, _ = read_archive(self.root / "c2", kind="c2")
        self.assertIsInstance(loaded, MeasurementC2)
        self.assertTrue(c2.equivalent(loaded))
        np.testing.assert_array_equal(loaded.record((1, 0), 1.0).xi, record.xi)

    def test_c3_round_trip(self):
        """Test multi-indices and amplitudes of a C3 archive."""
        grid = line(6, nt=4)
        base = field_solution(grid, lambda x, t: 1 - t + 0 * x, lambda x, t: 1 + 0 * x * t)
        derivatives, _, _ = perturbation_records(grid)
        c3 = extract_c3(base, derivatives, epsilon=(0.1, 0.2))
        write_archive(self.root / "c3", c3, self.digest)
        loaded, manifest = read_archive(self.root / "c3", self.digest)
        self.assertEqual(loaded.epsilon, (0.1, 0.2))
        self.assertEqual(sorted(r.labels for r in loaded.records), [(1,), (1, 2), (2,)])
        self.assertEqual(
            (loaded.record((1, 2)).v_trace - c3.record((1, 2)).v_trace).max_abs(), 0.0
        )
        self.assertEqual(len(manifest["records"]), 3)

    def test_hash_mismatch_refused(self):
        """Test an archive from another configuration is refused."""
        grid = line(6, nt=4)
        c1 = extract_c1(heat_solution(grid), MFGCoefficients.constant(grid))
        write_archive(self.root / "c1", c1, self.digest)
        with self.assertRaises(ArchiveIntegrityError):
            read_archive(self.root / "c1", config_hash({"seed": 1}))
        with self.assertRaises(ArchiveError):
            read_archive(self.root / "c1", kind="c2")

    def test_missing_and_malformed_archives(self):
        """Test absent directories, foreign manifests and missing traces."""
        with self.assertRaises(ArchiveError):
            read_archive(self.root / "absent")
        foreign = self.root / "foreign"
        foreign.mkdir()
        (foreign / "manifest.json").write_text(json.dumps({"format": "other"}))
        with self.assertRaises(ArchiveError):
            read_manifest(foreign)
        grid = line(6, nt=4)
        c1 = extract_c1(heat_solution(grid), MFGCoefficients.constant(grid))
        write_archive(self.root / "c1", c1, self.digest)
        (self.root / "c1" / "traces" / "sigma_m.csv").unlink()
        with self.assertRaises(ArchiveError):
            read_archive(self.root / "c1")

    def test_noise_is_reproducible_per_seed(self):
        """Test noisy archives with the same seed hold the same traces."""
        grid = line(6, nt=4)
        c1 = extract_c1(gibbs_solution(grid), MFGCoefficients.constant(grid))
        for name, seed in (("a", 3), ("b", 3), ("c", 4)):
            write_archive(self.root / name, c1, self.digest, noise_level=0.01, seed=seed)
        a, manifest = read_archive(self.root / "a")
        b, _ = read_archive(self.root / "b")
        c, _ = read_archive(self.root / "c")
        self.assertEqual(manifest["noise"], {"level": 0.01, "seed": 3})
        self.assertEqual((a.v_trace - b.v_trace).max_abs(), 0.0)
        self.assertGreater((a.v_trace - c.v_trace).max_abs(), 0.0)
        self.assertGreater((a.v_trace - c1.v_trace).max_abs(), 0.0)
