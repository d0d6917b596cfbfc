import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from grid.fieldio import (
    decode_field,
    encode_field,
    read_field,
    read_trace_csv,
    write_field,
    write_trace_csv,
)
from grid.fields import BoundaryTrace, ScalarField, SpaceTimeField, VectorField
from grid.mesh import GridSpec, build_grid
from grid.operators import (
    divergence,
    flux_matrix,
    gradient,
    integrate,
    integrate_faces,
    laplacian,
    potential_flux_matrix,
    restrict_to_boundary,
)
from mfglab.errors import ArchiveError, GridError


def unit_box(dim, n, nt=0, horizon=1.0):
    return build_grid(GridSpec(dim, [(0.0, 1.0)] * dim, [n] * dim, nt, horizon))


def fitted_order(spacings, errors):
    return np.polyfit(np.log(spacings), np.log(errors), 1)[0]


class GridConstructionTests(SimpleTestCase):
    """Test grid construction, boundary enumeration and quadrature weights."""

    def test_unit_interval_nodes(self):
        """Test a 1D grid carries interior plus two boundary nodes."""
        grid = unit_box(1, 5)
        self.assertEqual(grid.shape, (7,))
        self.assertEqual(grid.interior_indices.size, 5)
        self.assertEqual(grid.boundary_indices.size, 2)
        self.assertAlmostEqual(integrate(ScalarField.constant(grid, 1.0)), 1.0)

    def test_square_boundary_enumeration(self):
        """Test the 2D boundary has 4*8+4 nodes with outward unit normals."""
        grid = unit_box(2, 8)
        self.assertEqual(grid.boundary_indices.size, 4 * 8 + 4)
        norms = np.linalg.norm(grid.boundary_normals, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-14)
        centre = np.array([0.5, 0.5])
        outward = np.sum((grid.boundary_coords - centre) * grid.boundary_normals, 1)
        self.assertTrue(np.all(outward > 0))

    def test_box_volume_quadrature(self):
        """Test the integral of one over [0,2]x[0,1]x[0,1] is exactly 2."""
        grid = build_grid(GridSpec(3, [(0, 2), (0, 1), (0, 1)], [6, 5, 4]))
        value = integrate(ScalarField.constant(grid, 1.0))
        self.assertAlmostEqual(value, 2.0, delta=1e-12)

    def test_rejects_degenerate_extent(self):
        """Test that an empty extent is rejected."""
        with self.assertRaises(GridError):
            GridSpec(2, [(0, 1), (1, 1)], [5, 5])

    def test_rejects_undersized_counts(self):
        """Test that fewer than four interior points per axis are rejected."""
        with self.assertRaises(GridError):
            GridSpec(1, [(0, 1)], [3])
        with self.assertRaises(GridError):
            GridSpec(1, [(0, 1)], [8], nt=1)

    def test_rejects_bad_dimension(self):
        """Test that dimension four is rejected."""
        with self.assertRaises(GridError):
            GridSpec(4, [(0, 1)] * 4, [5] * 4)

    @settings(max_examples=25, deadline=None)
    @given(
        st.floats(min_value=0.1, max_value=5.0),
        st.floats(min_value=0.1, max_value=5.0),
        st.floats(min_value=-3.0, max_value=3.0),
    )
    def test_constant_quadrature_exact(self, lx, ly, c):
        """Test constants integrate to c times the box area on any box."""
        grid = build_grid(GridSpec(2, [(0, lx), (-1, -1 + ly)], [5, 7]))
        value = integrate(ScalarField.constant(grid, c))
        self.assertAlmostEqual(value, c * lx * ly, delta=1e-12 * (1 + abs(c)) * 25)


class FieldTests(SimpleTestCase):
    """Test the immutable field containers."""

    def setUp(self):
        self.grid = unit_box(2, 5)

    def test_values_are_read_only(self):
        """Test that field values cannot be modified in place."""
        field = ScalarField.constant(self.grid, 1.0)
        with self.assertRaises(ValueError):
            field.values[0, 0] = 2.0

    def test_rejects_non_finite(self):
        """Test that NaN values are rejected."""
        values = np.ones(self.grid.shape)
        values[1, 1] = np.nan
        with self.assertRaises(GridError):
            ScalarField(self.grid, values)

    def test_rejects_wrong_shape(self):
        """Test that a mismatched value array is rejected."""
        with self.assertRaises(GridError):
            ScalarField(self.grid, np.ones((3, 3)))

    def test_space_time_needs_time_levels(self):
        """Test that space-time fields need a time-dependent grid."""
        with self.assertRaises(GridError):
            SpaceTimeField(self.grid, np.ones((1,) + self.grid.shape))

    def test_space_time_slices(self):
        """Test time levels of a space-time field are scalar fields."""
        grid = unit_box(1, 6, nt=4, horizon=2.0)
        field = SpaceTimeField.from_function(grid, lambda x, t: x + t)
        self.assertEqual(field.values.shape, (5, 8))
        np.testing.assert_allclose(field.final.values, grid.axes[0] + 2.0)
        self.assertEqual(len(list(field.levels())), 5)


class OperatorTests(SimpleTestCase):
    """Test differential operators and traces."""

    def test_gradient_of_linear_field_is_exact(self):
        """Test the gradient of a*x+b equals a at every node."""
        grid = unit_box(3, 4)
        a = np.array([1.5, -2.0, 0.25])
        field = ScalarField.from_function(
            grid, lambda x1, x2, x3: a[0] * x1 + a[1] * x2 + a[2] * x3 + 3.0
        )
        grad = gradient(field)
        for axis in range(3):
            np.testing.assert_allclose(grad.components[axis], a[axis], atol=1e-12)

    def test_laplacian_of_quadratic_is_dimension(self):
        """Test the laplacian of |x|^2/2 equals n, boundary nodes included."""
        for dim in (1, 2, 3):
            grid = unit_box(dim, 5)
            field = ScalarField.from_function(
                grid, lambda *xs: sum(x**2 for x in xs) / 2
            )
            np.testing.assert_allclose(laplacian(field).values, dim, atol=1e-9)

    def test_laplacian_second_order(self):
        """Test the laplacian error of sin(pi x) decays at order two."""
        spacings, errors = [], []
        for n in (7, 15, 31):
            grid = unit_box(1, n)
            field = ScalarField.from_function(grid, lambda x: np.sin(np.pi * x))
            exact = -(np.pi**2) * np.sin(np.pi * grid.axes[0])
            errors.append(np.max(np.abs(laplacian(field).values - exact)))
            spacings.append(grid.spacing[0])
        self.assertAlmostEqual(fitted_order(spacings, errors), 2.0, delta=0.3)

    def test_divergence_of_gradient_matches_laplacian(self):
        """Test div(grad f) agrees with the laplacian at interior nodes."""
        grid = unit_box(2, 31)
        field = ScalarField.from_function(
            grid, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
        )
        lap = laplacian(field).values[grid.interior_mask]
        divgrad = divergence(gradient(field)).values[grid.interior_mask]
        self.assertLess(np.max(np.abs(lap - divgrad)), 0.02 * np.max(np.abs(lap)))

    def test_divergence_theorem(self):
        """Test the volume integral of div w matches the boundary flux."""
        grid = unit_box(2, 31)
        x, y = grid.coords
        comps = np.stack([np.sin(x) * np.cos(y), x * y**2])
        w = VectorField(grid, comps)
        volume = integrate(divergence(w))
        fluxes = [
            face.normal[face.axis] * comps[face.axis][face.index]
            for face in grid.faces
        ]
        self.assertAlmostEqual(volume, integrate_faces(grid, fluxes), delta=5e-3)

    def test_constant_trace(self):
        """Test a constant field has value c and zero normal derivative."""
        grid = unit_box(2, 5)
        trace = restrict_to_boundary(ScalarField.constant(grid, 2.5))
        for values, derivs in zip(trace.values, trace.normal_derivatives):
            np.testing.assert_allclose(values, 2.5)
            np.testing.assert_allclose(derivs, 0.0, atol=1e-12)

    def test_linear_trace_signs(self):
        """Test the normal derivative of x1 is -1 on x1- and +1 on x1+."""
        grid = unit_box(3, 4)
        trace = restrict_to_boundary(ScalarField.from_function(grid, lambda *x: x[0]))
        np.testing.assert_allclose(trace.face("x1-")[1], -1.0, atol=1e-12)
        np.testing.assert_allclose(trace.face("x1+")[1], 1.0, atol=1e-12)
        np.testing.assert_allclose(trace.face("x2+")[1], 0.0, atol=1e-12)

    def test_exponential_normal_derivative(self):
        """Test the normal derivative of e^x1 on x1=1 is e within O(h^2)."""
        grid = unit_box(1, 31)
        trace = restrict_to_boundary(ScalarField.from_function(grid, np.exp))
        self.assertAlmostEqual(float(trace.face("x1+")[1]), np.e, delta=5e-3)

    def test_space_time_trace_shape(self):
        """Test traces of space-time fields carry the time axis first."""
        grid = unit_box(2, 4, nt=3)
        field = SpaceTimeField.from_function(grid, lambda x, y, t: x * t)
        trace = restrict_to_boundary(field)
        self.assertTrue(trace.time_dependent)
        self.assertEqual(trace.values[0].shape, (4, 6))
        np.testing.assert_allclose(trace.face("x1+")[1][2], grid.times[2], atol=1e-12)


class IntegrationTests(SimpleTestCase):
    """Test quadrature over the supported regions."""

    def test_perimeter(self):
        """Test the boundary integral of one over the unit square is 4."""
        grid = unit_box(2, 6)
        self.assertAlmostEqual(
            integrate(ScalarField.constant(grid, 1.0), "boundary"), 4.0, delta=1e-12
        )

    def test_sine_product(self):
        """Test the integral of sin(pi x)sin(pi y) approaches 4/pi^2."""
        grid = unit_box(2, 31)
        field = ScalarField.from_function(
            grid, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
        )
        self.assertAlmostEqual(integrate(field), 4 / np.pi**2, delta=1e-3)

    def test_lateral_and_space_time(self):
        """Test space-time and lateral integrals of constants."""
        grid = unit_box(2, 5, nt=4, horizon=2.0)
        field = SpaceTimeField.constant(grid, 1.0)
        self.assertAlmostEqual(integrate(field, "space-time"), 2.0, delta=1e-12)
        self.assertAlmostEqual(integrate(field, "boundary"), 8.0, delta=1e-12)

    def test_unknown_region(self):
        """Test an unknown region tag is rejected."""
        grid = unit_box(1, 5)
        with self.assertRaises(GridError):
            integrate(ScalarField.constant(grid, 1.0), "volume")

    def test_space_time_region_on_scalar(self):
        """Test the space-time region is rejected for spatial fields."""
        grid = unit_box(1, 5, nt=2)
        with self.assertRaises(GridError):
            integrate(ScalarField.constant(grid, 1.0), "space-time")


class SparseOperatorTests(SimpleTestCase):
    """Test the sparse operator builders shared by the solvers."""

    def setUp(self):
        self.grid = unit_box(2, 6)
        rng = np.random.default_rng(7)
        self.p = rng.normal(size=self.grid.size)
        self.m = 1 + rng.random(self.grid.size)
        self.kappa = 1 + rng.random(self.grid.size)

    def test_flux_with_unit_density_is_laplacian(self):
        """Test div(grad p) through the flux matrix equals the laplacian."""
        ones = np.ones(self.grid.size)
        lhs = flux_matrix(self.grid, 1.0, self.p) @ ones
        rhs = self.grid.laplacian_matrix @ self.p
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_flux_is_bilinear_in_density_and_potential(self):
        """Test D(kappa, p) m equals P(kappa, m) p."""
        lhs = flux_matrix(self.grid, self.kappa, self.p) @ self.m
        rhs = potential_flux_matrix(self.grid, self.kappa, self.m) @ self.p
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_boundary_rows_are_empty(self):
        """Test operator rows at boundary nodes are zero."""
        mat = flux_matrix(self.grid, self.kappa, self.p)
        rows = mat[self.grid.boundary_indices]
        self.assertEqual(rows.count_nonzero(), 0)


class FieldFileTests(SimpleTestCase):
    """Test the binary field format and CSV traces."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_binary_header_layout(self):
        """Test the header starts with the magic and version."""
        grid = unit_box(2, 4, nt=2)
        payload = encode_field(ScalarField.constant(grid, 1.0))
        self.assertEqual(payload[:4], b"MFGF")
        self.assertEqual(payload[4:6], (1).to_bytes(2, "little"))
        self.assertEqual(payload[6], 2)
        self.assertEqual(len(payload), 4 + 3 + 8 + 32 + 4 + 8 + 8 * 36)

    def test_field_file_restores_grid_and_values(self):
        """Test a written space-time field reads back bit-identically."""
        grid = build_grid(GridSpec(1, [(-1.0, 2.0)], [6], nt=3, horizon=0.5))
        field = SpaceTimeField.from_function(grid, lambda x, t: np.sin(x) * (1 + t))
        write_field(self.dir / "m.mfgf", field)
        restored = read_field(self.dir / "m.mfgf")
        self.assertEqual(restored.grid, grid)
        np.testing.assert_array_equal(restored.values, field.values)

    def test_complex_field_pair(self):
        """Test complex fields are written as a real/imaginary pair."""
        grid = unit_box(1, 5)
        field = ScalarField(grid, np.exp(1j * grid.axes[0]))
        paths = write_field(self.dir / "probe", field)
        self.assertEqual([p.name for p in paths], ["probe.re", "probe.im"])
        restored = read_field(self.dir / "probe")
        np.testing.assert_array_equal(restored.values, field.values)

    def test_bad_magic(self):
        """Test a foreign file is rejected."""
        with self.assertRaises(ArchiveError):
            decode_field(b"NOPE" + bytes(40))

    def test_missing_file(self):
        """Test a missing field file raises an archive error."""
        with self.assertRaises(ArchiveError):
            read_field(self.dir / "absent.mfgf")

    def test_trace_csv_round_trip(self):
        """Test CSV traces keep full precision through export and import."""
        grid = unit_box(2, 4, nt=2)
        field = SpaceTimeField.from_function(
            grid, lambda x, y, t: np.exp(x) * np.cos(3 * y) + t / 3
        )
        trace = restrict_to_boundary(field)
        write_trace_csv(self.dir / "trace.csv", trace)
        restored = read_trace_csv(self.dir / "trace.csv", grid, time_dependent=True)
        for a, b in zip(trace.values, restored.values):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(trace.normal_derivatives, restored.normal_derivatives):
            np.testing.assert_array_equal(a, b)

    def test_trace_csv_header(self):
        """Test the CSV header lists face, node indices, time and values."""
        grid = unit_box(2, 4)
        trace = restrict_to_boundary(ScalarField.constant(grid, 1.0))
        write_trace_csv(self.dir / "t.csv", trace)
        header = (self.dir / "t.csv").read_text().splitlines()[0]
        self.assertEqual(header, "face,i1,i2,t,value,normal_derivative")

    def test_no_temp_files_left(self):
        """Test atomic writes leave only the target file behind."""
        grid = unit_box(1, 5)
        write_field(self.dir / "f.mfgf", ScalarField.constant(grid, 0.0))
        self.assertEqual([p.name for p in self.dir.iterdir()], ["f.mfgf"])

    def test_trace_requires_one_array_per_face(self):
        """Test a trace with a missing face is rejected."""
        grid = unit_box(1, 5)
        with self.assertRaises(GridError):
            BoundaryTrace(grid, (np.zeros(()),), (np.zeros(()),))
