import copy
import json
import shutil
import tempfile
from io import StringIO
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from experiments.commands import exit_code
from experiments.config import load_config, loads_config, parse_config
from experiments.expressions import Expression
from experiments.manifest import RUN_MANIFEST, ExperimentManifest
from experiments.runner import field_name, multi_indices
from experiments.verification import (
    PROPERTIES,
    PropertyResult,
    evaluate,
    non_increasing,
    select,
)
from grid.mesh import GridSpec, build_grid
from mfglab.errors import (
    ArchiveIntegrityError,
    BlowUp,
    ConfigError,
    GridError,
    IncompatibleData,
    InconsistentCauchyData,
    PropertyFailure,
)

PI = np.pi

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "default.json"

SMALL = {
    "name": "small",
    "seed": 7,
    "grid": {"dim": 1, "nx": [7], "nt": 8, "horizon": 1.0},
    "coefficients": {"sigma": "0.25"},
    "cost": {"expansion_density": "1", "F": ["1"], "G": ["0.5"]},
    "baseline": {"initial_density": "1", "value": "0", "density": "1"},
    "perturbations": {
        "inputs": [
            {"g": "0.5*t*(1+x1)", "h": "t*(1+x1)"},
            {"g": "0.5*t*(2-x1)", "h": "t*(2-x1)"},
        ]
    },
    "solver": {"tol": 1e-12, "newton_tol": 1e-13, "max_iter": 400},
    "recovery": {"order": 1, "coarsening": 2, "tikhonov_weight": 1e-10},
}


def small(**changes):
    data = copy.deepcopy(SMALL)
    data.update(changes)
    return data


def line(n, nt=0):
    return build_grid(GridSpec(1, [(0.0, 1.0)], [n], nt, 1.0))


class ExpressionTests(SimpleTestCase):
    """Test the whitelisted expression language."""

    def test_numbers_and_constants(self):
        """Test plain numbers, pi and e evaluate without a grid variable."""
        self.assertEqual(Expression.parse(3).source, "3.0")
        self.assertAlmostEqual(float(Expression.parse("2*pi").evaluate({})), 2 * PI)
        self.assertAlmostEqual(float(Expression.parse("log(e)").evaluate({})), 1.0)
        self.assertEqual(Expression.parse("sin(x2) + t").variables, {"x2", "t"})

    def test_spatial_field(self):
        """Test a spatial expression on a one-dimensional grid."""
        grid = line(7)
        field = Expression.parse("1 + cos(pi*x1)").spatial(grid)
        np.testing.assert_allclose(field.values, 1 + np.cos(PI * grid.coords[0]))

    def test_space_time_field(self):
        """Test the time levels of a space-time expression."""
        grid = line(5, nt=4)
        field = Expression.parse("t*x1").space_time(grid)
        np.testing.assert_allclose(field.values[-1], grid.coords[0] * grid.horizon)
        np.testing.assert_allclose(field.values[0], 0.0)

    def test_rejected_names_report_offset(self):
        """Test unknown names carry the offset and the field path."""
        with self.assertRaises(ConfigError) as ctx:
            Expression.parse("x1 + foo", "cost.F[0]")
        self.assertEqual(ctx.exception.field, "cost.F[0]")
        self.assertIn("'foo'", str(ctx.exception))
        self.assertIn("offset 5", str(ctx.exception))

    def test_rejected_constructs(self):
        """Test attributes, foreign calls, keywords, booleans and comparisons."""
        for source in (
            "x1.real",
            "__import__('os')",
            "sin(x1, x2)",
            "exp(x=1)",
            "True",
            "x1 < 2",
            "[x1]",
            "'text'",
        ):
            with self.subTest(source=source):
                with self.assertRaises(ConfigError):
                    Expression.parse(source)

    def test_syntax_error(self):
        """Test a syntax error is a configuration error."""
        with self.assertRaises(ConfigError) as ctx:
            Expression.parse("1 +")
        self.assertIn("offset", str(ctx.exception))

    def test_grid_mismatches(self):
        """Test time in a spatial field, x3 in 1D and non-finite values."""
        grid = line(5, nt=4)
        with self.assertRaises(ConfigError):
            Expression.parse("t").spatial(grid)
        with self.assertRaises(ConfigError):
            Expression.parse("x3").spatial(grid)
        with self.assertRaises(ConfigError):
            Expression.parse("log(x1)").spatial(grid)
        with self.assertRaises(ConfigError):
            Expression.parse("x1").space_time(line(5))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(min_value=-10, max_value=10), st.floats(min_value=-10, max_value=10))
    def test_arithmetic_matches_numpy(self, a, b):
        """Test the evaluator agrees with numpy arithmetic."""
        value = Expression.parse(f"({a!r})*x1 - ({b!r})**2/(1 + x1**2)").evaluate(
            {"x1": np.array([0.5])}
        )
        np.testing.assert_allclose(value, a * 0.5 - b**2 / 1.25)


class ConfigTests(SimpleTestCase):
    """Test parsing and validation of run configurations."""

    def test_shipped_default_config(self):
        """Test the shipped configuration parses with every experiment enabled."""
        config = load_config(DEFAULT_CONFIG)
        self.assertEqual(config.grid.dim, 1)
        self.assertEqual(len(config.perturbations), 3)
        self.assertEqual(config.stationary_grid.dim, 3)
        self.assertEqual(config.band, 1)
        self.assertEqual(config.radii, (2.0, 4.0, 8.0))
        self.assertEqual(config.stationary_grid.shape, (18, 18, 18))
        self.assertEqual(config.recovery_order, 2)
        self.assertEqual(config.measurement_order, 2)
        self.assertEqual(config.solver.tol, 1e-12)
        self.assertEqual(config.recovery.coarsening, 2)

    def test_defaults(self):
        """Test defaults of optional sections."""
        config = parse_config({"grid": SMALL["grid"], "cost": {"F": ["1"]}})
        self.assertEqual(config.name, "run")
        self.assertEqual(config.seed, 0)
        self.assertEqual(config.perturbations, ())
        self.assertEqual(config.frechet_epsilons, (1e-1, 3e-2, 1e-2))
        self.assertEqual(config.radii, (2.0, 4.0, 8.0))
        self.assertEqual(config.stationary_spec.nx, (16, 16, 16))
        self.assertEqual(config.decay_radii, (1.0, 2.0, 4.0, 8.0))
        self.assertAlmostEqual(config.decay_k[0], PI)
        self.assertEqual(config.expansion_density.source, "1.0")
        self.assertEqual(config.output.name, "run")

    def test_json_errors_carry_line_and_column(self):
        """Test malformed JSON reports where it broke."""
        with self.assertRaises(ConfigError) as ctx:
            loads_config('{\n  "name": "x",\n}')
        self.assertEqual(ctx.exception.line, 3)
        self.assertIsNotNone(ctx.exception.column)
        self.assertIn("line 3", str(ctx.exception))

    def test_unknown_field_path(self):
        """Test an unknown field is named by its dotted path."""
        data = small(cost={"F": ["1"], "H": ["1"]})
        with self.assertRaises(ConfigError) as ctx:
            parse_config(data)
        self.assertEqual(ctx.exception.field, "cost.H")
        with self.assertRaises(ConfigError) as ctx:
            parse_config(small(extra=1))
        self.assertEqual(ctx.exception.field, "extra")

    def test_bad_values(self):
        """Test field paths of bad expressions, grids and option overrides."""
        cases = [
            (small(cost={"F": ["1", "x1 +"]}), "cost.F[1]"),
            (small(grid={"dim": 1, "nx": [2], "nt": 8, "horizon": 1.0}), "grid"),
            (small(grid={"dim": 1, "nx": [7], "nt": 8, "horizon": -1.0}), "grid.horizon"),
            (small(solver={"tol": "small"}), "solver.tol"),
            (small(solver={"damping": 0.5}), "solver.damping"),
            (small(seed=-1), "seed"),
            (small(cost={"G": ["t"]}), "cost.G[0]"),
            (small(perturbations={"inputs": [{"g": "0"}], "epsilon": [0.1, 0.2]}),
             "perturbations.epsilon"),
        ]
        for data, path in cases:
            with self.subTest(path=path):
                with self.assertRaises(ConfigError) as ctx:
                    parse_config(data)
                self.assertEqual(ctx.exception.field, path)

    def test_hash_ignores_seed_and_output(self):
        """Test the config hash covers the physics only."""
        config = parse_config(small())
        self.assertEqual(config.digest, parse_config(small(seed=99, output="/tmp/x")).digest)
        self.assertNotEqual(config.digest, parse_config(small(name="other")).digest)
        reseeded = config.with_seed(123)
        self.assertEqual(reseeded.seed, 123)
        self.assertEqual(reseeded.digest, config.digest)
        with self.assertRaises(ConfigError):
            config.with_seed(2**64)

    def test_domain_objects(self):
        """Test the grid, cost model and boundary data built from the document."""
        config = parse_config(small())
        self.assertEqual(config.grid.shape, (9,))
        self.assertEqual(config.grid.nt, 8)
        cost = config.cost_model()
        self.assertEqual(cost.order, 1)
        f, g, h = config.baseline_data()
        np.testing.assert_allclose(f.values, 1.0)
        inputs = config.perturbation_input()
        self.assertEqual(inputs.labels, (1, 2))
        np.testing.assert_allclose(config.coefficients().sigma.values, 0.25)

    def test_missing_file(self):
        """Test an unreadable configuration file."""
        with self.assertRaises(ConfigError):
            load_config("/nonexistent/run.json")


class RunnerHelperTests(SimpleTestCase):
    """Test the naming helpers of the pipelines."""

    def test_field_names(self):
        """Test multi-index field names."""
        self.assertEqual(field_name((1,)), "d1")
        self.assertEqual(field_name((1, 2)), "d1_2")

    def test_multi_indices(self):
        """Test multisets by increasing order."""
        self.assertEqual(
            multi_indices((1, 2), 2), [(1,), (2,), (1, 1), (1, 2), (2, 2)]
        )


class ManifestTests(SimpleTestCase):
    """Test run manifests."""

    def test_record_relative_paths(self):
        """Test artifacts are stored relative to the run directory."""
        manifest = ExperimentManifest("forward", "abc", 1)
        root = Path("/runs/x")
        manifest.record(root / "fields" / "v.mfgf", [root / "a.json", root / "b.json"], root=root)
        self.assertEqual(manifest.artifacts, ["fields/v.mfgf", "a.json", "b.json"])

    def test_timings_accumulate(self):
        """Test a stage timed twice adds up."""
        manifest = ExperimentManifest("forward", "abc", 1)
        with manifest.timed("solve"):
            pass
        first = manifest.timings["solve"]
        with manifest.timed("solve"):
            pass
        self.assertGreaterEqual(manifest.timings["solve"], first)

    def test_write(self):
        """Test the manifest file layout."""
        manifest = ExperimentManifest("verify", "abc", 3, serial=False)
        manifest.status = "ok"
        with tempfile.TemporaryDirectory() as tmp:
            path = manifest.write(tmp)
            data = json.loads(path.read_text())
        self.assertEqual(path.name, RUN_MANIFEST)
        self.assertEqual(data["status"], "ok")
        self.assertFalse(data["serial"])
        self.assertEqual(
            set(data), {"command", "config_hash", "seed", "serial", "status", "artifacts", "timings", "versions"}
        )
        self.assertIn("numpy", data["versions"])


class ExitCodeTests(SimpleTestCase):
    """Test the mapping of error families onto exit codes."""

    def test_exit_codes(self):
        """Test input problems exit 2, failures 3 and properties 4."""
        self.assertEqual(exit_code(ConfigError("x")), 2)
        self.assertEqual(exit_code(GridError("x")), 2)
        self.assertEqual(exit_code(IncompatibleData("x")), 2)
        self.assertEqual(exit_code(ArchiveIntegrityError("x")), 2)
        self.assertEqual(exit_code(BlowUp("x")), 3)
        self.assertEqual(exit_code(InconsistentCauchyData("x")), 3)
        self.assertEqual(exit_code(PropertyFailure("x")), 4)


class VerificationTests(SimpleTestCase):
    """Test the property registry."""

    def test_registry(self):
        """Test every property is registered and selectable."""
        self.assertEqual(
            list(PROPERTIES),
            [
                "grid_order",
                "gibbs",
                "frechet",
                "energy",
                "cgo_algebra",
                "decay",
                "pairing",
                "stationary_recovery",
                "timedep_recovery",
                "ucp",
                "determinism",
            ],
        )
        self.assertEqual(select(["ucp", "gibbs", "ucp"]), ["ucp", "gibbs"])
        self.assertEqual(select(None), list(PROPERTIES))
        with self.assertRaises(ConfigError):
            select(["nothing"])

    def test_fast_properties(self):
        """Test the Gibbs, CGO algebra, energy and UCP properties hold."""
        config = parse_config(small())
        for name in ("gibbs", "cgo_algebra", "energy", "ucp"):
            with self.subTest(name=name):
                result = evaluate(name, config)
                self.assertTrue(result.passed, msg=result.to_dict())
                self.assertIsNone(result.error)

    def test_errors_must_not_grow_with_R(self):
        """Test the sweep check ignores changes below the floor only."""
        self.assertTrue(non_increasing([0.3, 0.05, 1e-7]))
        self.assertFalse(non_increasing([0.286, 0.828, 6.8e-8]))
        self.assertTrue(non_increasing([1e-7, 5e-5, 2e-6], floor=1e-4))
        self.assertFalse(non_increasing([1e-7, 5e-3], floor=1e-4))
        self.assertTrue(non_increasing([0.1]))

    def test_errors_fail_the_property(self):
        """Test a property raising a laboratory error is reported as failed."""

        def broken(config, executor):
            raise BlowUp("values beyond bound")

        with patch.dict(PROPERTIES, {"gibbs": broken}):
            result = evaluate("gibbs", parse_config(small()))
        self.assertFalse(result.passed)
        self.assertIn("BlowUp", result.error)
        self.assertIsInstance(result, PropertyResult)


@pytest.mark.integration
class CommandTests(SimpleTestCase):
    """Test the management commands end to end on a small configuration."""

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, True)

    def write_config(self, data, name="run.json"):
        path = self.tmp / name
        path.write_text(json.dumps({**data, "output": str(self.tmp / "runs")}))
        return path

    def call(self, command, **options):
        stdout = StringIO()
        call_command(command, stdout=stdout, stderr=StringIO(), serial=True, **options)
        return stdout.getvalue()

    def test_config_error_exits_with_2(self):
        """Test a broken configuration maps to exit code 2."""
        path = self.tmp / "broken.json"
        path.write_text('{"grid": }')
        with self.assertRaises(CommandError) as ctx:
            self.call("forward", config=path)
        self.assertEqual(ctx.exception.returncode, 2)

    def test_incompatible_data_exits_with_2(self):
        """Test corner-incompatible baseline data are refused."""
        path = self.write_config(small(baseline={"initial_density": "1", "density": "2"}))
        out = self.tmp / "forward"
        with self.assertRaises(CommandError) as ctx:
            self.call("forward", config=path, out=out)
        self.assertEqual(ctx.exception.returncode, 2)
        manifest = json.loads((out / RUN_MANIFEST).read_text())
        self.assertEqual(manifest["status"], "failed")

    def test_forward_is_deterministic(self):
        """Test two serial forward runs write identical bytes."""
        path = self.write_config(small())
        first, second = self.tmp / "a", self.tmp / "b"
        self.call("forward", config=path, out=first)
        output = self.call("forward", config=path, out=second, json=True)
        self.assertIn("picard_iterations", json.loads(output))
        for name in ("fields/v.mfgf", "fields/m.mfgf", "forward.json"):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())
        manifest = json.loads((first / RUN_MANIFEST).read_text())
        self.assertEqual(manifest["status"], "ok")
        self.assertEqual(manifest["command"], "forward")
        self.assertIn("fields/v.mfgf", manifest["artifacts"])

    def test_seed_override(self):
        """Test --seed replaces the configured seed in the manifest."""
        path = self.write_config(small())
        out = self.tmp / "seeded"
        self.call("forward", config=path, out=out, seed=42)
        self.assertEqual(json.loads((out / RUN_MANIFEST).read_text())["seed"], 42)

    @pytest.mark.slow
    def test_measure_and_reconstruct(self):
        """Test archives of a small experiment give back the terminal cost."""
        path = self.write_config(small())
        measured, truth, out = self.tmp / "measure", self.tmp / "truth", self.tmp / "rec"
        self.call("measure", config=path, out=measured, ground_truth=truth)
        self.assertTrue((measured / "c1" / "manifest.json").exists())
        self.assertTrue((measured / "c3" / "manifest.json").exists())
        self.assertFalse((measured / "c2").exists())
        self.assertTrue((truth / "G1.mfgf").exists())
        output = self.call(
            "reconstruct", config=path, out=out, archive=measured, ground_truth=truth, json=True
        )
        summary = json.loads(output)
        self.assertEqual(summary["archives"], ["c1", "c3"])
        self.assertIn("G1", summary["fields"])
        self.assertLess(summary["relative_l2_error"]["G1"], 0.15)
        report = json.loads((out / "report.json").read_text())
        self.assertIn("ucp", report["diagnostics"])
        self.assertIn("energy_from_boundary", report["diagnostics"])

    @pytest.mark.slow
    def test_hash_mismatch_exits_with_2(self):
        """Test archives are refused under a configuration with other physics."""
        path = self.write_config(small())
        measured = self.tmp / "measure"
        self.call("measure", config=path, out=measured)
        other = self.write_config(small(cost={"expansion_density": "1", "F": ["2"], "G": ["0.5"]}), "other.json")
        with self.assertRaises(CommandError) as ctx:
            self.call("reconstruct", config=other, out=self.tmp / "rec", archive=measured)
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn("ArchiveIntegrityError", str(ctx.exception))

    def test_missing_archives_exit_with_2(self):
        """Test reconstruct without archives."""
        path = self.write_config(small())
        with self.assertRaises(CommandError) as ctx:
            self.call("reconstruct", config=path, out=self.tmp / "rec", archive=self.tmp / "none")
        self.assertEqual(ctx.exception.returncode, 2)

    def test_verify_subset(self):
        """Test verify --only writes verify.json for the chosen properties."""
        path = self.write_config(small())
        out = self.tmp / "verify"
        self.call("verify", config=path, out=out, only=["gibbs", "cgo_algebra"])
        summary = json.loads((out / "verify.json").read_text())
        self.assertTrue(summary["passed"])
        self.assertEqual([p["name"] for p in summary["properties"]], ["gibbs", "cgo_algebra"])

    def test_failed_property_exits_with_4(self):
        """Test a failing property maps to exit code 4."""
        path = self.write_config(small())
        out = self.tmp / "verify"
        with patch.dict(PROPERTIES, {"gibbs": lambda config, executor: (False, {})}):
            with self.assertRaises(CommandError) as ctx:
                self.call("verify", config=path, out=out, only=["gibbs"])
        self.assertEqual(ctx.exception.returncode, 4)
        self.assertEqual(json.loads((out / RUN_MANIFEST).read_text())["status"], "failed")
        self.assertFalse(json.loads((out / "verify.json").read_text())["passed"])
