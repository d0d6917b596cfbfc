"""
Management command to recover the unknown costs from measurement archives.
"""

from pathlib import Path

from experiments.commands import ExperimentCommand
from experiments.runner import run_reconstruct


class Command(ExperimentCommand):
    help = "Reconstruct the baseline and cost coefficients from Cauchy archives"
    name = "reconstruct"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            "--archive",
            type=Path,
            help="Directory holding the c1/c2/c3 archives (default: <config output>/measure)",
        )

    def run(self, config, out, manifest, executor, options):
        return run_reconstruct(
            config, out, manifest, executor, options["archive"], options["ground_truth"]
        )

    def report(self, summary):
        self.stdout.write(f"Archives: {', '.join(summary['archives'])}")
        self.stdout.write(f"Recovered: {', '.join(summary['fields'])}")
        for name, error in sorted(summary["relative_l2_error"].items()):
            self.stdout.write(f"{name}: relative L2 error {error:.3e}")
