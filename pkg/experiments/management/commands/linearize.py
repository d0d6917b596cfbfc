"""
Management command to solve the linearized systems and check the Taylor remainder.
"""

from experiments.commands import ExperimentCommand
from experiments.runner import run_linearize


class Command(ExperimentCommand):
    help = "Solve linearized MFG systems around the baseline and run the Frechet check"
    name = "linearize"

    def run(self, config, out, manifest, executor, options):
        return run_linearize(config, out, manifest, executor)

    def report(self, summary):
        frechet = summary["frechet"]
        slope = frechet["slope"]
        line = f"Taylor remainder slope: {'n/a' if slope is None else f'{slope:.3f}'}"
        if frechet["passed"]:
            self.stdout.write(self.style.SUCCESS(line))
        else:
            self.stdout.write(self.style.WARNING(line))
        for name, residual in sorted(summary["residuals"].items()):
            self.stdout.write(f"{name}: residual {residual:.3e}")
        if "cross_derivative" in summary:
            error = summary["cross_derivative"]["relative_error"]
            self.stdout.write(f"Cross derivative relative error: {error:.3e}")
