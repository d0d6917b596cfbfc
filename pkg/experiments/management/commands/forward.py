"""
Management command to solve the baseline forward problem.
"""

from experiments.commands import ExperimentCommand
from experiments.runner import run_forward


class Command(ExperimentCommand):
    help = "Solve the time-dependent MFG system for the configured baseline"
    name = "forward"

    def run(self, config, out, manifest, executor, options):
        return run_forward(config, out, manifest, executor)

    def report(self, summary):
        self.stdout.write(f"Picard iterations: {summary['picard_iterations']}")
        self.stdout.write(f"Final update norm: {summary['final_update_norm']:.3e}")
        self.stdout.write(f"Mass balance gap: {summary['mass_balance_gap']:.3e}")
