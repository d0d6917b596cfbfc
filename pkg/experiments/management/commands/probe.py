"""
Management command to build complex geometric optics probes and check their decay.
"""

from experiments.commands import ExperimentCommand
from experiments.runner import run_probe


class Command(ExperimentCommand):
    help = "Build CGO probes on the stationary baseline and verify remainder decay"
    name = "probe"

    def run(self, config, out, manifest, executor, options):
        return run_probe(config, out, manifest, executor)

    def report(self, summary):
        decay = summary["decay"]
        for row in decay["rows"]:
            self.stdout.write(
                f"R={row['R']:g}: |w|={row['omega_norm']:.3e} ({row['iterations']} iterations)"
            )
        slope = decay["slope"]
        line = f"Decay slope: {'n/a' if slope is None else f'{slope:.3f}'}"
        self.stdout.write(self.style.SUCCESS(line) if decay["passed"] else self.style.WARNING(line))
