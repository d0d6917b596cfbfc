"""
Management command to write the Cauchy measurement archives.
"""

from experiments.commands import ExperimentCommand
from experiments.runner import run_measure


class Command(ExperimentCommand):
    help = "Run the forward experiments and archive their Cauchy data (c1, c2, c3)"
    name = "measure"

    def run(self, config, out, manifest, executor, options):
        return run_measure(config, out, manifest, executor, options["ground_truth"])

    def report(self, summary):
        for kind, entry in sorted(summary.items()):
            records = entry.get("records")
            suffix = f" ({records} records)" if records is not None else ""
            self.stdout.write(f"{kind}: {entry['archive']}{suffix}")
