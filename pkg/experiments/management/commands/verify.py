"""
Management command to evaluate the executable properties of the laboratory.
"""

from experiments.commands import ExperimentCommand
from experiments.verification import PROPERTIES, run_verify
from mfglab.errors import PropertyFailure


class Command(ExperimentCommand):
    help = "Evaluate verification properties; exits with 4 when any property fails"
    name = "verify"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            "--only",
            nargs="+",
            metavar="PROPERTY",
            help=f"Evaluate only these properties ({', '.join(PROPERTIES)})",
        )

    def run(self, config, out, manifest, executor, options):
        summary = run_verify(config, out, manifest, executor, options["only"])
        for result in summary["properties"]:
            status = "passed" if result["passed"] else "FAILED"
            style = self.style.SUCCESS if result["passed"] else self.style.ERROR
            self.stderr.write(style(f"{result['name']}: {status} ({result['seconds']:.1f}s)"))
        if not summary["passed"]:
            raise PropertyFailure(f"failed properties: {', '.join(summary['failed'])}")
        return summary

    def report(self, summary):
        self.stdout.write(f"{len(summary['properties'])} properties passed")
