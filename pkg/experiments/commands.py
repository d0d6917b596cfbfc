"""
Shared plumbing of the experiment management commands.

Every command loads a run configuration, picks an output directory, runs one
pipeline of :mod:`experiments.runner` and leaves a ``run.json`` manifest next
to its artifacts, whether the pipeline succeeded or not.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from experiments.config import RunConfig, load_config
from experiments.manifest import ExperimentManifest
from mfglab.errors import MFGLabError, PropertyFailure, RecoveryError, SolverError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = Path(settings.BASE_DIR) / "configs" / "default.json"


def exit_code(exc: MFGLabError) -> int:
    if isinstance(exc, PropertyFailure):
        return 4
    if isinstance(exc, (SolverError, RecoveryError)):
        return 3
    return 2


def command_error(exc: MFGLabError) -> CommandError:
    return CommandError(f"{type(exc).__name__}: {exc}", returncode=exit_code(exc))


class ExperimentCommand(BaseCommand):
    """Base class; subclasses set ``name`` and implement ``run``."""

    name = ""

    def add_arguments(self, parser):
        parser.add_argument(
            "--config",
            type=Path,
            default=DEFAULT_CONFIG,
            help=f"Run configuration file (default: {DEFAULT_CONFIG.name})",
        )
        parser.add_argument(
            "--out",
            type=Path,
            help="Output directory (default: <config output>/<command>)",
        )
        parser.add_argument(
            "--seed",
            type=int,
            help="Override the configured seed (unsigned 64-bit)",
        )
        parser.add_argument(
            "--serial",
            action="store_true",
            help="Run every batch on the calling thread",
        )
        parser.add_argument(
            "--ground-truth",
            type=Path,
            dest="ground_truth",
            help="Ground-truth field directory (test mode)",
        )
        parser.add_argument(
            "--json",
            action="store_true",
            help="Print the summary as JSON",
        )

    def run(self, config: RunConfig, out: Path, manifest: ExperimentManifest, executor, options) -> dict:
        raise NotImplementedError

    def load(self, options) -> RunConfig:
        try:
            return load_config(options["config"]).with_seed(options["seed"])
        except MFGLabError as exc:
            raise command_error(exc) from exc

    def handle(self, *args, **options):
        config = self.load(options)
        out = Path(options["out"]) if options["out"] else config.output / self.name
        out.mkdir(parents=True, exist_ok=True)
        serial = options["serial"]
        manifest = ExperimentManifest(self.name, config.digest, config.seed, serial)
        executor = None if serial else ThreadPoolExecutor(max_workers=config.workers())
        logger.info(f"Running {self.name} for {config.name} ({config.digest[:12]}) into {out}")

        try:
            summary = self.run(config, out, manifest, executor, options)
            manifest.status = "ok"
        except MFGLabError as exc:
            manifest.status = "failed"
            logger.error(f"{self.name} failed: {exc}")
            raise command_error(exc) from exc
        finally:
            if executor is not None:
                executor.shutdown()
            manifest.write(out)

        if options["json"]:
            self.stdout.write(json.dumps(summary, indent=2, sort_keys=True, default=float))
            return
        self.report(summary)
        self.stdout.write(self.style.SUCCESS(f"{self.name} finished: {out}"))

    def report(self, summary: dict):
        """Human-readable lines for the summary; subclasses refine this."""
        for key, value in summary.items():
            if isinstance(value, (int, float, str)):
                self.stdout.write(f"{key}: {value}")
