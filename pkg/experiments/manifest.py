"""
Run manifests: what a command wrote, from which configuration, and how long
each stage took.
"""

import json
import logging
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import django
import numpy as np
import scipy

from grid.fieldio import atomic_write_text

logger = logging.getLogger(__name__)

RUN_MANIFEST = "run.json"


def versions() -> Dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "django": django.get_version(),
    }


@dataclass
class ExperimentManifest:
    command: str
    config_hash: str
    seed: int
    serial: bool = True
    artifacts: List[str] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    versions: Dict[str, str] = field(default_factory=versions)
    status: str = "running"

    def record(self, *paths, root: Optional[Path] = None):
        """Remember written files, relative to ``root`` when given."""
        for path in paths:
            if isinstance(path, (list, tuple)):
                self.record(*path, root=root)
                continue
            path = Path(path)
            if root is not None:
                try:
                    path = path.relative_to(root)
                except ValueError:
                    pass
            self.artifacts.append(path.as_posix())
        return self

    @contextmanager
    def timed(self, stage: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - start
            logger.debug(f"Stage {stage} took {self.timings[stage]:.2f}s")

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "serial": self.serial,
            "status": self.status,
            "artifacts": sorted(set(self.artifacts)),
            "timings": self.timings,
            "versions": self.versions,
        }

    def write(self, directory) -> Path:
        path = Path(directory) / RUN_MANIFEST
        return atomic_write_text(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
