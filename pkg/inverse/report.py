"""
Reconstruction reports.

A report collects the recovered fields, the regularization parameters and the
residual history of one ``reconstruct`` run. Errors against a ground truth are
only filled in when the caller hands one over (test mode).
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np

from grid.fieldio import atomic_write_text, write_field
from grid.fields import ScalarField, SpaceTimeField, require_same_grid
from grid.operators import integrate_values

logger = logging.getLogger(__name__)

REPORT = "report.json"

Field = Union[ScalarField, SpaceTimeField]


def _norm(grid, values: np.ndarray) -> float:
    return float(np.sqrt(max(integrate_values(grid, np.abs(values) ** 2), 0.0)))


def relative_l2_error(recovered: Field, truth: Field, interior_only: bool = False) -> float:
    """``|recovered - truth| / |truth|`` in the trapezoidal L2 norm.

    With ``interior_only`` the boundary nodes are left out of both norms. A
    vanishing truth gives the absolute error instead.
    """
    grid = require_same_grid(recovered, truth)
    diff = np.asarray(recovered.values - truth.values)
    ref = np.asarray(truth.values)
    if interior_only:
        mask = np.broadcast_to(grid.interior_mask, diff.shape)
        diff = np.where(mask, diff, 0.0)
        ref = np.where(mask, ref, 0.0)
    scale = _norm(grid, ref)
    error = _norm(grid, diff)
    return error / scale if scale > 0 else error


@dataclass
class ReconstructionReport:
    fields: Dict[str, Field] = field(default_factory=dict)
    parameters: Dict[str, Any] = field(default_factory=dict)
    history: Dict[str, Any] = field(default_factory=dict)
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    errors: Dict[str, float] = field(default_factory=dict)
    seed: int = 0
    config_hash: Optional[str] = None

    def add(self, name: str, value: Field, diagnostics: Optional[Mapping] = None):
        self.fields[name] = value
        if diagnostics:
            self.diagnostics[name] = dict(diagnostics)
        return self

    def compare(self, truth: Mapping[str, Field], interior_only: bool = False):
        """Fill ``errors`` for every recovered field that has a ground truth."""
        for name, value in self.fields.items():
            if name in truth:
                self.errors[name] = relative_l2_error(value, truth[name], interior_only)
                logger.info(f"Relative L2 error of {name}: {self.errors[name]:.3e}")
        return self

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "fields": {
                name: {"kind": type(value).__name__, "file": f"fields/{name}.mfgf"}
                for name, value in self.fields.items()
            },
            "parameters": self.parameters,
            "history": self.history,
            "diagnostics": self.diagnostics,
            "relative_l2_error": self.errors,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float)

    def write(self, directory) -> Path:
        """Write ``report.json`` and one field file per recovered field."""
        directory = Path(directory)
        for name, value in self.fields.items():
            write_field(directory / "fields" / f"{name}.mfgf", value)
        path = atomic_write_text(directory / REPORT, self.to_json() + "\n")
        logger.info(f"Wrote reconstruction report to {path}")
        return path
