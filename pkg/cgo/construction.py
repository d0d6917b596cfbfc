"""
Assembled probes ``exp(xi . x - sign v0 / 2) (1 + w)`` and decay reports.
"""

import csv
import io
import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from cgo.equations import ScalarReducedEquation
from cgo.probes import ProbeVector, probe_pair
from cgo.remainder import RemainderSolution, iterate_remainder
from grid.fields import ScalarField
from grid.fieldio import atomic_write_text, write_field
from mfglab.errors import OverflowCap
from mfglab.options import ProbeOptions

logger = logging.getLogger(__name__)

DECAY_SLOPE_MAX = -0.7


@dataclass(frozen=True, eq=False)
class CGOSolution:
    probe: ProbeVector
    omega: ScalarField
    sign: int
    assembled: Optional[ScalarField]
    iterations: int = 0
    remainder_residual: float = 0.0
    relative_residual: float = 0.0
    omega_norm: float = 0.0
    twist: Optional[np.ndarray] = None

    @property
    def grid(self):
        return self.omega.grid

    @property
    def weighted(self) -> ScalarField:
        """``1 + omega``, the probe with its exponential weight divided out."""
        return self.omega.with_values(1 + self.omega.values)

    def conj(self) -> "CGOSolution":
        return CGOSolution(
            self.probe.conj(),
            self.omega.conj(),
            self.sign,
            None if self.assembled is None else self.assembled.conj(),
            self.iterations,
            self.remainder_residual,
            self.relative_residual,
            self.omega_norm,
            None if self.twist is None else -self.twist,
        )

    def save(self, directory, name: str) -> List[Path]:
        """Write ``assembled`` (when built) and ``omega`` as real/imaginary pairs."""
        directory = Path(directory)
        paths = []
        if self.assembled is not None:
            paths += write_field(directory / f"{name}_assembled", self.assembled)
        paths += write_field(directory / f"{name}_omega", self.omega)
        return paths

    def summary(self) -> dict:
        return {
            "probe": self.probe.to_dict(),
            "sign": self.sign,
            "iterations": self.iterations,
            "remainder_residual": self.remainder_residual,
            "relative_residual": self.relative_residual,
            "omega_norm": self.omega_norm,
            "twist": None if self.twist is None else self.twist.tolist(),
        }


def exponent(eq: ScalarReducedEquation, probe: ProbeVector) -> np.ndarray:
    """``xi . x - sign v0 / 2`` at every node."""
    grid = eq.grid
    phase = sum(xi * x for xi, x in zip(probe.xi, grid.coords))
    return phase - 0.5 * eq.sign * eq.v0.values


def build_cgo(
    eq: ScalarReducedEquation,
    probe: ProbeVector,
    options: Optional[ProbeOptions] = None,
    remainder: Optional[RemainderSolution] = None,
) -> CGOSolution:
    """Assemble the probe and report its residual relative to ``|exp(...)|``.

    The real part of the exponent is capped by ``options.overflow_cap``.
    """
    options = options if options is not None else ProbeOptions.from_settings()
    phi = exponent(eq, probe)
    peak = float(np.max(np.abs(phi.real)))
    if peak > options.overflow_cap:
        logger.error(f"Probe exponent {peak:.1f} exceeds cap {options.overflow_cap}")
        raise OverflowCap(
            f"probe exponent reaches {peak:.1f} > {options.overflow_cap}; "
            "use a smaller domain or R"
        )
    if remainder is None:
        remainder = iterate_remainder(eq, probe, options)
    omega = remainder.omega.values
    weight = np.exp(phi)
    assembled = weight * (1 + omega)
    applied = eq.apply(assembled) / np.abs(weight)
    interior = eq.grid.interior_mask
    relative = float(np.max(np.abs(applied[interior])))
    return CGOSolution(
        probe,
        remainder.omega,
        eq.sign,
        ScalarField(eq.grid, assembled),
        remainder.iterations,
        remainder.residual,
        relative,
        remainder.norm,
    )


def adjoint_probe(
    eq: ScalarReducedEquation,
    first: ProbeVector,
    options: Optional[ProbeOptions] = None,
) -> CGOSolution:
    """Partner of ``first``-weighted records of ``eq`` in the boundary pairing.

    Its weighted field ``1 + omega`` solves the adjoint of the weighted stencil
    of ``first`` under ``exp(i k . x)``, so no exponential is ever formed.
    """
    twist = first.k.copy()
    remainder = iterate_remainder(eq, first, options, twist=twist)
    return CGOSolution(
        first,
        remainder.omega,
        -eq.sign,
        None,
        remainder.iterations,
        remainder.residual,
        remainder.residual,
        remainder.norm,
        twist,
    )


@dataclass
class DecayRow:
    R: float
    xi_norm: float
    omega_norm: float
    iterations: int


@dataclass
class DecayReport:
    k: List[float]
    rows: List[DecayRow] = field(default_factory=list)
    slope: Optional[float] = None

    @property
    def degenerate(self) -> bool:
        """All remainders vanish: the potential is zero."""
        return all(row.omega_norm == 0.0 for row in self.rows)

    @property
    def passed(self) -> bool:
        return self.degenerate or (
            self.slope is not None and self.slope <= DECAY_SLOPE_MAX
        )

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["R", "xi_norm", "omega_norm", "iterations"])
        for row in self.rows:
            writer.writerow(
                [f"{row.R:.17g}", f"{row.xi_norm:.17g}", f"{row.omega_norm:.17g}", row.iterations]
            )
        return buffer.getvalue()

    def write_csv(self, path) -> Path:
        return atomic_write_text(path, self.to_csv())

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "slope": self.slope,
            "degenerate": self.degenerate,
            "passed": self.passed,
            "rows": [vars(row) for row in self.rows],
        }


def verify_decay(
    eq: ScalarReducedEquation,
    k: Sequence[float],
    R_list: Sequence[float],
    options: Optional[ProbeOptions] = None,
    executor: Optional[Executor] = None,
) -> DecayReport:
    """Remainder norms over ``R_list`` and the slope of ``log |w|`` vs ``log |xi|``."""
    probes = [probe_pair(k, R)[0] for R in R_list]

    def run(probe):
        return iterate_remainder(eq, probe, options)

    results = list(executor.map(run, probes) if executor is not None else map(run, probes))
    report = DecayReport([float(c) for c in k])
    for R, probe, result in zip(R_list, probes, results):
        report.rows.append(
            DecayRow(float(R), probe.magnitude, result.norm, result.iterations)
        )
    norms = np.array([row.omega_norm for row in report.rows])
    if len(norms) >= 2 and np.all(norms > 0):
        xi = np.array([row.xi_norm for row in report.rows])
        report.slope = float(np.polyfit(np.log(xi), np.log(norms), 1)[0])
    logger.info(f"Decay report for k={list(k)}: slope {report.slope}")
    return report
