"""
Synthetic probing experiments around a stationary baseline.

Each experiment drives the linearized density with the boundary values of an
exponentially growing probe and records its weighted Cauchy trace. Records
are labelled by a signed frequency index ``n``; the probe frequency is
``k = n pi / L`` per axis.
"""

import logging
from concurrent.futures import Executor
from itertools import product
from typing import List, Optional, Sequence, Tuple

import numpy as np

from cauchy.measurements import MeasurementC2, ProbeRecord, extract_c2
from cgo.probes import probe_pair
from cgo.remainder import iterate_remainder
from cgo.weighted import weighted_trace
from forward.stationary import StationarySolution
from grid.fields import ScalarField
from grid.mesh import Grid
from linearize.stationary import reduce_to_scalar
from mfglab.errors import ConfigError
from mfglab.options import ProbeOptions

logger = logging.getLogger(__name__)

Index = Tuple[int, ...]


def frequency_of(grid: Grid, n: Sequence[int]) -> np.ndarray:
    return np.array([i * np.pi / length for i, length in zip(n, grid.lengths)])


def frequency_lattice(dim: int, band: int) -> List[Index]:
    """Signed indices with entries in ``-band..band``, zero first."""
    if band < 0:
        raise ConfigError(f"band must be nonnegative, got {band}", "probes.band")
    indices = list(product(range(-band, band + 1), repeat=dim))
    return sorted(indices, key=lambda n: (sum(abs(i) for i in n), n))


def record_label(n: Sequence[int], R: float) -> str:
    signed = "_".join(f"{'m' if i < 0 else 'p'}{abs(i)}" for i in n)
    return f"n_{signed}_R{R:g}"


def probe_record(
    base: StationarySolution,
    F1: ScalarField,
    n: Sequence[int],
    R: float,
    options: Optional[ProbeOptions] = None,
) -> ProbeRecord:
    """Weighted trace of the probing solution for frequency index ``n``."""
    grid = base.grid
    first, _ = probe_pair(frequency_of(grid, n), R)
    remainder = iterate_remainder(reduce_to_scalar(base, F1), first, options)
    weighted = remainder.omega.with_values(1 + remainder.omega.values)
    logger.debug(f"Probe record n={list(n)} R={R}: {remainder.iterations} iterations")
    return ProbeRecord(record_label(n, R), tuple(n), R, first.xi, weighted_trace(weighted))


def probe_experiment(
    base: StationarySolution,
    F1: ScalarField,
    indices: Sequence[Sequence[int]],
    radii: Sequence[float],
    options: Optional[ProbeOptions] = None,
    executor: Optional[Executor] = None,
) -> MeasurementC2:
    """Records for every index in ``indices`` and every ``R`` in ``radii``."""
    jobs = [(tuple(n), float(R)) for R in radii for n in indices]

    def run(job):
        n, R = job
        return probe_record(base, F1, n, R, options)

    records = list(executor.map(run, jobs) if executor is not None else map(run, jobs))
    logger.info(f"Synthesized {len(records)} probing records")
    return extract_c2(base, records)
