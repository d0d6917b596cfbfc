"""
Boundary measurements of forward, probing and perturbation experiments.

Three kinds of record are kept, and inverse code reads nothing else:

* ``MeasurementC1``: initial and final density/value slices plus the lateral
  traces of ``v``, ``m`` and ``sigma m`` of one time-dependent solution.
* ``MeasurementC2``: the stationary baseline traces and, per probing
  experiment, the weighted Cauchy trace of the linearized density.
* ``MeasurementC3``: the baseline traces and, per multi-index of a
  perturbation suite, the traces of the linearized value and density.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from forward.coefficients import (
    BoundaryData,
    MFGCoefficients,
    TimeDependentSolution,
)
from forward.stationary import StationarySolution
from grid.fields import BoundaryTrace, ScalarField, SpaceTimeField, require_same_grid
from grid.mesh import Grid
from grid.operators import restrict_to_boundary
from linearize.partitions import Labels, normalize
from linearize.systems import LinearizedSolution, PerturbationInput
from mfglab.errors import ArchiveError, GridError

logger = logging.getLogger(__name__)

TraceMap = Callable[[BoundaryTrace], BoundaryTrace]


def _same_trace(a: BoundaryTrace, b: BoundaryTrace, tol: float) -> bool:
    if a.grid != b.grid or a.time_dependent != b.time_dependent:
        return False
    scale = max(1.0, a.max_abs(), b.max_abs())
    return (a - b).max_abs() <= tol * scale


@dataclass(frozen=True, eq=False)
class MeasurementC1:
    grid: Grid
    v_initial: ScalarField
    v_final: ScalarField
    m_initial: ScalarField
    m_final: ScalarField
    v_trace: BoundaryTrace
    m_trace: BoundaryTrace
    sigma_m_trace: BoundaryTrace

    kind = "c1"

    def __post_init__(self):
        require_same_grid(
            self,
            self.v_initial,
            self.v_final,
            self.m_initial,
            self.m_final,
            self.v_trace,
            self.m_trace,
            self.sigma_m_trace,
        )
        for name, trace in self.traces().items():
            if not trace.time_dependent:
                raise GridError(f"C1 trace {name!r} must cover every time level")

    def traces(self) -> Dict[str, BoundaryTrace]:
        return {
            "v": self.v_trace,
            "m": self.m_trace,
            "sigma_m": self.sigma_m_trace,
        }

    def slices(self) -> Dict[str, ScalarField]:
        return {
            "v_initial": self.v_initial,
            "v_final": self.v_final,
            "m_initial": self.m_initial,
            "m_final": self.m_final,
        }

    def momentum(self, coeffs: MFGCoefficients) -> Tuple[np.ndarray, ...]:
        """``kappa d_nu v`` per face, the normal component of ``grad_p H``."""
        require_same_grid(self, coeffs)
        kappa = restrict_to_boundary(coeffs.kappa)
        return tuple(
            k * dv for k, dv in zip(kappa.values, self.v_trace.normal_derivatives)
        )

    def map_traces(self, func: TraceMap) -> "MeasurementC1":
        return MeasurementC1(
            self.grid,
            self.v_initial,
            self.v_final,
            self.m_initial,
            self.m_final,
            func(self.v_trace),
            func(self.m_trace),
            func(self.sigma_m_trace),
        )


def extract_c1(
    solution: TimeDependentSolution, coeffs: MFGCoefficients
) -> MeasurementC1:
    grid = require_same_grid(solution.v, coeffs)
    sigma_m = SpaceTimeField(grid, coeffs.sigma.values * solution.m.values)
    return MeasurementC1(
        grid,
        solution.v.initial,
        solution.v.final,
        solution.m.initial,
        solution.m.final,
        restrict_to_boundary(solution.v),
        restrict_to_boundary(solution.m),
        restrict_to_boundary(sigma_m),
    )


@dataclass(frozen=True, eq=False)
class ProbeRecord:
    """Weighted Cauchy trace of one probing experiment.

    ``n`` is the signed frequency index (``k = n pi / L`` per axis) and
    ``xi`` the probe that weights the trace.
    """

    label: str
    n: Tuple[int, ...]
    R: float
    xi: np.ndarray
    trace: BoundaryTrace

    def __post_init__(self):
        object.__setattr__(self, "n", tuple(int(i) for i in self.n))
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=complex))
        if self.trace.time_dependent:
            raise GridError("probing records are stationary traces")

    @property
    def key(self) -> Tuple[Tuple[int, ...], float]:
        return self.n, float(self.R)

    def with_trace(self, trace: BoundaryTrace) -> "ProbeRecord":
        return ProbeRecord(self.label, self.n, self.R, self.xi, trace)

    def describe(self) -> dict:
        return {
            "label": self.label,
            "n": list(self.n),
            "R": self.R,
            "xi_real": self.xi.real.tolist(),
            "xi_imag": self.xi.imag.tolist(),
        }


@dataclass(frozen=True, eq=False)
class MeasurementC2:
    grid: Grid
    v_trace: BoundaryTrace
    m_trace: BoundaryTrace
    records: Tuple[ProbeRecord, ...] = ()

    kind = "c2"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        require_same_grid(self, self.v_trace, self.m_trace, *(r.trace for r in self.records))
        keys = [r.key for r in self.records]
        if len(set(keys)) != len(keys):
            raise GridError("probing records must have distinct (n, R) keys")

    def traces(self) -> Dict[str, BoundaryTrace]:
        out = {"v": self.v_trace, "m": self.m_trace}
        out.update({r.label: r.trace for r in self.records})
        return out

    def record(self, n: Sequence[int], R: float) -> ProbeRecord:
        key = (tuple(int(i) for i in n), float(R))
        for record in self.records:
            if record.key == key:
                return record
        raise ArchiveError(f"no probing record for n={list(key[0])}, R={R}")

    def radii(self) -> Tuple[float, ...]:
        return tuple(sorted({float(r.R) for r in self.records}))

    def map_traces(self, func: TraceMap) -> "MeasurementC2":
        return MeasurementC2(
            self.grid,
            func(self.v_trace),
            func(self.m_trace),
            tuple(r.with_trace(func(r.trace)) for r in self.records),
        )

    def equivalent(self, other: "MeasurementC2", tol: float = 0.0) -> bool:
        """Whether both archives hold the same records within ``tol`` (relative)."""
        if self.grid != other.grid or len(self.records) != len(other.records):
            return False
        if not (
            _same_trace(self.v_trace, other.v_trace, tol)
            and _same_trace(self.m_trace, other.m_trace, tol)
        ):
            return False
        theirs = {r.key: r for r in other.records}
        for record in self.records:
            match = theirs.get(record.key)
            if match is None or not _same_trace(record.trace, match.trace, tol):
                return False
        return True


def extract_c2(
    base: StationarySolution, records: Iterable[ProbeRecord] = ()
) -> MeasurementC2:
    """Baseline traces of ``base`` together with probing ``records``."""
    return MeasurementC2(
        base.grid,
        restrict_to_boundary(base.v0),
        restrict_to_boundary(base.m0),
        tuple(records),
    )


@dataclass(frozen=True, eq=False)
class ExperimentRecord:
    """Traces of the linearized solution for one multi-index of the suite."""

    labels: Labels
    v_trace: BoundaryTrace
    m_trace: BoundaryTrace

    def __post_init__(self):
        object.__setattr__(self, "labels", normalize(self.labels))
        require_same_grid(self.v_trace, self.m_trace)
        if not (self.v_trace.time_dependent and self.m_trace.time_dependent):
            raise GridError("perturbation records cover every time level")

    @property
    def order(self) -> int:
        return len(self.labels)

    @property
    def name(self) -> str:
        return "d" + "_".join(str(label) for label in self.labels)

    def boundary_data(self) -> Tuple[BoundaryData, BoundaryData]:
        """The Dirichlet data of the experiment, read off the traces."""
        grid = self.v_trace.grid
        return (
            BoundaryData(grid, self.v_trace.scatter()),
            BoundaryData(grid, self.m_trace.scatter()),
        )

    def with_traces(self, v_trace, m_trace) -> "ExperimentRecord":
        return ExperimentRecord(self.labels, v_trace, m_trace)


@dataclass(frozen=True, eq=False)
class MeasurementC3:
    grid: Grid
    v_trace: BoundaryTrace
    m_trace: BoundaryTrace
    records: Tuple[ExperimentRecord, ...] = ()
    epsilon: Tuple[float, ...] = field(default_factory=tuple)

    kind = "c3"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "epsilon", tuple(float(e) for e in self.epsilon))
        require_same_grid(
            self, self.v_trace, self.m_trace, *(r.v_trace for r in self.records)
        )
        labels = [r.labels for r in self.records]
        if len(set(labels)) != len(labels):
            raise GridError("perturbation records must have distinct multi-indices")

    def traces(self) -> Dict[str, BoundaryTrace]:
        out = {"v": self.v_trace, "m": self.m_trace}
        for record in self.records:
            out[f"{record.name}_v"] = record.v_trace
            out[f"{record.name}_m"] = record.m_trace
        return out

    def record(self, labels: Sequence[int]) -> ExperimentRecord:
        key = normalize(labels)
        for record in self.records:
            if record.labels == key:
                return record
        raise ArchiveError(f"no perturbation record for labels {key}")

    def of_order(self, order: int) -> Tuple[ExperimentRecord, ...]:
        return tuple(r for r in self.records if r.order == order)

    def perturbation_input(self) -> PerturbationInput:
        """Inputs ``(g_l, h_l)`` of the first-order records, labels 1..N in order."""
        first = sorted(self.of_order(1), key=lambda r: r.labels)
        expected = [(label,) for label in range(1, len(first) + 1)]
        if [r.labels for r in first] != expected:
            raise ArchiveError("first-order records must be labelled 1..N")
        data = [r.boundary_data() for r in first]
        epsilon = self.epsilon or (1.0,) * len(first)
        return PerturbationInput(
            [g for g, _ in data], [h for _, h in data], epsilon[: len(first)]
        )

    def map_traces(self, func: TraceMap) -> "MeasurementC3":
        return MeasurementC3(
            self.grid,
            func(self.v_trace),
            func(self.m_trace),
            tuple(r.with_traces(func(r.v_trace), func(r.m_trace)) for r in self.records),
            self.epsilon,
        )


def extract_c3(
    base: TimeDependentSolution,
    derivatives: Iterable[LinearizedSolution],
    epsilon: Optional[Sequence[float]] = None,
) -> MeasurementC3:
    """Baseline traces and one record per linearized solution, tagged by its order."""
    records = []
    for solution in derivatives:
        if not isinstance(solution.v_lin, SpaceTimeField):
            raise GridError("perturbation records need time-dependent solutions")
        records.append(
            ExperimentRecord(
                solution.order,
                restrict_to_boundary(solution.v_lin),
                restrict_to_boundary(solution.m_lin),
            )
        )
    v_trace, m_trace = base.traces()
    return MeasurementC3(base.grid, v_trace, m_trace, tuple(records), tuple(epsilon or ()))


def gaussian_noise(level: float, seed: int) -> TraceMap:
    """Trace map adding ``level * max|trace|`` standard Gaussian noise.

    One generator seeded with ``seed`` is shared by all traces a measurement
    maps, so the noise is reproducible per archive.
    """
    if level < 0:
        raise ValueError(f"noise level must be nonnegative, got {level}")
    rng = np.random.default_rng(seed)

    def perturb(trace: BoundaryTrace) -> BoundaryTrace:
        if level == 0:
            return trace
        scale = level * trace.max_abs()

        def noisy(arr):
            arr = np.asarray(arr)
            draw = rng.standard_normal(arr.shape)
            if np.iscomplexobj(arr):
                draw = draw + 1j * rng.standard_normal(arr.shape)
            return arr + scale * draw

        return trace.map(noisy)

    return perturb
