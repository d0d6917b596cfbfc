"""
First-order running cost from probing archives.

For every record the difference between the measured weighted trace and the
reference model (``F1 = 0``) is paired with the twisted adjoint probe. The
pairing equals ``sum h^d exp(i k . x) y2 Q y`` over interior nodes, with
``Q = F1 m0``, the adjoint weight ``y2`` and the measured weighted field ``y``,
so each value samples the Fourier transform of ``Q`` at ``k`` up to the
factors ``y2 y``, which tend to one as ``R`` grows.

``Q`` is fitted in the cosine basis ``prod_j cos(n_j pi (x_j - lo_j) / L_j)``
with all factors kept in the design. The unknown ``y`` is first replaced by
the reference extension of its boundary values. The coefficients are then
refined by damped Gauss-Newton steps on the pairing residuals, with ``y``
re-extended under the current estimate of ``Q`` and differentiated along
every cosine mode.
"""

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from cauchy.measurements import MeasurementC2, ProbeRecord
from cauchy.probing import frequency_of
from cgo.construction import adjoint_probe
from cgo.equations import ScalarReducedEquation
from cgo.probes import probe_pair
from cgo.weighted import WeightedEquation, boundary_pairing, weighted_trace
from forward.stationary import StationarySolution
from grid.fields import ScalarField, require_same_grid
from grid.mesh import Grid
from grid.operators import l2_norm
from inverse.leastsq import TikhonovFit, tikhonov_solve
from linearize.stationary import reduce_to_scalar
from mfglab.errors import ArchiveError, InconsistentCauchyData, PositivityFloor
from mfglab.options import ProbeOptions, RecoveryOptions

logger = logging.getLogger(__name__)

Index = Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class FourierSample:
    """One pairing value with the node weights it was summed against.

    ``adjoint_weight`` is ``h^d exp(i k . x) y2`` and ``model`` the current
    stand-in for the measured weighted field; both are node arrays.
    """

    n: Index
    k: np.ndarray
    R: float
    value: complex
    adjoint_weight: np.ndarray
    model: np.ndarray
    iterations: int = 0
    remainder_residual: float = 0.0

    @property
    def kernel(self) -> np.ndarray:
        return self.adjoint_weight * self.model

    def describe(self) -> dict:
        return {
            "n": list(self.n),
            "k": self.k.tolist(),
            "R": self.R,
            "value_real": self.value.real,
            "value_imag": self.value.imag,
            "iterations": self.iterations,
            "remainder_residual": self.remainder_residual,
        }


@dataclass
class FourierSamples:
    grid: Grid
    samples: List[FourierSample] = field(default_factory=list)

    @property
    def band(self) -> int:
        return max((max(abs(i) for i in s.n) for s in self.samples), default=0)

    def by_key(self) -> Dict[Tuple[Index, float], FourierSample]:
        return {(s.n, s.R): s for s in self.samples}

    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.samples])

    def conjugate_gap(self) -> float:
        """Largest ``|s(n) - conj(s(-n))|`` over ``n != 0``, relative to ``max |s|``."""
        scale = max((abs(s.value) for s in self.samples), default=0.0)
        if scale == 0:
            return 0.0
        keyed = self.by_key()
        gap = 0.0
        for (n, R), sample in keyed.items():
            partner = keyed.get((tuple(-i for i in n), R))
            if partner is None or not any(n):
                continue
            gap = max(gap, abs(sample.value - np.conj(partner.value)))
        return gap / scale

    def check_conjugate_symmetry(self, tol: float) -> float:
        gap = self.conjugate_gap()
        if gap > tol:
            raise InconsistentCauchyData(
                f"pairings of +k and -k are not conjugate (gap {gap:.3e} > {tol:g}); "
                f"the target is not real or the records are inconsistent"
            )
        return gap

    def to_dict(self) -> dict:
        return {
            "band": self.band,
            "conjugate_gap": self.conjugate_gap(),
            "samples": [s.describe() for s in self.samples],
        }


def reference_equation(base: StationarySolution) -> ScalarReducedEquation:
    """Reduced equation of ``base`` with vanishing running cost."""
    return reduce_to_scalar(base, ScalarField.constant(base.grid, 0.0))


def _probe_of(grid: Grid, record: ProbeRecord):
    first, _ = probe_pair(frequency_of(grid, record.n), record.R)
    if not np.allclose(first.xi, record.xi, rtol=1e-12, atol=1e-12):
        raise ArchiveError(
            f"record {record.label} was taken with another probe than n={list(record.n)}, "
            f"R={record.R} prescribes"
        )
    return first


def _weighted(
    eq: ScalarReducedEquation, first, source: Optional[ScalarField]
) -> WeightedEquation:
    if source is not None:
        eq = eq.shifted(-source)
    return WeightedEquation(eq, first)


def _model(
    eq: ScalarReducedEquation, record: ProbeRecord, first, source: Optional[ScalarField]
):
    return _weighted(eq, first, source).solve_dirichlet(record.trace.scatter()).values


def _select(c2: MeasurementC2, R: Optional[float]) -> List[ProbeRecord]:
    records = [r for r in c2.records if R is None or float(r.R) == float(R)]
    if not records:
        raise ArchiveError(f"archive holds no probing records at R={R}")
    return records


def recover_fourier_samples(
    c2: MeasurementC2,
    base: StationarySolution,
    R: Optional[float] = None,
    options: Optional[ProbeOptions] = None,
    executor: Optional[Executor] = None,
    source: Optional[ScalarField] = None,
) -> FourierSamples:
    """Pairing values of every record of ``c2`` (or only those taken at ``R``)."""
    grid = require_same_grid(c2, base.v0)
    eq = reference_equation(base)
    cell = float(np.prod(grid.spacing))
    interior = grid.interior_mask

    def run(record: ProbeRecord) -> FourierSample:
        first = _probe_of(grid, record)
        reference = WeightedEquation(eq, first).solve_dirichlet(record.trace.scatter())
        adjoint = adjoint_probe(eq, first, options)
        value = boundary_pairing(record.trace - weighted_trace(reference), adjoint)
        phase = np.exp(1j * sum(k * x for k, x in zip(first.k, grid.coords)))
        weight = np.where(interior, cell * phase * adjoint.weighted.values, 0.0)
        model = reference.values if source is None else _model(eq, record, first, source)
        return FourierSample(
            record.n,
            first.k,
            float(record.R),
            value,
            weight,
            model,
            adjoint.iterations,
            adjoint.remainder_residual,
        )

    records = _select(c2, R)
    samples = list(executor.map(run, records) if executor is not None else map(run, records))
    logger.info(f"Recovered {len(samples)} Fourier samples")
    return FourierSamples(grid, samples)


def remodel(
    samples: FourierSamples,
    c2: MeasurementC2,
    base: StationarySolution,
    source: ScalarField,
    executor: Optional[Executor] = None,
) -> FourierSamples:
    """The same pairings with the weighted fields re-extended under ``source``."""
    grid = samples.grid
    eq = reference_equation(base)

    def run(sample: FourierSample) -> FourierSample:
        record = c2.record(sample.n, sample.R)
        model = _model(eq, record, _probe_of(grid, record), source)
        return replace(sample, model=model)

    items = samples.samples
    updated = list(executor.map(run, items) if executor is not None else map(run, items))
    return FourierSamples(grid, updated)


def cosine_indices(dim: int, band: int) -> List[Index]:
    return list(product(range(band + 1), repeat=dim))


def cosine_mode(grid: Grid, n: Sequence[int]) -> np.ndarray:
    out = np.ones(grid.shape)
    for x, i, (lo, _), length in zip(grid.coords, n, grid.spec.extents, grid.lengths):
        out = out * np.cos(i * np.pi * (x - lo) / length)
    return out


def _design(samples: FourierSamples, modes: Sequence[np.ndarray]) -> np.ndarray:
    return np.array([[np.sum(s.kernel * mode) for mode in modes] for s in samples.samples])


def synthesize(grid: Grid, modes: Sequence[np.ndarray], coefficients) -> ScalarField:
    values = np.tensordot(np.asarray(coefficients, dtype=float), np.array(modes), axes=1)
    return ScalarField(grid, values)


@dataclass
class Linearization:
    """Pairing residuals under a source estimate and their coefficient derivatives."""

    samples: FourierSamples
    residual: np.ndarray
    jacobian: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.residual))


def linearize_samples(
    samples: FourierSamples,
    c2: MeasurementC2,
    base: StationarySolution,
    modes: Sequence[np.ndarray],
    coefficients: np.ndarray,
    executor: Optional[Executor] = None,
) -> Linearization:
    """Residuals ``D(c) c - s`` of the source ``sum c_j mode_j`` with their Jacobian.

    Along ``mode_j`` the model ``y`` changes by the zero-boundary solution of
    the shifted weighted equation with source ``mode_j y``.
    """
    grid = samples.grid
    eq = reference_equation(base)
    source = synthesize(grid, modes, coefficients)
    Q = source.values

    def run(sample: FourierSample):
        record = c2.record(sample.n, sample.R)
        weighted = _weighted(eq, _probe_of(grid, record), source)
        model = weighted.solve_dirichlet(record.trace.scatter()).values
        weight = sample.adjoint_weight
        row = [
            np.sum(weight * (mode * model + Q * weighted.solve_interior(mode * model)))
            for mode in modes
        ]
        return replace(sample, model=model), np.array(row)

    items = samples.samples
    results = list(executor.map(run, items) if executor is not None else map(run, items))
    updated = FourierSamples(grid, [sample for sample, _ in results])
    residual = _design(updated, modes) @ np.asarray(coefficients) - updated.values()
    return Linearization(updated, residual, np.array([row for _, row in results]))


@dataclass
class SourceFit:
    source: ScalarField
    coefficients: Dict[Index, float]
    fit: TikhonovFit

    def to_dict(self) -> dict:
        return {
            "coefficients": [
                {"n": list(n), "value": value} for n, value in self.coefficients.items()
            ],
            "fit": self.fit.to_dict(),
        }


def synthesize_source(
    samples: FourierSamples,
    band: Optional[int] = None,
    options: Optional[RecoveryOptions] = None,
) -> SourceFit:
    """Real cosine coefficients of ``Q`` up to ``band`` fitted to the samples.

    Each row keeps the sample kernel ``h^d exp(i k . x) y2 y``, so this is a
    Tikhonov fit rather than a truncated Fourier sum of the values.
    """
    options = options if options is not None else RecoveryOptions.from_settings()
    grid = samples.grid
    band = samples.band if band is None else band
    indices = cosine_indices(grid.dim, band)
    modes = [cosine_mode(grid, n) for n in indices]
    design = _design(samples, modes)
    values = samples.values()
    fit = tikhonov_solve(
        np.vstack([design.real, design.imag]),
        np.concatenate([values.real, values.imag]),
        options.tikhonov_weight,
        options.degenerate_fraction,
    )
    coefficients = {n: float(c) for n, c in zip(indices, fit.coefficients)}
    source = sum(c * mode for c, mode in zip(fit.coefficients, modes))
    return SourceFit(ScalarField(grid, np.asarray(source, dtype=float)), coefficients, fit)


def divide_by_density(
    source: ScalarField, base: StationarySolution, floor: float
) -> ScalarField:
    m0 = base.m0.values
    if np.min(m0) <= floor * np.max(np.abs(m0)):
        raise PositivityFloor(
            f"m0 drops to {np.min(m0):.3e}, below {floor:g} of its maximum"
        )
    return source.with_values(source.values / m0)


def invert_fourier(
    samples: FourierSamples,
    base: StationarySolution,
    options: Optional[RecoveryOptions] = None,
    band: Optional[int] = None,
) -> ScalarField:
    """``F1 = Q / m0`` from the cosine synthesis of ``Q``."""
    options = options if options is not None else RecoveryOptions.from_settings()
    require_same_grid(samples, base.m0)
    if options.symmetry_tol is not None:
        samples.check_conjugate_symmetry(options.symmetry_tol)
    fitted = synthesize_source(samples, band, options)
    return divide_by_density(fitted.source, base, options.positivity_floor)


@dataclass
class FirstOrderRecovery:
    F1: ScalarField
    source: SourceFit
    samples: FourierSamples
    history: List[float] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "source": self.source.to_dict(),
            "samples": self.samples.to_dict(),
            "refinement_changes": self.history,
            "pairing_residuals": self.residuals,
        }


MAX_HALVINGS = 8


def _step(current: Linearization, options: RecoveryOptions) -> np.ndarray:
    J, r = current.jacobian, current.residual
    return tikhonov_solve(
        np.vstack([J.real, J.imag]),
        -np.concatenate([r.real, r.imag]),
        options.tikhonov_weight,
        options.degenerate_fraction,
    ).coefficients


def recover_first_order(
    c2: MeasurementC2,
    base: StationarySolution,
    R: Optional[float] = None,
    band: Optional[int] = None,
    options: Optional[RecoveryOptions] = None,
    probe_options: Optional[ProbeOptions] = None,
    executor: Optional[Executor] = None,
) -> FirstOrderRecovery:
    """Samples, synthesis and up to ``options.refinements`` Gauss-Newton steps.

    Steps are halved until the pairing residual decreases; the loop ends when
    no halving helps or the source changes by less than ``1e-10`` relative.
    """
    options = options if options is not None else RecoveryOptions.from_settings()
    samples = recover_fourier_samples(c2, base, R, probe_options, executor)
    if options.symmetry_tol is not None:
        samples.check_conjugate_symmetry(options.symmetry_tol)
    grid = samples.grid
    band = samples.band if band is None else band
    fitted = synthesize_source(samples, band, options)
    indices = list(fitted.coefficients)
    modes = [cosine_mode(grid, n) for n in indices]
    coefficients = np.array(list(fitted.coefficients.values()))
    current = linearize_samples(samples, c2, base, modes, coefficients, executor)
    scale = max(float(np.linalg.norm(samples.values())), 1e-300)
    history: List[float] = []
    residuals = [current.norm / scale]
    for step in range(options.refinements):
        if current.norm <= 1e-13 * scale:
            break
        direction = _step(current, options)
        length = 1.0
        for _ in range(MAX_HALVINGS):
            updated = coefficients + length * direction
            trial = linearize_samples(current.samples, c2, base, modes, updated, executor)
            if trial.norm < current.norm:
                break
            length *= 0.5
        else:
            logger.debug(f"Refinement {step + 1}: no decrease along the Gauss-Newton step")
            break
        new = synthesize(grid, modes, updated)
        delta = new - synthesize(grid, modes, coefficients)
        change = l2_norm(delta) / max(l2_norm(new), 1e-300)
        coefficients, current = updated, trial
        history.append(float(change))
        residuals.append(current.norm / scale)
        logger.debug(
            f"Refinement {step + 1}: step {length:g}, relative change {change:.3e}, "
            f"residual {residuals[-1]:.3e}"
        )
        if change <= 1e-10:
            break
    samples = current.samples
    design = synthesize_source(samples, band, options).fit
    fit = replace(
        design,
        coefficients=coefficients,
        residual=current.norm,
        relative_residual=residuals[-1],
    )
    fitted = SourceFit(
        synthesize(grid, modes, coefficients),
        {n: float(c) for n, c in zip(indices, coefficients)},
        fit,
    )
    F1 = divide_by_density(fitted.source, base, options.positivity_floor)
    logger.info(
        f"Recovered F1 from {len(samples.samples)} samples "
        f"(band {band}, {len(history)} refinements, residual {residuals[-1]:.3e})"
    )
    return FirstOrderRecovery(F1, fitted, samples, history, residuals)
