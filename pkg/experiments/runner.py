"""
Pipelines behind the management commands.

Every pipeline reads a :class:`RunConfig`, writes its artifacts below ``out``
through the atomic writers of :mod:`grid.fieldio`, records them in the run
manifest and returns a JSON-ready summary.
"""

import json
import logging
from dataclasses import asdict
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from cauchy.archives import MANIFEST, read_archive, write_archive
from cauchy.energy import cost_energy, energy_integral_from_boundary
from cauchy.measurements import extract_c1, extract_c3
from cauchy.probing import frequency_lattice, probe_experiment
from cgo.construction import build_cgo, verify_decay
from cgo.probes import probe_pair
from experiments.config import RunConfig
from experiments.manifest import ExperimentManifest
from forward.coefficients import CostModel, TimeDependentSolution, as_space_time
from forward.solvers import check_compatibility, mass_balance, solve_mfg_timedep
from grid.fieldio import atomic_write_text, read_field, write_field
from grid.fields import SpaceTimeField
from inverse.fourier import recover_first_order
from inverse.report import ReconstructionReport
from inverse.stationary import recover_stationary_state
from inverse.timedep import (
    recover_higher_order,
    recover_terminal_linear,
    round_trip_residual,
    with_order,
)
from inverse.ucp import ucp_residual_check
from linearize.frechet import cross_derivative_check, frechet_check
from linearize.stationary import reduce_to_scalar
from linearize.systems import (
    LinearizedExpansion,
    LinearizedSystem,
    check_linear_compatibility,
)
from mfglab.errors import (
    ArchiveError,
    ConfigError,
    InconsistentCauchyData,
    IncompatibleData,
)

logger = logging.getLogger(__name__)


def write_json(path, payload) -> Path:
    return atomic_write_text(
        path, json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n"
    )


def field_name(labels) -> str:
    return "d" + "_".join(str(label) for label in labels)


def multi_indices(labels, order: int) -> List[tuple]:
    """All multisets of ``labels`` with one to ``order`` entries, by order."""
    out = []
    for k in range(1, order + 1):
        out.extend(combinations_with_replacement(labels, k))
    return out


def solve_baseline(config: RunConfig, cost: Optional[CostModel] = None) -> TimeDependentSolution:
    """Forward solution of the configured baseline data under ``cost``."""
    coeffs = config.coefficients()
    cost = config.cost_model() if cost is None else cost
    f, g, h = config.baseline_data()
    check_compatibility(cost, f, g, h)
    return solve_mfg_timedep(coeffs, cost, f, g, h, config.solver)


def linearized_expansion(config: RunConfig, base: TimeDependentSolution) -> LinearizedExpansion:
    if not config.perturbations:
        raise ConfigError("at least one perturbation input is required", "perturbations.inputs")
    system = LinearizedSystem(base, config.coefficients(), config.cost_model(), config.solver)
    perturbations = config.perturbation_input()
    for label in perturbations.labels:
        g, h = perturbations.data(label)
        try:
            check_linear_compatibility(system.cost.G(1), g, h)
        except IncompatibleData as exc:
            raise IncompatibleData(f"perturbations.inputs[{label - 1}]: {exc}") from exc
    return LinearizedExpansion(system, perturbations)


def run_forward(config: RunConfig, out: Path, manifest: ExperimentManifest, executor=None) -> dict:
    coeffs = config.coefficients()
    cost = config.cost_model()
    with manifest.timed("solve"):
        solution = solve_baseline(config, cost)
    with manifest.timed("write"):
        manifest.record(write_field(out / "fields" / "v.mfgf", solution.v), root=out)
        manifest.record(write_field(out / "fields" / "m.mfgf", solution.m), root=out)
    rates, flux = mass_balance(coeffs, solution)
    summary = {
        "picard_iterations": solution.picard_iterations,
        "final_update_norm": solution.final_update_norm,
        "update_history": solution.update_history,
        "mass_balance_gap": float(np.max(np.abs(rates - flux))) if len(rates) else 0.0,
        "cost_energy": cost_energy(solution, cost),
        "cost": cost.describe(),
    }
    manifest.record(write_json(out / "forward.json", summary), root=out)
    return summary


def run_linearize(config: RunConfig, out: Path, manifest: ExperimentManifest, executor=None) -> dict:
    coeffs = config.coefficients()
    cost = config.cost_model()
    with manifest.timed("baseline"):
        base = solve_baseline(config, cost)
    expansion = linearized_expansion(config, base)
    order = min(2, config.measurement_order)
    residuals = {}
    with manifest.timed("linearized"):
        for labels in multi_indices(expansion.perturbations.labels, order):
            solution = expansion(labels)
            name = field_name(labels)
            residuals[name] = solution.residual
            manifest.record(write_field(out / "fields" / f"{name}_v.mfgf", solution.v_lin), root=out)
            manifest.record(write_field(out / "fields" / f"{name}_m.mfgf", solution.m_lin), root=out)
    g, h = expansion.perturbations.data(1)
    with manifest.timed("frechet"):
        frechet = frechet_check(
            base, coeffs, cost, g, h, config.frechet_epsilons, config.solver, executor
        )
    manifest.record(atomic_write_text(out / "frechet.json", frechet.to_json() + "\n"), root=out)
    summary = {"residuals": residuals, "frechet": frechet.to_dict()}
    if len(expansion.perturbations.labels) >= 2:
        with manifest.timed("cross_derivative"):
            cross = cross_derivative_check(
                base,
                coeffs,
                cost,
                expansion.perturbations,
                min(config.frechet_epsilons),
                config.solver,
                executor,
            )
        summary["cross_derivative"] = cross.to_dict()
    manifest.record(write_json(out / "linearize.json", summary), root=out)
    return summary


def run_probe(config: RunConfig, out: Path, manifest: ExperimentManifest, executor=None) -> dict:
    base = config.stationary_baseline()
    eq = reduce_to_scalar(base, config.stationary_source())
    with manifest.timed("decay"):
        report = verify_decay(eq, config.decay_k, config.decay_radii, config.probe, executor)
    manifest.record(report.write_csv(out / "decay.csv"), root=out)
    manifest.record(write_json(out / "decay.json", report.to_dict()), root=out)
    probes = []
    with manifest.timed("probes"):
        for R in config.decay_radii:
            cgo = build_cgo(eq, probe_pair(config.decay_k, R)[0], config.probe)
            manifest.record(cgo.save(out / "probes", f"R{R:g}"), root=out)
            probes.append(cgo.summary())
    manifest.record(write_json(out / "probes.json", probes), root=out)
    return {"decay": report.to_dict(), "probes": len(probes)}


def _knowns(config: RunConfig) -> dict:
    return {
        "sigma": config.sigma.source,
        "kappa": config.kappa.source,
        "expansion_density": config.expansion_density.source,
        "baseline": {
            "initial_density": config.initial_density.source,
            "value": config.value_data.source,
            "density": config.density_data.source,
        },
    }


def _noise_seed(seed: int, stream: int) -> int:
    return (seed + stream) % 2**64


def write_ground_truth(config: RunConfig, directory: Path, manifest: ExperimentManifest, base=None):
    """Fields a reconstruction is compared against in test mode."""
    directory = Path(directory)
    written = []
    if "stationary" in config.raw:
        stationary = config.stationary_baseline()
        written += write_field(directory / "v0.mfgf", stationary.v0)
        written += write_field(directory / "m0.mfgf", stationary.m0)
        written += write_field(directory / "F1.mfgf", config.stationary_source())
    if base is not None:
        cost = config.cost_model().recentred(base.m)
        for k in range(1, cost.order + 1):
            if cost.G(k) is not None:
                written += write_field(directory / f"G{k}.mfgf", cost.G(k))
            if k >= 2 and cost.F(k) is not None:
                F = as_space_time(base.grid, cost.F(k))
                written += write_field(directory / f"F{k}.mfgf", F)
    manifest.record(written)
    logger.info(f"Wrote {len(written)} ground-truth fields to {directory}")
    return written


def run_measure(
    config: RunConfig,
    out: Path,
    manifest: ExperimentManifest,
    executor=None,
    ground_truth: Optional[Path] = None,
) -> dict:
    digest = config.digest
    knowns = _knowns(config)
    summary: Dict[str, dict] = {}
    coeffs = config.coefficients()
    with manifest.timed("baseline"):
        base = solve_baseline(config)
    with manifest.timed("c1"):
        path = write_archive(
            out / "c1",
            extract_c1(base, coeffs),
            digest,
            knowns,
            config.noise_level,
            _noise_seed(config.seed, 1),
        )
    manifest.record(path, root=out)
    summary["c1"] = {"archive": "c1"}

    if "stationary" in config.raw:
        grid = config.stationary_grid
        with manifest.timed("c2"):
            c2 = probe_experiment(
                config.stationary_baseline(),
                config.stationary_source(),
                frequency_lattice(grid.dim, config.band),
                config.radii,
                config.probe,
                executor,
            )
            path = write_archive(
                out / "c2",
                c2,
                digest,
                {"band": config.band, "R": list(config.radii)},
                config.noise_level,
                _noise_seed(config.seed, 2),
            )
        manifest.record(path, root=out)
        summary["c2"] = {"archive": "c2", "records": len(c2.records)}

    if config.perturbations:
        expansion = linearized_expansion(config, base)
        labels = multi_indices(expansion.perturbations.labels, config.measurement_order)
        with manifest.timed("c3"):
            c3 = extract_c3(base, [expansion(l) for l in labels], config.epsilon)
            c3_knowns = {**knowns, "F1": config.F[0].source if config.F else "0"}
            path = write_archive(
                out / "c3",
                c3,
                digest,
                c3_knowns,
                config.noise_level,
                _noise_seed(config.seed, 3),
            )
        manifest.record(path, root=out)
        summary["c3"] = {"archive": "c3", "records": len(c3.records)}
    else:
        logger.warning("No perturbation inputs configured; skipping the c3 archive")

    if ground_truth is not None:
        write_ground_truth(config, ground_truth, manifest, base)
    manifest.record(write_json(out / "measure.json", summary), root=out)
    return summary


def known_baseline(config: RunConfig, c3) -> TimeDependentSolution:
    """The baseline re-solved from declared data with the cost switched off.

    The costs vanish at the expansion density, so this is the baseline of the
    experiment whenever it sits at that density. Its traces are checked
    against the archived ones.
    """
    grid = config.grid
    density = config.cost_model().expansion_density
    base = solve_baseline(config, CostModel.zero(grid, density))
    v_trace, m_trace = base.traces()
    scale = max(1.0, c3.v_trace.max_abs(), c3.m_trace.max_abs())
    gap = max((c3.v_trace - v_trace).max_abs(), (c3.m_trace - m_trace).max_abs()) / scale
    if gap > config.recovery.cauchy_misfit_tol:
        raise InconsistentCauchyData(
            f"archived baseline traces differ from the declared baseline by {gap:.3e}; "
            f"time-dependent recovery needs the baseline at the expansion density"
        )
    logger.info(f"Declared baseline matches the archive (gap {gap:.3e})")
    return base


def _archive(root: Path, kind: str) -> Optional[Path]:
    path = root / kind
    return path if (path / MANIFEST).exists() else None


def read_ground_truth(directory) -> dict:
    directory = Path(directory)
    if not directory.is_dir():
        raise ArchiveError(f"ground-truth directory {directory} does not exist")
    return {path.name[: -len(".mfgf")]: read_field(path) for path in sorted(directory.glob("*.mfgf"))}


def run_reconstruct(
    config: RunConfig,
    out: Path,
    manifest: ExperimentManifest,
    executor=None,
    archive: Optional[Path] = None,
    ground_truth: Optional[Path] = None,
) -> dict:
    archive = Path(archive) if archive is not None else config.output / "measure"
    digest = config.digest
    report = ReconstructionReport(seed=config.seed, config_hash=digest)
    report.parameters = {
        "solver": asdict(config.solver),
        "probes": {**asdict(config.probe), "band": config.band, "R": list(config.radii)},
        "recovery": {**asdict(config.recovery), "order": config.recovery_order},
    }
    found = [kind for kind in ("c1", "c2", "c3") if _archive(archive, kind)]
    if not {"c2", "c3"} & set(found):
        raise ArchiveError(f"no c2 or c3 measurement archive under {archive}")

    if "c1" in found:
        c1, _ = read_archive(archive / "c1", digest, "c1")
        report.diagnostics["energy_from_boundary"] = energy_integral_from_boundary(
            c1, config.coefficients()
        )

    if "c2" in found:
        c2, _ = read_archive(archive / "c2", digest, "c2")
        with manifest.timed("stationary"):
            stationary = recover_stationary_state(c2, config.recovery)
        report.add("v0", stationary.v0, stationary.to_dict())
        report.add("m0", stationary.m0)
        with manifest.timed("first_order"):
            first = recover_first_order(
                c2,
                stationary,
                band=config.band,
                options=config.recovery,
                probe_options=config.probe,
                executor=executor,
            )
        report.add("F1", first.F1, first.to_dict())
        report.history["F1_refinement"] = first.history

    if "c3" in found:
        c3, _ = read_archive(archive / "c3", digest, "c3")
        coeffs = config.coefficients()
        with manifest.timed("baseline"):
            base = known_baseline(config, c3)
        grid = config.grid
        F1 = config.F[0].space_time(grid) if config.F else SpaceTimeField.zeros(grid)
        with manifest.timed("terminal"):
            terminal = recover_terminal_linear(
                c3, base, coeffs, F1, config.recovery, config.solver, executor
            )
        report.add("G1", terminal.G1, terminal.to_dict())
        report.history["G1_steps"] = terminal.steps
        known = CostModel(base.m, [F1], [terminal.G1])
        top = min(config.recovery_order, max(r.order for r in c3.records))
        for order in range(2, top + 1):
            with manifest.timed(f"order_{order}"):
                fit = recover_higher_order(
                    c3, base, coeffs, known, order, config.recovery, config.solver, executor
                )
                known = with_order(known, order, fit.F, fit.G)
                residual = round_trip_residual(c3, base, coeffs, known, order, config.solver)
            report.add(f"F{order}", fit.F, fit.to_dict())
            report.add(f"G{order}", fit.G)
            report.history[f"order_{order}_round_trip"] = {
                "residual": residual,
                "fit_residual": fit.fit.residual,
            }
        with manifest.timed("ucp"):
            ucp = ucp_residual_check(base, coeffs, F1, terminal.G1, config.solver, config.seed)
        report.diagnostics["ucp"] = ucp.to_dict()

    if ground_truth is not None:
        report.compare(read_ground_truth(ground_truth), interior_only=True)
    with manifest.timed("write"):
        path = report.write(out)
    manifest.record(path, root=out)
    manifest.record([out / "fields" / f"{name}.mfgf" for name in report.fields], root=out)
    return {
        "archives": found,
        "fields": sorted(report.fields),
        "relative_l2_error": report.errors,
    }
