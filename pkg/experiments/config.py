"""
Run configuration files.

A run configuration is a JSON document; ``docs/config.md`` lists every
section. Parsing validates types and ranges eagerly and reports problems
with the dotted path of the offending field, or with line and column when
the document itself is malformed. Expressions are only parsed here; they are
evaluated on a grid when a pipeline asks for the corresponding field.
"""

import json
import logging
from dataclasses import dataclass, field, fields
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings

from cauchy.archives import config_hash
from experiments.expressions import Expression
from forward.coefficients import BoundaryData, CostModel, MFGCoefficients
from forward.stationary import StationarySolution, build_stationary_baseline
from grid.mesh import Grid, GridSpec, build_grid
from linearize.systems import MAX_ORDER, PerturbationInput
from mfglab.errors import ConfigError, GridError
from mfglab.options import ProbeOptions, RecoveryOptions, SolverOptions

logger = logging.getLogger(__name__)

SECTIONS = (
    "name",
    "seed",
    "output",
    "grid",
    "coefficients",
    "cost",
    "baseline",
    "perturbations",
    "frechet",
    "stationary",
    "probes",
    "solver",
    "recovery",
    "measurement",
)

UNHASHED = ("output", "seed")


def _join(path: str, key) -> str:
    if isinstance(key, int):
        return f"{path}[{key}]"
    return f"{path}.{key}" if path else str(key)


def _section(data: Mapping, key: str, path: str = "", required: bool = True) -> dict:
    where = _join(path, key)
    if key not in data:
        if required:
            raise ConfigError("missing section", where)
        return {}
    value = data[key]
    if not isinstance(value, dict):
        raise ConfigError(f"expected an object, got {type(value).__name__}", where)
    return value


def _known_keys(section: Mapping, allowed: Sequence[str], path: str):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown field {unknown[0]!r}", _join(path, unknown[0]))


def _number(data: Mapping, key: str, path: str, default=None, positive=False) -> float:
    where = _join(path, key)
    if key not in data:
        if default is None:
            raise ConfigError("missing value", where)
        return float(default)
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", where)
    if not np.isfinite(value):
        raise ConfigError(f"expected a finite number, got {value!r}", where)
    if positive and value <= 0:
        raise ConfigError(f"must be positive, got {value!r}", where)
    return float(value)


def _integer(data: Mapping, key: str, path: str, default=None, minimum=None) -> int:
    where = _join(path, key)
    if key not in data:
        if default is None:
            raise ConfigError("missing value", where)
        return int(default)
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", where)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be at least {minimum}, got {value}", where)
    return value


def _list(data: Mapping, key: str, path: str, default=None) -> list:
    where = _join(path, key)
    if key not in data:
        if default is None:
            raise ConfigError("missing list", where)
        return list(default)
    value = data[key]
    if not isinstance(value, list):
        raise ConfigError(f"expected a list, got {type(value).__name__}", where)
    return value


def _numbers(data: Mapping, key: str, path: str, default=None, positive=False) -> List[float]:
    values = _list(data, key, path, default)
    where = _join(path, key)
    return [
        _number({i: v}, i, where, positive=positive) for i, v in enumerate(values)
    ]


def _expression(data: Mapping, key: str, path: str, default=None) -> Expression:
    where = _join(path, key)
    if key not in data:
        if default is None:
            raise ConfigError("missing expression", where)
        return Expression.parse(default, where)
    return Expression.parse(data[key], where)


def _expressions(data: Mapping, key: str, path: str) -> List[Expression]:
    values = _list(data, key, path, default=())
    where = _join(path, key)
    return [Expression.parse(v, _join(where, i)) for i, v in enumerate(values)]


def _grid_spec(data: Mapping, path: str, time_dependent: bool) -> GridSpec:
    allowed = ("dim", "extents", "nx", "nt", "horizon")
    _known_keys(data, allowed, path)
    dim = _integer(data, "dim", path, minimum=1)
    extents = _list(data, "extents", path, default=[[0.0, 1.0]] * dim)
    for i, pair in enumerate(extents):
        if not isinstance(pair, list) or len(pair) != 2:
            raise ConfigError("expected a [lower, upper] pair", f"{path}.extents[{i}]")
        for j in (0, 1):
            _number({j: pair[j]}, j, f"{path}.extents[{i}]")
    nx = _list(data, "nx", path)
    for i, n in enumerate(nx):
        _integer({i: n}, i, f"{path}.nx", minimum=1)
    if time_dependent:
        nt = _integer(data, "nt", path, minimum=2)
        horizon = _number(data, "horizon", path, positive=True)
    else:
        if "nt" in data or "horizon" in data:
            raise ConfigError("stationary grids take no time axis", path)
        nt, horizon = 0, 1.0
    try:
        return GridSpec(dim, tuple(tuple(p) for p in extents), tuple(nx), nt, horizon)
    except GridError as exc:
        raise ConfigError(str(exc), path) from exc


def _overrides(cls, data: Mapping, key: str, path: str = "", extra: Sequence[str] = ()):
    section = _section(data, key, path, required=False)
    where = _join(path, key)
    names = [f.name for f in fields(cls)]
    _known_keys(section, list(names) + list(extra), where)
    values = {k: v for k, v in section.items() if k in names}
    for name, value in values.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", _join(where, name))
    try:
        return cls.from_settings().updated(values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), where) from exc


@dataclass(frozen=True)
class PerturbationSpec:
    g: Expression
    h: Expression


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated run configuration; ``raw`` is the document as parsed."""

    raw: Mapping[str, Any]
    name: str
    seed: int
    output: Path
    grid_spec: GridSpec
    sigma: Expression
    kappa: Expression
    expansion_density: Expression
    F: Tuple[Expression, ...]
    G: Tuple[Expression, ...]
    initial_density: Expression
    value_data: Expression
    density_data: Expression
    perturbations: Tuple[PerturbationSpec, ...]
    epsilon: Tuple[float, ...]
    frechet_epsilons: Tuple[float, ...]
    stationary_spec: GridSpec
    stationary_v0: Optional[Expression]
    stationary_F1: Expression
    band: int
    radii: Tuple[float, ...]
    decay_k: Tuple[float, ...]
    decay_radii: Tuple[float, ...]
    solver: SolverOptions
    probe: ProbeOptions
    recovery: RecoveryOptions
    recovery_order: int
    noise_level: float
    measurement_order: int
    source: Optional[Path] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def digest(self) -> str:
        """Hash of the document without its output location and seed."""
        return config_hash({k: v for k, v in self.raw.items() if k not in UNHASHED})

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        if seed is None or seed == self.seed:
            return self
        if seed < 0 or seed >= 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}", "seed")
        return parse_config({**self.raw, "seed": seed}, self.source)

    # Domain objects

    @cached_property
    def grid(self) -> Grid:
        return build_grid(self.grid_spec)

    @cached_property
    def stationary_grid(self) -> Grid:
        return build_grid(self.stationary_spec)

    def coefficients(self) -> MFGCoefficients:
        return MFGCoefficients(self.sigma.space_time(self.grid), self.kappa.space_time(self.grid))

    def cost_model(self) -> CostModel:
        grid = self.grid
        density = self.expansion_density
        m0 = density.space_time(grid) if density.uses_time else density.spatial(grid)
        return CostModel(
            m0,
            [F.space_time(grid) for F in self.F],
            [G.spatial(grid) for G in self.G],
        )

    def baseline_data(self):
        """``(f, g, h)``: initial density and the Dirichlet data of ``v`` and ``m``."""
        grid = self.grid
        return (
            self.initial_density.spatial(grid),
            self.value_data.boundary_data(grid),
            self.density_data.boundary_data(grid),
        )

    def perturbation_input(self) -> PerturbationInput:
        grid = self.grid
        return PerturbationInput(
            [BoundaryData.from_field(p.g.space_time(grid)) for p in self.perturbations],
            [BoundaryData.from_field(p.h.space_time(grid)) for p in self.perturbations],
            self.epsilon,
        )

    def stationary_baseline(self) -> StationarySolution:
        grid = self.stationary_grid
        seed = None if self.stationary_v0 is None else self.stationary_v0.spatial(grid)
        return build_stationary_baseline(grid, seed)

    def stationary_source(self):
        return self.stationary_F1.spatial(self.stationary_grid)

    def workers(self) -> int:
        return int(settings.MFGLAB.get("WORKERS", 1))

    def summary(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "config_hash": self.digest,
            "grid": self.grid_spec.to_dict(),
            "stationary_grid": self.stationary_spec.to_dict(),
        }


def parse_config(data: Any, source: Optional[Path] = None) -> RunConfig:
    """Validate a decoded configuration document."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    _known_keys(data, SECTIONS, "")

    name = data.get("name", "run")
    if not isinstance(name, str) or not name:
        raise ConfigError("expected a non-empty string", "name")
    seed = _integer(data, "seed", "", default=0, minimum=0)
    if seed >= 2**64:
        raise ConfigError("seed must fit in 64 bits", "seed")
    output = data.get("output", str(Path(settings.OUTPUT_DIR) / name))
    if not isinstance(output, str):
        raise ConfigError("expected a path string", "output")

    grid_spec = _grid_spec(_section(data, "grid"), "grid", time_dependent=True)

    coefficients = _section(data, "coefficients", required=False)
    _known_keys(coefficients, ("sigma", "kappa"), "coefficients")
    sigma = _expression(coefficients, "sigma", "coefficients", default="1")
    kappa = _expression(coefficients, "kappa", "coefficients", default="1")

    cost = _section(data, "cost")
    _known_keys(cost, ("expansion_density", "F", "G"), "cost")
    F = _expressions(cost, "F", "cost")
    G = _expressions(cost, "G", "cost")
    for i, expr in enumerate(G):
        if expr.uses_time:
            raise ConfigError("terminal cost coefficients must not depend on t", f"cost.G[{i}]")
    if max(len(F), len(G)) > MAX_ORDER:
        raise ConfigError(f"cost models are truncated at order {MAX_ORDER}", "cost")
    volume = float(np.prod([hi - lo for lo, hi in grid_spec.extents]))
    expansion_density = _expression(
        cost, "expansion_density", "cost", default=repr(1.0 / volume)
    )

    baseline = _section(data, "baseline", required=False)
    _known_keys(baseline, ("initial_density", "value", "density"), "baseline")
    initial_density = _expression(
        baseline, "initial_density", "baseline", default=expansion_density.source
    )
    if initial_density.uses_time:
        raise ConfigError("initial density must not depend on t", "baseline.initial_density")
    value_data = _expression(baseline, "value", "baseline", default="0")
    density_data = _expression(baseline, "density", "baseline", default=initial_density.source)

    perturbations = _section(data, "perturbations", required=False)
    _known_keys(perturbations, ("inputs", "epsilon"), "perturbations")
    inputs = _list(perturbations, "inputs", "perturbations", default=())
    specs = []
    for i, entry in enumerate(inputs):
        where = f"perturbations.inputs[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError("expected an object with 'g' and 'h'", where)
        _known_keys(entry, ("g", "h"), where)
        specs.append(
            PerturbationSpec(
                _expression(entry, "g", where, default="0"),
                _expression(entry, "h", where, default="0"),
            )
        )
    epsilon = _numbers(perturbations, "epsilon", "perturbations", default=[0.1] * len(specs))
    if len(epsilon) != len(specs):
        raise ConfigError(
            f"expected one amplitude per input ({len(specs)}), got {len(epsilon)}",
            "perturbations.epsilon",
        )

    frechet = _section(data, "frechet", required=False)
    _known_keys(frechet, ("epsilons",), "frechet")
    frechet_epsilons = _numbers(
        frechet, "epsilons", "frechet", default=[1e-1, 3e-2, 1e-2], positive=True
    )

    stationary = _section(data, "stationary", required=False)
    _known_keys(stationary, ("grid", "v0", "F1"), "stationary")
    if "grid" in stationary:
        stationary_spec = _grid_spec(
            _section(stationary, "grid", "stationary"), "stationary.grid", False
        )
    else:
        stationary_spec = GridSpec(3, ((0.0, 1.0),) * 3, (16, 16, 16))
    stationary_v0 = (
        _expression(stationary, "v0", "stationary") if "v0" in stationary else None
    )
    stationary_F1 = _expression(stationary, "F1", "stationary", default="0")

    probes = _section(data, "probes", required=False)
    probe_fields = [f.name for f in fields(ProbeOptions)]
    _known_keys(probes, ["band", "R", "decay"] + probe_fields, "probes")
    band = _integer(probes, "band", "probes", default=1, minimum=0)
    radii = _numbers(probes, "R", "probes", default=[2.0, 4.0, 8.0], positive=True)
    decay = _section(probes, "decay", "probes", required=False)
    _known_keys(decay, ("k", "R"), "probes.decay")
    decay_k = _numbers(decay, "k", "probes.decay", default=[np.pi] + [0.0] * (stationary_spec.dim - 1))
    if len(decay_k) != stationary_spec.dim:
        raise ConfigError(
            f"expected {stationary_spec.dim} components", "probes.decay.k"
        )
    decay_radii = _numbers(decay, "R", "probes.decay", default=[1.0, 2.0, 4.0, 8.0], positive=True)
    probe = _overrides(ProbeOptions, data, "probes", extra=("band", "R", "decay"))

    solver = _overrides(SolverOptions, data, "solver")
    recovery = _overrides(RecoveryOptions, data, "recovery", extra=("order",))
    recovery_order = _integer(
        _section(data, "recovery", required=False), "order", "recovery", default=2, minimum=1
    )
    if recovery_order > MAX_ORDER:
        raise ConfigError(f"orders up to {MAX_ORDER} are supported", "recovery.order")

    measurement = _section(data, "measurement", required=False)
    _known_keys(measurement, ("noise_level", "order"), "measurement")
    noise_level = _number(measurement, "noise_level", "measurement", default=0.0)
    if noise_level < 0:
        raise ConfigError("must be nonnegative", "measurement.noise_level")
    measurement_order = _integer(
        measurement, "order", "measurement", default=recovery_order, minimum=1
    )
    if measurement_order > MAX_ORDER:
        raise ConfigError(f"orders up to {MAX_ORDER} are supported", "measurement.order")

    return RunConfig(
        raw=data,
        name=name,
        seed=seed,
        output=Path(output),
        grid_spec=grid_spec,
        sigma=sigma,
        kappa=kappa,
        expansion_density=expansion_density,
        F=tuple(F),
        G=tuple(G),
        initial_density=initial_density,
        value_data=value_data,
        density_data=density_data,
        perturbations=tuple(specs),
        epsilon=tuple(epsilon),
        frechet_epsilons=tuple(frechet_epsilons),
        stationary_spec=stationary_spec,
        stationary_v0=stationary_v0,
        stationary_F1=stationary_F1,
        band=band,
        radii=tuple(radii),
        decay_k=tuple(decay_k),
        decay_radii=tuple(decay_radii),
        solver=solver,
        probe=probe,
        recovery=recovery,
        recovery_order=recovery_order,
        noise_level=noise_level,
        measurement_order=measurement_order,
        source=source,
    )


def loads_config(text: str, source: Optional[Path] = None) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno, column=exc.colno) from exc
    return parse_config(data, source)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    config = loads_config(text, path)
    logger.info(f"Loaded configuration {config.name!r} from {path} ({config.digest[:12]})")
    return config
