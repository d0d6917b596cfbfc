"""
Typed views of the numerical defaults in ``settings.MFGLAB``.

Solvers accept an options object and fall back to ``from_settings()`` when
none is given, so library calls, tests and management commands all share the
environment-driven defaults.
"""

from dataclasses import dataclass, fields, replace
from typing import Any, Mapping

from django.conf import settings


def _lab_settings() -> Mapping[str, Any]:
    return getattr(settings, "MFGLAB", {})


class _OptionsMixin:
    _keys: Mapping[str, str] = {}

    @classmethod
    def from_settings(cls):
        values = _lab_settings()
        kwargs = {
            attr: values[key] for attr, key in cls._keys.items() if key in values
        }
        return cls(**kwargs)

    def updated(self, overrides: Mapping[str, Any]):
        """Return a copy with the known keys of ``overrides`` applied."""
        names = {f.name for f in fields(self)}
        return replace(self, **{k: v for k, v in overrides.items() if k in names})


@dataclass(frozen=True)
class SolverOptions(_OptionsMixin):
    theta: float = 0.5
    tol: float = 1e-8
    max_iter: int = 200
    newton_tol: float = 1e-12
    newton_max_iter: int = 30
    blowup_bound: float = 1e8
    negative_density_tol: float = 1e-8

    _keys = {
        "theta": "PICARD_DAMPING",
        "tol": "PICARD_TOL",
        "max_iter": "PICARD_MAX_ITER",
        "newton_tol": "NEWTON_TOL",
        "newton_max_iter": "NEWTON_MAX_ITER",
        "blowup_bound": "BLOWUP_BOUND",
        "negative_density_tol": "NEGATIVE_DENSITY_TOL",
    }

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"damping theta must lie in (0, 1], got {self.theta}")
        if self.tol <= 0 or self.newton_tol <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.max_iter < 1 or self.newton_max_iter < 1:
            raise ValueError("iteration caps must be at least 1")


@dataclass(frozen=True)
class ProbeOptions(_OptionsMixin):
    tol: float = 1e-10
    max_iter: int = 200
    symbol_floor: float = 1e-8
    overflow_cap: float = 300.0

    _keys = {
        "tol": "REMAINDER_TOL",
        "max_iter": "REMAINDER_MAX_ITER",
        "symbol_floor": "SYMBOL_FLOOR",
        "overflow_cap": "OVERFLOW_CAP",
    }

    def __post_init__(self):
        if self.tol <= 0 or self.overflow_cap <= 0:
            raise ValueError("probe tolerance and overflow cap must be positive")


@dataclass(frozen=True)
class RecoveryOptions(_OptionsMixin):
    tikhonov_weight: float = 1e-6
    coarsening: int = 4
    positivity_floor: float = 1e-6
    cauchy_misfit_tol: float = 5e-2
    degenerate_fraction: float = 0.5
    symmetry_tol: float = 1e-6
    refinements: int = 3
    max_iter: int = 10

    _keys = {
        "tikhonov_weight": "TIKHONOV_WEIGHT",
        "coarsening": "RECOVERY_COARSENING",
        "positivity_floor": "POSITIVITY_FLOOR",
        "cauchy_misfit_tol": "CAUCHY_MISFIT_TOL",
        "degenerate_fraction": "DEGENERATE_FRACTION",
        "symmetry_tol": "SYMMETRY_TOL",
        "refinements": "RECOVERY_REFINEMENTS",
        "max_iter": "RECOVERY_MAX_ITER",
    }

    def __post_init__(self):
        if self.coarsening < 1:
            raise ValueError("recovery coarsening must be at least 1")
        if self.tikhonov_weight < 0:
            raise ValueError("Tikhonov weight must be nonnegative")
