"""
Exception hierarchy shared by every app of the laboratory.

Management commands map the families below onto process exit codes:
configuration and input problems exit with 2, solver and recovery failures
with 3, failed properties with 4.
"""

from typing import Optional, Sequence


class MFGLabError(Exception):
    """Base class for all laboratory errors."""


class ConfigError(MFGLabError, ValueError):
    """Run configuration could not be parsed or validated."""

    def __init__(
        self,
        message: str,
        field: Optional[str] = None,
        line: Optional[int] = None,
        column: Optional[int] = None,
    ):
        self.field = field
        self.line = line
        self.column = column
        location = []
        if field:
            location.append(f"field '{field}'")
        if line is not None:
            location.append(f"line {line}")
        if column is not None:
            location.append(f"column {column}")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


class GridError(MFGLabError, ValueError):
    """Invalid grid specification, shape mismatch or unknown region."""


class IncompatibleData(MFGLabError, ValueError):
    """Boundary data violate the corner compatibility conditions."""


class ArchiveError(MFGLabError):
    """A referenced artifact or measurement archive is missing or unreadable."""


class ArchiveIntegrityError(ArchiveError):
    """Archive manifest does not match the run configuration."""


class SolverError(MFGLabError):
    """A forward, linearized or probe solve failed."""


class MaxIterationsExceeded(SolverError):
    """Fixed-point iteration hit its iteration cap."""

    def __init__(self, message: str, last_update_norm: float):
        self.last_update_norm = last_update_norm
        super().__init__(f"{message} (last update norm {last_update_norm:.3e})")


class NewtonFailure(SolverError):
    """The per-step nonlinear solve of an implicit HJB step did not converge."""


class BlowUp(SolverError):
    """A solution value exceeded the configured bound."""


class NegativeDensity(SolverError):
    """The density went negative beyond tolerance for nonnegative data."""


class StabilityViolation(SolverError):
    """A linearized forward-backward iteration failed to contract."""


class SingularSystem(SolverError):
    """A discrete linear system is numerically singular."""


class NonContraction(SolverError):
    """The remainder fixed-point iteration diverges for the given probe."""


class OverflowCap(SolverError):
    """Exponential growth of a probe exceeds the configured cap."""


class RecoveryError(MFGLabError):
    """A reconstruction step could not produce a trustworthy result."""


class InconsistentCauchyData(RecoveryError):
    """Measured Dirichlet and Neumann traces do not fit one solution."""


class RankDeficiency(RecoveryError):
    """Least-squares system is rank deficient beyond regularization."""

    def __init__(self, message: str, singular_values: Sequence[float] = ()):
        self.singular_values = list(singular_values)
        if self.singular_values:
            smax = max(self.singular_values)
            smin = min(self.singular_values)
            message = f"{message} (singular values {smin:.3e} .. {smax:.3e})"
        super().__init__(message)


class ProductDegeneracy(RecoveryError):
    """Products of first-order densities vanish on too large a region."""


class PositivityFloor(RecoveryError):
    """A division by a density would cross the positivity floor."""


class PropertyFailure(MFGLabError):
    """One or more verification properties failed."""
