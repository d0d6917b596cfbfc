"""
Complex frequency vectors for exponentially growing probes.

For a target frequency ``k`` the pair

    xi_1 =  i k / 2 + alpha a + conj(alpha) b
    xi_2 =  i k / 2 - alpha a - conj(alpha) b

with ``alpha = sqrt(R^2 + 1/16) + i sqrt(R^2 - 1/16)`` and ``{k, a, b}`` an
orthogonal basis with ``|a| = |b| = |k|`` satisfies ``xi_j . xi_j = 0`` and
``xi_1 + xi_2 = i k``.
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from mfglab.errors import ConfigError

logger = logging.getLogger(__name__)

MIN_R = 0.25
PARALLEL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ProbeVector:
    xi: np.ndarray
    k: np.ndarray
    R: float
    role: str = "first"

    def __post_init__(self):
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=complex))
        object.__setattr__(self, "k", np.asarray(self.k, dtype=float))
        if self.role not in ("first", "second"):
            raise ConfigError(f"unknown probe role {self.role!r}", "role")

    @property
    def dim(self) -> int:
        return self.xi.size

    @property
    def magnitude(self) -> float:
        """``sqrt(xi . conj(xi))``."""
        return float(np.sqrt(np.vdot(self.xi, self.xi).real))

    def isotropy_defect(self) -> float:
        """``|xi . xi| / |xi|^2``, zero for an admissible probe."""
        return float(abs(np.dot(self.xi, self.xi)) / max(self.magnitude**2, 1e-300))

    def conj(self) -> "ProbeVector":
        return ProbeVector(np.conj(self.xi), -self.k, self.R, self.role)

    @classmethod
    def isotropic(cls, dim: int, R: float, role: str = "first") -> "ProbeVector":
        """``R (e_1 + i e_2)``, an admissible probe in any dimension >= 2."""
        xi = np.zeros(dim, dtype=complex)
        xi[0], xi[1] = R, 1j * R
        return cls(xi, np.zeros(dim), R, role)

    def to_dict(self) -> dict:
        return {
            "xi_real": self.xi.real.tolist(),
            "xi_imag": self.xi.imag.tolist(),
            "k": self.k.tolist(),
            "R": self.R,
            "role": self.role,
        }


def complement_basis(k: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Two orthonormal vectors orthogonal to ``k`` by Gram-Schmidt.

    Canonical basis vectors are tried in index order; those falling in the span
    built so far are skipped.
    """
    basis = [k / np.linalg.norm(k)] if np.any(k) else []
    picked = []
    for axis in range(k.size):
        e = np.zeros(k.size)
        e[axis] = 1.0
        # projected twice: one pass loses orthogonality for near-parallel k
        for _ in range(2):
            for u in basis:
                e = e - np.dot(e, u) * u
        norm = np.linalg.norm(e)
        if norm <= PARALLEL_TOL:
            continue
        e = e / norm
        basis.append(e)
        picked.append(e)
        if len(picked) == 2:
            return picked[0], picked[1]
    raise ConfigError("could not complete an orthogonal basis", "k")


def _leading_sign(k: np.ndarray) -> float:
    nonzero = k[np.abs(k) > 0]
    return float(np.sign(nonzero[0])) if nonzero.size else 1.0


def make_xi_pair(k: Sequence[float], R: float) -> Tuple[ProbeVector, ProbeVector]:
    """Probe pair for the frequency ``k`` at magnitude parameter ``R``.

    ``a`` and ``b`` are swapped for ``k`` with a negative leading entry so that
    the pair for ``-k`` is the complex conjugate of the pair for ``k``.
    """
    k = np.asarray(k, dtype=float)
    if k.size < 3:
        raise ConfigError(f"probe pairs need dimension >= 3, got {k.size}", "k")
    if not np.any(k):
        raise ConfigError("target frequency must be nonzero (use probe_pair)", "k")
    if R < MIN_R:
        raise ConfigError(f"R must be at least {MIN_R}, got {R}", "R")
    unit_a, unit_b = complement_basis(k)
    if _leading_sign(k) < 0:
        unit_a, unit_b = unit_b, unit_a
    scale = np.linalg.norm(k)
    a, b = scale * unit_a, scale * unit_b
    alpha = np.sqrt(R**2 + 1.0 / 16) + 1j * np.sqrt(R**2 - 1.0 / 16)
    spread = alpha * a + np.conj(alpha) * b
    centre = 0.5j * k
    return (
        ProbeVector(centre + spread, k, R, "first"),
        ProbeVector(centre - spread, k, R, "second"),
    )


def probe_pair(k: Sequence[float], R: float) -> Tuple[ProbeVector, ProbeVector]:
    """Like :func:`make_xi_pair`, also covering ``k = 0``.

    For ``k = 0`` the pair is ``xi = R (1 + i) a + R (1 - i) b`` and ``-xi``
    with unit ``a, b``, so ``xi_1 + xi_2 = 0`` and both stay isotropic.
    """
    k = np.asarray(k, dtype=float)
    if np.any(k):
        return make_xi_pair(k, R)
    if k.size < 2:
        raise ConfigError("probes need dimension >= 2", "k")
    if R <= 0:
        raise ConfigError(f"R must be positive, got {R}", "R")
    a, b = complement_basis(k)
    xi = R * (1 + 1j) * a + R * (1 - 1j) * b
    return ProbeVector(xi, k, R, "first"), ProbeVector(-xi, k, R, "second")
