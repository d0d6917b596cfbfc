"""
Remainder of an exponentially growing probe.

The remainder solves ``Lap w + 2 xi . grad w + H (1 + w) = 0`` in the box.
``Lap + 2 xi . grad`` is inverted by its finite-difference symbol on a torus of
doubled side, antiperiodic along the axis where ``Re xi`` is largest so that
the symbol stays away from zero; ``H`` is extended to the torus with a
``cos^2`` taper. The fixed point ``w = -L^{-1}(H (1 + w))`` is iterated until
the update stalls.

A ``twist`` ``k`` replaces the stencil by its adjoint under the weight
``exp(i k . x)``. Solutions of the twisted equation pair with solutions of
the untwisted one through an exact summation by parts, which is what the
boundary pairing of probing records relies on.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from cgo.equations import ScalarReducedEquation
from cgo.probes import ProbeVector
from grid.fields import ScalarField
from grid.mesh import Grid
from mfglab.errors import GridError, NonContraction
from mfglab.options import ProbeOptions

logger = logging.getLogger(__name__)

STEPS = (1, -1)


def stencil_coefficients(
    h: float, xi: complex, twist: Optional[float] = None
) -> Dict[int, complex]:
    """Neighbour coefficients of one axis, keyed by the step ``+1`` / ``-1``.

    Untwisted: ``1/h^2 + s xi/h``. Twisted by ``k``:
    ``exp(i s k h) (1/h^2 - s xi/h)``.
    """
    if twist is None:
        return {s: 1 / h**2 + s * xi / h for s in STEPS}
    return {s: np.exp(1j * s * twist * h) * (1 / h**2 - s * xi / h) for s in STEPS}


def _taper_axis(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Source indices and taper weights of one axis of the doubled torus."""
    size = 2 * n
    width = n / 2
    src = np.empty(size, dtype=int)
    weight = np.ones(size)
    for i in range(n, size):
        above, below = i - (n - 1), size - i
        src[i], dist = (n - 1, above) if above <= below else (0, below)
        weight[i] = np.cos(0.5 * np.pi * dist / width) ** 2 if dist < width else 0.0
    src[:n] = np.arange(n)
    return src, weight


@dataclass(frozen=True, eq=False)
class Torus:
    """Doubled periodic box carrying the symbol of ``Lap + 2 xi . grad``."""

    grid: Grid
    xi: np.ndarray
    twist: Optional[np.ndarray] = None

    def coefficients(self, axis: int) -> Dict[int, complex]:
        twist = None if self.twist is None else float(self.twist[axis])
        return stencil_coefficients(self.grid.spacing[axis], self.xi[axis], twist)

    @cached_property
    def constant_part(self) -> complex:
        """The stencil applied to the constant one; zero without a twist."""
        total = 0.0
        for axis, h in enumerate(self.grid.spacing):
            c = self.coefficients(axis)
            total += c[1] + c[-1] - 2 / h**2
        return complex(total)

    @cached_property
    def shape(self) -> Tuple[int, ...]:
        return tuple(2 * n for n in self.grid.shape)

    @cached_property
    def shifted_axis(self) -> int:
        return int(np.argmax(np.abs(self.xi.real)))

    @cached_property
    def shift(self) -> np.ndarray:
        """Half-period frequency shift making the shifted axis antiperiodic."""
        eta = np.zeros(self.grid.dim)
        axis = self.shifted_axis
        eta[axis] = np.pi / (self.shape[axis] * self.grid.spacing[axis])
        return eta

    @cached_property
    def phase(self) -> np.ndarray:
        """``exp(i eta . x)`` at the torus nodes."""
        axis = self.shifted_axis
        n, h = self.shape[axis], self.grid.spacing[axis]
        line = np.exp(1j * self.shift[axis] * h * np.arange(n))
        shape = [1] * self.grid.dim
        shape[axis] = n
        return np.broadcast_to(line.reshape(shape), self.shape)

    @cached_property
    def symbol(self) -> np.ndarray:
        total = np.zeros(self.shape, dtype=complex)
        for axis, (n, h) in enumerate(zip(self.shape, self.grid.spacing)):
            mu = 2 * np.pi * np.fft.fftfreq(n, d=h) + self.shift[axis]
            c = self.coefficients(axis)
            part = c[1] * np.exp(1j * mu * h) + c[-1] * np.exp(-1j * mu * h) - 2 / h**2
            shape = [1] * self.grid.dim
            shape[axis] = n
            total = total + part.reshape(shape)
        return total

    def floored(self, floor: float) -> np.ndarray:
        """Mask of symbol entries below ``floor * (1 + |xi|^2)``."""
        scale = 1.0 + float(np.vdot(self.xi, self.xi).real)
        return np.abs(self.symbol) < floor * scale

    @cached_property
    def taper(self):
        picks, weights = zip(*(_taper_axis(n) for n in self.grid.shape))
        weight = np.ones(())
        for w in weights:
            weight = np.multiply.outer(weight, w)
        return np.ix_(*picks), weight

    def extend(self, values: np.ndarray) -> np.ndarray:
        index, weight = self.taper
        return values[index] * weight

    def restrict(self, values: np.ndarray) -> np.ndarray:
        return values[tuple(slice(0, n) for n in self.grid.shape)]

    def inverse(self, rhs: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """``L^{-1} rhs`` with the masked symbol entries dropped."""
        spectrum = np.fft.fftn(np.conj(self.phase) * rhs)
        symbol = np.where(mask, 1.0, self.symbol)
        spectrum = np.where(mask, 0.0, spectrum / symbol)
        return self.phase * np.fft.ifftn(spectrum)

    def apply_in_box(self, values: np.ndarray) -> np.ndarray:
        """The stencil at the interior nodes of the box, zero elsewhere."""
        grid = self.grid
        out = np.zeros(grid.shape, dtype=complex)
        inner = tuple(slice(1, -1) for _ in grid.shape)
        for axis, h in enumerate(grid.spacing):
            c = self.coefficients(axis)
            for step in STEPS:
                index = list(inner)
                index[axis] = slice(1 + step, grid.shape[axis] - 1 + step)
                out[inner] += c[step] * values[tuple(index)]
            out[inner] -= (2 / h**2) * values[inner]
        return out

    def operator_matrix(self) -> sp.csr_matrix:
        """Sparse stencil on the torus with its antiperiodic wrap."""
        size = int(np.prod(self.shape))
        nodes = np.arange(size).reshape(self.shape)
        total = sp.csr_matrix((size, size), dtype=complex)
        for axis, h in enumerate(self.grid.spacing):
            sign = -1.0 if axis == self.shifted_axis else 1.0
            c = self.coefficients(axis)
            for step in STEPS:
                neighbour = np.roll(nodes, -step, axis=axis)
                wrapped = np.zeros(self.shape, dtype=bool)
                edge = [slice(None)] * self.grid.dim
                edge[axis] = -1 if step == 1 else 0
                wrapped[tuple(edge)] = True
                coef = c[step] * np.where(wrapped, sign, 1.0).ravel()
                total = total + sp.csr_matrix(
                    (coef, (nodes.ravel(), neighbour.ravel())), shape=(size, size)
                )
            total = total - sp.identity(size, format="csr") * (2 / h**2)
        return total.tocsr()


@dataclass(frozen=True, eq=False)
class RemainderSolution:
    omega: ScalarField
    iterations: int
    residual: float
    floored_modes: int

    @property
    def norm(self) -> float:
        grid = self.omega.grid
        return float(np.sqrt(np.sum(grid.weights * np.abs(self.omega.values) ** 2)))


def _equation_residual(torus: Torus, H: np.ndarray, omega: np.ndarray) -> float:
    """Sup of ``L w + H (1 + w) + c`` over interior nodes, relative to the forcing.

    ``c`` is :attr:`Torus.constant_part`.
    """
    grid = torus.grid
    forcing = H + torus.constant_part
    res = torus.apply_in_box(omega) + H * omega + forcing
    scale = max(1.0, float(np.max(np.abs(forcing))))
    return float(np.max(np.abs(res[grid.interior_mask]))) / scale


def iterate_remainder(
    eq: ScalarReducedEquation,
    probe: ProbeVector,
    options: Optional[ProbeOptions] = None,
    twist: Optional[np.ndarray] = None,
) -> RemainderSolution:
    """Fixed-point iteration for the remainder of ``probe`` on ``eq``.

    With a ``twist`` the stencil is the weighted adjoint one and the forcing
    picks up its constant part.
    """
    options = options if options is not None else ProbeOptions.from_settings()
    grid = eq.grid
    if probe.dim != grid.dim:
        raise GridError(f"probe of dimension {probe.dim} on a {grid.dim}D grid")
    if twist is not None and len(twist) != grid.dim:
        raise GridError(f"twist of dimension {len(twist)} on a {grid.dim}D grid")
    H = eq.H.values
    torus = Torus(grid, probe.xi, None if twist is None else np.asarray(twist, float))
    forcing = H + torus.constant_part
    if not np.any(forcing):
        zero = ScalarField(grid, np.zeros(grid.shape, dtype=complex))
        return RemainderSolution(zero, 0, 0.0, 0)
    mask = torus.floored(options.symbol_floor)
    floored = int(np.count_nonzero(mask))
    if floored:
        logger.warning(f"{floored} torus modes fall below the symbol floor")
    H_torus = torus.extend(H)
    forcing_torus = torus.extend(forcing)
    omega = np.zeros(torus.shape, dtype=complex)
    previous = np.inf
    growing = 0
    for iteration in range(1, options.max_iter + 1):
        new = -torus.inverse(forcing_torus + H_torus * omega, mask)
        update = float(np.max(np.abs(new - omega)))
        omega = new
        logger.debug(f"Remainder iteration {iteration}: update {update:.3e}")
        if not np.isfinite(update):
            break
        if update <= options.tol * max(1.0, float(np.max(np.abs(omega)))):
            values = torus.restrict(omega)
            residual = _equation_residual(torus, H, values)
            logger.info(
                f"Remainder converged in {iteration} iterations "
                f"(|xi| {probe.magnitude:.3e}, residual {residual:.3e})"
            )
            return RemainderSolution(ScalarField(grid, values), iteration, residual, floored)
        growing = growing + 1 if update >= previous else 0
        if growing >= 2:
            break
        previous = update
    logger.error(f"Remainder iteration diverges at |xi| {probe.magnitude:.3e}")
    raise NonContraction(
        f"remainder iteration does not contract at R = {probe.R} "
        f"(|xi| = {probe.magnitude:.3e}); try a larger R"
    )


def solve_remainder(
    eq: ScalarReducedEquation,
    probe: ProbeVector,
    options: Optional[ProbeOptions] = None,
) -> ScalarField:
    """Complex remainder ``w`` on the box nodes."""
    return iterate_remainder(eq, probe, options).omega


def remainder_oracle(
    eq: ScalarReducedEquation, probe: ProbeVector, twist: Optional[np.ndarray] = None
) -> ScalarField:
    """Direct sparse solve of ``(L + H) w = -(H + c)`` on the same torus."""
    grid = eq.grid
    torus = Torus(grid, probe.xi, None if twist is None else np.asarray(twist, float))
    H_torus = torus.extend(eq.H.values).ravel()
    forcing = torus.extend(eq.H.values + torus.constant_part).ravel()
    matrix = torus.operator_matrix() + sp.diags(H_torus)
    omega = spsolve(matrix.tocsc(), -forcing.astype(complex)).reshape(torus.shape)
    return ScalarField(grid, torus.restrict(omega))
