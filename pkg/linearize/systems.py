"""
Linearized forward-backward systems around a time-dependent base solution.

Every order of the expansion solves the same linear pair

    (v^n - v^{n+1})/dt - sigma L v^n + kappa grad v0^n . grad v^n
        = F1^n m^n + S_v^n,                                       n < nt
    (m^n - m^{n-1})/dt - L(sigma m^n) - D(kappa, v0^n) m^n
        - P(kappa, m0^n) v^n = S_m^n,                              n >= 1

with ``v^nt = G1 m^nt + S_T`` and ``m^0 = 0`` in the interior and Dirichlet
data on the boundary. First-order systems have zero sources; higher orders
collect their sources from the lower-order solutions over set partitions of
the multi-index. The discretization is the exact derivative of the one used by
:mod:`forward.solvers`, so the solutions are derivatives of the discrete
solution map.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from itertools import product
from typing import Callable, Dict, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from forward.coefficients import (
    BoundaryData,
    CostModel,
    MFGCoefficients,
    TimeDependentSolution,
    as_space_time,
)
from forward.solvers import fpk_step_matrix
from grid.fields import ScalarField, SpaceTimeField, require_same_grid
from grid.mesh import Grid
from grid.operators import (
    Factorized,
    dirichlet_rows,
    flux_matrix,
    normal_derivative_matrix,
    potential_flux_matrix,
)
from linearize.partitions import (
    Labels,
    labels_of,
    normalize,
    proper_subsets,
    set_partitions,
)
from mfglab.errors import IncompatibleData, StabilityViolation
from mfglab.options import SolverOptions

logger = logging.getLogger(__name__)

MAX_ORDER = 3
METHODS = ("picard", "direct")


@dataclass(frozen=True, eq=False)
class LinearizedSolution:
    """One derivative of the solution map; stationary solves carry spatial fields."""

    order: Labels
    v_lin: Union[ScalarField, SpaceTimeField]
    m_lin: Union[ScalarField, SpaceTimeField]
    iterations: int = 0
    residual: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.v_lin.grid

    def scaled(self, factor: float) -> "LinearizedSolution":
        return LinearizedSolution(
            self.order,
            self.v_lin.with_values(factor * self.v_lin.values),
            self.m_lin.with_values(factor * self.m_lin.values),
            self.iterations,
            abs(factor) * self.residual,
        )


@dataclass(frozen=True, eq=False)
class Sources:
    """Right-hand sides of one linear solve; arrays over all nodes."""

    hjb: np.ndarray
    fpk: np.ndarray
    terminal: np.ndarray

    @classmethod
    def zeros(cls, grid: Grid) -> "Sources":
        st = np.zeros(grid.space_time_shape)
        return cls(st, st.copy(), np.zeros(grid.shape))

    def is_zero(self) -> bool:
        return not (np.any(self.hjb) or np.any(self.fpk) or np.any(self.terminal))


@dataclass(frozen=True, eq=False)
class PerturbationInput:
    """Boundary perturbations ``(g_l, h_l)`` labelled 1..N with amplitudes ``epsilon``."""

    g: Sequence[BoundaryData]
    h: Sequence[BoundaryData]
    epsilon: Sequence[float]

    def __post_init__(self):
        object.__setattr__(self, "g", tuple(self.g))
        object.__setattr__(self, "h", tuple(self.h))
        object.__setattr__(self, "epsilon", tuple(float(e) for e in self.epsilon))
        if not (len(self.g) == len(self.h) == len(self.epsilon)):
            raise ValueError("perturbation inputs need one g, h and epsilon per label")

    @property
    def labels(self) -> Sequence[int]:
        return tuple(range(1, len(self.g) + 1))

    def data(self, label: int):
        return self.g[label - 1], self.h[label - 1]

    def applied_to(self, g: BoundaryData, h: BoundaryData, epsilon=None):
        """Boundary data ``g + sum eps_l g_l`` and ``h + sum eps_l h_l``."""
        eps = self.epsilon if epsilon is None else tuple(epsilon)
        for e, gl, hl in zip(eps, self.g, self.h):
            g = g + gl.scaled(e)
            h = h + hl.scaled(e)
        return g, h


def check_linear_compatibility(
    G1: Optional[ScalarField], g: BoundaryData, h: BoundaryData, tol: float = 1e-10
):
    """Corner conditions of linearized data: ``h(0) = 0`` and ``g(T) = G1 h(T)``."""
    grid = g.grid
    bidx = grid.boundary_indices
    scale = 1.0 + float(np.max(np.abs(h.values)))
    initial_gap = float(np.max(np.abs(h.at(0).ravel()[bidx])))
    if initial_gap > tol * scale:
        raise IncompatibleData(
            f"linearized density data do not vanish at t = 0 (gap {initial_gap:.3e})"
        )
    G1_values = np.zeros(grid.shape) if G1 is None else G1.values
    expected = (G1_values * h.at(grid.nt)).ravel()[bidx]
    terminal_gap = float(np.max(np.abs(g.at(grid.nt).ravel()[bidx] - expected)))
    if terminal_gap > tol * scale:
        raise IncompatibleData(
            f"linearized value data differ from G1 h(T) by {terminal_gap:.3e}"
        )


def _level_gradients(grid: Grid, values: np.ndarray):
    flat = values.reshape(grid.nt + 1, -1).T
    return [(g @ flat).T.reshape(grid.space_time_shape) for g in grid.gradient_matrices]


class LinearizedSystem:
    """Linear operators of the expansion around ``base``.

    ``cost`` is re-expanded around the base density, so ``F(k)`` and ``G(k)``
    are the derivatives of the costs at the base.
    """

    def __init__(
        self,
        base: TimeDependentSolution,
        coeffs: MFGCoefficients,
        cost: CostModel,
        options: Optional[SolverOptions] = None,
    ):
        self.grid = require_same_grid(base.v, coeffs, cost)
        self.base = base
        self.coeffs = coeffs
        self.cost = cost.recentred(base.m)
        self.options = options if options is not None else SolverOptions.from_settings()
        F1 = self.cost.F(1)
        G1 = self.cost.G(1)
        self.F1 = as_space_time(self.grid, 0.0 if F1 is None else F1).values
        self.G1 = np.zeros(self.grid.shape) if G1 is None else G1.values

    @classmethod
    def first_order(cls, base, coeffs, F1=None, G1=None, options=None):
        """System for given first derivatives ``F1`` and ``G1`` only."""
        grid = base.grid
        cost = CostModel(
            base.m,
            () if F1 is None else (as_space_time(grid, F1),),
            () if G1 is None else (G1,),
        )
        return cls(base, coeffs, cost, options)

    def without_terminal_coupling(self) -> "LinearizedSystem":
        """The same system with ``G1 = 0``, so ``v^nt`` is the terminal source."""
        cost = self.cost.with_coefficients(G_coeffs=())
        return LinearizedSystem(self.base, self.coeffs, cost, self.options)

    # Per-level blocks

    @cached_property
    def _eye(self) -> sp.csr_matrix:
        return sp.identity(self.grid.size, format="csr")

    @cached_property
    def hjb_matrices(self):
        grid = self.grid
        grads = grid.gradient_matrices
        v0 = self.base.v.values
        mats = []
        for n in range(grid.nt):
            sigma = self.coeffs.sigma_at(n).ravel()
            kappa = self.coeffs.kappa_at(n).ravel()
            gv = [g @ v0[n].ravel() for g in grads]
            mat = (
                self._eye / grid.dt
                - sp.diags(sigma) @ grid.laplacian_matrix
                + sum(sp.diags(kappa * c) @ g for c, g in zip(gv, grads))
            )
            mats.append(dirichlet_rows(grid, mat))
        return mats

    @cached_property
    def fpk_matrices(self):
        grid = self.grid
        mats = [None]
        for n in range(1, grid.nt + 1):
            mats.append(
                fpk_step_matrix(
                    grid,
                    self.coeffs.sigma_at(n),
                    self.coeffs.kappa_at(n),
                    self.base.v.values[n],
                )
            )
        return mats

    @cached_property
    def coupling_matrices(self):
        """``P(kappa^n, m0^n)``: the density equation's response to ``v``."""
        grid = self.grid
        mats = [None]
        for n in range(1, grid.nt + 1):
            mats.append(
                potential_flux_matrix(
                    grid, self.coeffs.kappa_at(n), self.base.m.values[n]
                )
            )
        return mats

    @cached_property
    def _hjb_solvers(self):
        return [Factorized(mat) for mat in self.hjb_matrices]

    @cached_property
    def _fpk_solvers(self):
        return [None] + [Factorized(mat) for mat in self.fpk_matrices[1:]]

    # Sweeps

    def backward(self, m: np.ndarray, sources: Sources, g: BoundaryData) -> np.ndarray:
        grid = self.grid
        interior = grid.interior_mask
        v = np.zeros(grid.space_time_shape, dtype=np.result_type(m, float))
        nt = grid.nt
        v[nt] = np.where(interior, self.G1 * m[nt] + sources.terminal, g.at(nt))
        for n in range(nt - 1, -1, -1):
            rhs = np.where(
                interior,
                v[n + 1] / grid.dt + self.F1[n] * m[n] + sources.hjb[n],
                g.at(n),
            )
            v[n] = self._hjb_solvers[n].solve(rhs.ravel()).reshape(grid.shape)
        return v

    def forward(self, v: np.ndarray, sources: Sources, h: BoundaryData) -> np.ndarray:
        grid = self.grid
        interior = grid.interior_mask
        m = np.zeros(grid.space_time_shape, dtype=np.result_type(v, float))
        for n in range(1, grid.nt + 1):
            response = (self.coupling_matrices[n] @ v[n].ravel()).reshape(grid.shape)
            rhs = np.where(
                interior, m[n - 1] / grid.dt + response + sources.fpk[n], h.at(n)
            )
            m[n] = self._fpk_solvers[n].solve(rhs.ravel()).reshape(grid.shape)
        return m

    def picard(self, sources: Sources, g: BoundaryData, h: BoundaryData):
        """Damped fixed-point iteration between the backward and forward sweeps."""
        options = self.options
        grid = self.grid
        v = np.zeros(grid.space_time_shape)
        m = np.zeros(grid.space_time_shape)
        update = np.inf
        for iteration in range(1, options.max_iter + 1):
            v_new = self.backward(m, sources, g)
            m_new = self.forward(v_new, sources, h)
            update = max(
                float(np.max(np.abs(v_new - v))), float(np.max(np.abs(m_new - m)))
            )
            scale = max(1.0, float(np.max(np.abs(v_new))), float(np.max(np.abs(m_new))))
            logger.debug(f"Linearized sweep {iteration}: update {update:.3e}")
            if not np.isfinite(update) or update > options.blowup_bound:
                logger.error(f"Linearized iteration diverged at sweep {iteration}")
                raise StabilityViolation(
                    f"linearized Picard iteration diverged (update {update:.3e})"
                )
            v = v_new
            if update < options.tol * scale:
                return v, m_new, iteration
            m = options.theta * m_new + (1 - options.theta) * m
        logger.error(f"Linearized iteration hit {options.max_iter} sweeps")
        raise StabilityViolation(
            f"linearized Picard iteration did not contract in {options.max_iter} "
            f"sweeps (last update {update:.3e})"
        )

    # Space-time assembly

    @cached_property
    def space_time_matrix(self) -> sp.csr_matrix:
        """All equations and boundary rows over ``[v^0..v^nt, m^0..m^nt]``."""
        grid = self.grid
        nt = grid.nt
        interior = grid.interior_projector
        blocks = [[None] * (2 * nt + 2) for _ in range(2 * nt + 2)]
        off = nt + 1
        for n in range(nt):
            blocks[n][n] = self.hjb_matrices[n]
            blocks[n][n + 1] = -interior / grid.dt
            blocks[n][off + n] = -interior @ sp.diags(self.F1[n].ravel())
        blocks[nt][nt] = self._eye
        blocks[nt][off + nt] = -interior @ sp.diags(self.G1.ravel())
        blocks[off][off] = self._eye
        for n in range(1, nt + 1):
            blocks[off + n][off + n] = self.fpk_matrices[n]
            blocks[off + n][off + n - 1] = -interior / grid.dt
            blocks[off + n][n] = -interior @ self.coupling_matrices[n]
        return sp.bmat(blocks, format="csr")

    @cached_property
    def factorized(self) -> Factorized:
        size = self.space_time_matrix.shape[0]
        logger.debug(f"Factorizing space-time system with {size} unknowns")
        return Factorized(self.space_time_matrix)

    def space_time_rhs(self, sources: Sources, g: BoundaryData, h: BoundaryData):
        grid = self.grid
        nt = grid.nt
        interior = grid.interior_mask
        v_rows = np.where(interior, sources.hjb, g.values)
        v_rows[nt] = np.where(interior, sources.terminal, g.at(nt))
        m_rows = np.where(interior, sources.fpk, h.values)
        m_rows[0] = 0.0
        return np.concatenate([v_rows.ravel(), m_rows.ravel()])

    def split(self, x: np.ndarray):
        half = x.size // 2
        shape = self.grid.space_time_shape
        return x[:half].reshape(shape), x[half:].reshape(shape)

    def stack(self, v: np.ndarray, m: np.ndarray) -> np.ndarray:
        return np.concatenate([v.ravel(), m.ravel()])

    def direct(self, sources: Sources, g: BoundaryData, h: BoundaryData):
        x = self.factorized.solve(self.space_time_rhs(sources, g, h))
        return self.split(x)

    def residual(self, v, m, sources: Sources, g: BoundaryData, h: BoundaryData) -> float:
        rhs = self.space_time_rhs(sources, g, h)
        res = self.space_time_matrix @ self.stack(v, m) - rhs
        return float(np.max(np.abs(res))) if res.size else 0.0

    @cached_property
    def cauchy_operator(self) -> sp.csr_matrix:
        """Space-time rows stacked on the outward derivatives of every level.

        Interior rows are the equations, boundary rows pin the Dirichlet
        values; the extra rows read the Neumann traces of ``v`` and ``m``.
        """
        nd = normal_derivative_matrix(self.grid)
        neumann = sp.block_diag([nd] * (2 * self.grid.nt + 2), format="csr")
        return sp.vstack([self.space_time_matrix, neumann], format="csr")

    def solve(
        self,
        sources: Optional[Sources] = None,
        g: Optional[BoundaryData] = None,
        h: Optional[BoundaryData] = None,
        method: str = "picard",
        order: Labels = (1,),
    ) -> LinearizedSolution:
        if method not in METHODS:
            raise ValueError(f"unknown linear solve method {method!r}")
        grid = self.grid
        sources = Sources.zeros(grid) if sources is None else sources
        g = BoundaryData.zero(grid) if g is None else g
        h = BoundaryData.zero(grid) if h is None else h
        if method == "picard":
            v, m, iterations = self.picard(sources, g, h)
        else:
            (v, m), iterations = self.direct(sources, g, h), 1
        res = self.residual(v, m, sources, g, h)
        logger.info(
            f"Linearized order {order} solved by {method} "
            f"({iterations} sweeps, residual {res:.3e})"
        )
        return LinearizedSolution(
            normalize(order),
            SpaceTimeField(grid, v),
            SpaceTimeField(grid, m),
            iterations,
            res,
        )


def mixed_sources(
    system: LinearizedSystem,
    labels: Labels,
    lookup: Callable[[Labels], LinearizedSolution],
) -> Sources:
    """Sources of the order-``len(labels)`` system from lower-order solutions.

    ``lookup`` returns the solution for a sorted label tuple; only proper
    sub-multi-indices are requested.
    """
    grid = system.grid
    nt = grid.nt
    positions = tuple(range(len(labels)))
    kappa = system.coeffs.kappa.values
    cost = system.cost
    sources = Sources.zeros(grid)
    hjb, fpk, terminal = sources.hjb, sources.fpk, sources.terminal

    grads: Dict[Labels, list] = {}

    def sub(block) -> LinearizedSolution:
        return lookup(labels_of(labels, block))

    def grad(block):
        key = labels_of(labels, block)
        if key not in grads:
            grads[key] = _level_gradients(grid, lookup(key).v_lin.values)
        return grads[key]

    for part_a, part_b in proper_subsets(positions):
        ga, gb = grad(part_a), grad(part_b)
        hjb -= 0.5 * kappa * sum(a * b for a, b in zip(ga, gb))
        va, mb = sub(part_a).v_lin.values, sub(part_b).m_lin.values
        for n in range(1, nt + 1):
            flux = flux_matrix(grid, system.coeffs.kappa_at(n), va[n])
            fpk[n] += (flux @ mb[n].ravel()).reshape(grid.shape)

    for partition in set_partitions(positions):
        k = len(partition)
        if k < 2:
            continue
        joint = np.ones(grid.space_time_shape)
        for block in partition:
            joint = joint * sub(block).m_lin.values
        Fk, Gk = cost.F(k), cost.G(k)
        if Fk is not None:
            hjb += as_space_time(grid, Fk).values * joint
        if Gk is not None:
            terminal += Gk.values * joint[nt]
    return sources


class LinearizedExpansion:
    """Memoized mixed derivatives of the solution map along ``perturbations``."""

    def __init__(
        self,
        system: LinearizedSystem,
        perturbations: PerturbationInput,
        method: str = "picard",
    ):
        self.system = system
        self.perturbations = perturbations
        self.method = method
        self._solutions: Dict[Labels, LinearizedSolution] = {}

    def __call__(self, labels: Sequence[int]) -> LinearizedSolution:
        return self.solution(labels)

    def solution(self, labels: Sequence[int]) -> LinearizedSolution:
        labels = normalize(labels)
        if not labels or len(labels) > MAX_ORDER:
            raise ValueError(f"orders 1..{MAX_ORDER} are supported, got {labels}")
        unknown = set(labels) - set(self.perturbations.labels)
        if unknown:
            raise ValueError(f"no perturbation input for labels {sorted(unknown)}")
        if labels not in self._solutions:
            self._solutions[labels] = self._solve(labels)
        return self._solutions[labels]

    def _solve(self, labels: Labels) -> LinearizedSolution:
        if len(labels) == 1:
            g, h = self.perturbations.data(labels[0])
            return self.system.solve(g=g, h=h, method=self.method, order=labels)
        sources = mixed_sources(self.system, labels, self.solution)
        return self.system.solve(sources, method=self.method, order=labels)

    def taylor(self, epsilon: Optional[Sequence[float]] = None, order: int = 2):
        """Truncated expansion ``sum_k (1/k!) sum eps^alpha d^alpha S`` of ``(v, m)``."""
        eps = self.perturbations.epsilon if epsilon is None else tuple(epsilon)
        grid = self.system.grid
        v = np.zeros(grid.space_time_shape)
        m = np.zeros(grid.space_time_shape)
        labels = self.perturbations.labels
        factorials = {1: 1.0, 2: 2.0, 3: 6.0}
        for k in range(1, order + 1):
            for multi in product(labels, repeat=k):
                weight = np.prod([eps[label - 1] for label in multi]) / factorials[k]
                if weight == 0:
                    continue
                sol = self.solution(multi)
                v = v + weight * sol.v_lin.values
                m = m + weight * sol.m_lin.values
        return v, m


def solve_first_order(
    base: TimeDependentSolution,
    coeffs: MFGCoefficients,
    F1=None,
    G1: Optional[ScalarField] = None,
    g: Optional[BoundaryData] = None,
    h: Optional[BoundaryData] = None,
    options: Optional[SolverOptions] = None,
    method: str = "picard",
) -> LinearizedSolution:
    """First-order linearized pair for boundary data ``(g, h)``."""
    system = LinearizedSystem.first_order(base, coeffs, F1, G1, options)
    return system.solve(g=g, h=h, method=method, order=(1,))


def solve_second_order(
    base: TimeDependentSolution,
    coeffs: MFGCoefficients,
    cost: CostModel,
    first: LinearizedSolution,
    second: LinearizedSolution,
    options: Optional[SolverOptions] = None,
    method: str = "picard",
) -> LinearizedSolution:
    """Mixed second-order pair from two first-order solutions on the same base.

    ``cost`` supplies ``F1, F2, G1, G2``; the boundary data of the mixed
    system are zero.
    """
    require_same_grid(first.v_lin, second.v_lin, base.v)
    system = LinearizedSystem(base, coeffs, cost, options)
    known: Mapping[Labels, LinearizedSolution] = {(1,): first, (2,): second}
    sources = mixed_sources(system, (1, 2), lambda key: known[key])
    return system.solve(sources, method=method, order=(1, 2))


def solve_order(
    system: LinearizedSystem,
    perturbations: PerturbationInput,
    labels: Sequence[int],
    method: str = "picard",
) -> LinearizedSolution:
    """Any mixed derivative up to order three, lower orders solved on the way."""
    return LinearizedExpansion(system, perturbations, method).solution(labels)
