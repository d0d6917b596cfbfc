"""
Arithmetic expressions over ``x1, x2, x3`` and ``t`` for run configurations.

Expressions are parsed with :mod:`ast` and walked node by node against a
whitelist; nothing is handed to ``eval``. Evaluation is vectorized with numpy,
so an expression turns directly into a field on a grid.
"""

import ast
import logging
import operator
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Mapping, Optional

import numpy as np

from forward.coefficients import BoundaryData
from grid.fields import ScalarField, SpaceTimeField
from grid.mesh import Grid
from mfglab.errors import ConfigError

logger = logging.getLogger(__name__)

CONSTANTS: Mapping[str, float] = {"pi": np.pi, "e": np.e}

FUNCTIONS: Mapping[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "abs": np.abs,
}

VARIABLES = ("x1", "x2", "x3", "t")

BINARY = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}

UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _offset(node: ast.AST) -> Optional[int]:
    return getattr(node, "col_offset", None)


@dataclass(frozen=True)
class Expression:
    """A parsed expression together with the variables it reads."""

    source: str
    tree: ast.Expression = field(repr=False, compare=False)
    variables: FrozenSet[str] = frozenset()
    path: Optional[str] = None

    @classmethod
    def parse(cls, source, path: Optional[str] = None) -> "Expression":
        if isinstance(source, (int, float)) and not isinstance(source, bool):
            source = repr(float(source))
        if not isinstance(source, str) or not source.strip():
            raise ConfigError("expected a non-empty expression string", path)
        try:
            tree = ast.parse(source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ConfigError(
                f"invalid expression {source!r}: {exc.msg} at offset {exc.offset}", path
            ) from exc
        variables = frozenset(_validate(tree.body, source, path))
        return cls(source.strip(), tree, variables, path)

    @property
    def uses_time(self) -> bool:
        return "t" in self.variables

    @property
    def dimension(self) -> int:
        """Smallest spatial dimension the expression can be evaluated in."""
        return max((int(v[1]) for v in self.variables if v != "t"), default=0)

    def evaluate(self, namespace: Mapping[str, np.ndarray]):
        with np.errstate(all="ignore"):
            return _evaluate(self.tree.body, namespace)

    def _namespace(self, coords, t=None) -> Dict[str, np.ndarray]:
        if self.dimension > len(coords):
            raise ConfigError(
                f"expression {self.source!r} reads x{self.dimension} "
                f"on a {len(coords)}-dimensional grid",
                self.path,
            )
        names = {f"x{axis + 1}": c for axis, c in enumerate(coords)}
        if t is not None:
            names["t"] = t
        return names

    def _checked(self, values, shape) -> np.ndarray:
        values = np.broadcast_to(np.asarray(values, dtype=float), shape)
        if not np.all(np.isfinite(values)):
            raise ConfigError(
                f"expression {self.source!r} is not finite on the grid", self.path
            )
        return values

    def spatial(self, grid: Grid) -> ScalarField:
        if self.uses_time:
            raise ConfigError(
                f"expression {self.source!r} must not depend on t", self.path
            )
        values = self.evaluate(self._namespace(grid.coords))
        return ScalarField(grid, self._checked(values, grid.shape))

    def space_time(self, grid: Grid) -> SpaceTimeField:
        if not grid.nt:
            raise ConfigError(
                f"expression {self.source!r} needs a time-dependent grid", self.path
            )
        t = grid.times.reshape((-1,) + (1,) * grid.dim)
        coords = tuple(c[np.newaxis] for c in grid.coords)
        values = self.evaluate(self._namespace(coords, t))
        return SpaceTimeField(grid, self._checked(values, grid.space_time_shape))

    def boundary_data(self, grid: Grid) -> BoundaryData:
        return BoundaryData.from_field(self.space_time(grid))


def _validate(node: ast.AST, source: str, path: Optional[str]) -> set:
    """Names read by ``node``; raises on anything outside the whitelist."""

    def fail(what: str):
        raise ConfigError(
            f"{what} not allowed in {source!r} (offset {_offset(node)})", path
        )

    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            fail(f"constant {node.value!r}")
        return set()
    if isinstance(node, ast.Name):
        if node.id in VARIABLES:
            return {node.id}
        if node.id in CONSTANTS:
            return set()
        fail(f"name {node.id!r}")
    if isinstance(node, ast.BinOp):
        if type(node.op) not in BINARY:
            fail(f"operator {type(node.op).__name__}")
        return _validate(node.left, source, path) | _validate(node.right, source, path)
    if isinstance(node, ast.UnaryOp):
        if type(node.op) not in UNARY:
            fail(f"operator {type(node.op).__name__}")
        return _validate(node.operand, source, path)
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
            fail("call")
        if node.keywords or len(node.args) != 1:
            fail(f"call of {node.func.id} with other than one argument")
        return _validate(node.args[0], source, path)
    fail(type(node).__name__)


def _evaluate(node: ast.AST, namespace: Mapping[str, np.ndarray]):
    if isinstance(node, ast.Constant):
        return np.float64(node.value)
    if isinstance(node, ast.Name):
        if node.id in CONSTANTS:
            return np.float64(CONSTANTS[node.id])
        return namespace[node.id]
    if isinstance(node, ast.BinOp):
        left = _evaluate(node.left, namespace)
        right = _evaluate(node.right, namespace)
        return BINARY[type(node.op)](left, right)
    if isinstance(node, ast.UnaryOp):
        return UNARY[type(node.op)](_evaluate(node.operand, namespace))
    return FUNCTIONS[node.func.id](_evaluate(node.args[0], namespace))


def parse_expression(source, path: Optional[str] = None) -> Expression:
    return Expression.parse(source, path)
