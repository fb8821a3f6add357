"""Restricted arithmetic expressions evaluated over numpy arrays.

Only numeric literals, the caller's variable names, ``+ - * / **``, unary
minus and a short whitelist of functions are accepted; anything else
raises :class:`ExpressionError` at parse time.
"""

from __future__ import annotations

import ast
from typing import Callable, Iterable

import numpy as np

_FUNCS: dict[str, Callable] = {
    "ln": np.log,
    "log": np.log,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
    "floor": np.floor,
    "minimum": np.minimum,
    "maximum": np.maximum,
    "where": np.where,
}
_CONSTS = {"pi": np.pi, "e": np.e}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
    ast.Mod: np.mod,
}
_CMPOPS = {
    ast.Lt: np.less,
    ast.LtE: np.less_equal,
    ast.Gt: np.greater,
    ast.GtE: np.greater_equal,
    ast.Eq: np.equal,
    ast.NotEq: np.not_equal,
}


class ExpressionError(ValueError):
    pass


class Expression:
    """A parsed expression over a fixed set of variable names.

    >>> Expression("1 + 1/n", ["n"])(n=np.array([1.0, 2.0]))
    array([2. , 1.5])
    """

    def __init__(self, source: str, variables: Iterable[str]):
        self.source = source
        self.variables = frozenset(variables)
        try:
            tree = ast.parse(source.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node: ast.AST) -> None:
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExpressionError(f"non-numeric literal in {self.source!r}")
        elif isinstance(node, ast.Name):
            if node.id not in self.variables and node.id not in _CONSTS:
                raise ExpressionError(
                    f"unknown name {node.id!r} in {self.source!r}; "
                    f"allowed: {sorted(self.variables | set(_CONSTS))}"
                )
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError(f"operator not allowed in {self.source!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError(f"operator not allowed in {self.source!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Compare):
            if any(type(op) not in _CMPOPS for op in node.ops) or len(node.ops) != 1:
                raise ExpressionError(f"only single comparisons allowed in {self.source!r}")
            self._check(node.left)
            self._check(node.comparators[0])
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ExpressionError(f"function not allowed in {self.source!r}")
            if node.keywords:
                raise ExpressionError(f"keyword arguments not allowed in {self.source!r}")
            for arg in node.args:
                self._check(arg)
        else:
            raise ExpressionError(f"construct {type(node).__name__} not allowed in {self.source!r}")

    def __call__(self, **values) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.asarray(self._eval(self._tree, values), dtype=float)

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in env:
                return np.asarray(env[node.id], dtype=float)
            return _CONSTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Compare):
            op = _CMPOPS[type(node.ops[0])]
            return op(self._eval(node.left, env), self._eval(node.comparators[0], env)).astype(float)
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](*(self._eval(a, env) for a in node.args))
        raise ExpressionError(f"cannot evaluate {ast.dump(node)}")

    def __repr__(self) -> str:
        return f"Expression({self.source!r})"
