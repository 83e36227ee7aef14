"""Initial-data expressions in one variable ``x``.

Grammar: numbers, ``x``, ``pi``, ``+ - * /``, integer powers (``^`` or
``**``), ``cos``, ``sin``, ``exp`` and parentheses.  Strings are parsed with
:mod:`ast` and only the whitelisted node types are accepted, so nothing is
ever evaluated by Python itself.
"""

from __future__ import annotations

import ast
import math

import numpy as np
from numpy.polynomial import Polynomial

from .mol import PiecewiseConstant

__all__ = ["ExpressionError", "Expression", "parse_expression", "CATALOG", "resolve_initial_data"]

_FUNCS = {"cos": np.cos, "sin": np.sin, "exp": np.exp}
_CONSTS = {"pi": math.pi}


class ExpressionError(ValueError):
    pass


def _check(node: ast.AST, text: str) -> None:
    if isinstance(node, ast.Expression):
        return _check(node.body, text)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"unsupported literal {node.value!r} in {text!r}")
        return
    if isinstance(node, ast.Name):
        if node.id != "x" and node.id not in _CONSTS:
            raise ExpressionError(f"unknown name {node.id!r} in {text!r}")
        return
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        return _check(node.operand, text)
    if isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)):
        if isinstance(node.op, ast.Pow):
            e = node.right
            if not (isinstance(e, ast.Constant) and isinstance(e.value, int) and not isinstance(e.value, bool) and e.value >= 0):
                raise ExpressionError(f"only nonnegative integer powers are supported in {text!r}")
        _check(node.left, text)
        return _check(node.right, text)
    if isinstance(node, ast.Call):
        if not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS) or node.keywords or len(node.args) != 1:
            raise ExpressionError(f"unsupported function call in {text!r}")
        return _check(node.args[0], text)
    raise ExpressionError(f"unsupported syntax in {text!r}")


def _eval(node: ast.AST, x, poly: bool):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return x if node.id == "x" else _CONSTS[node.id]
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, x, poly)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp):
        a, b = _eval(node.left, x, poly), _eval(node.right, x, poly)
        op = node.op
        if isinstance(op, ast.Add):
            return a + b
        if isinstance(op, ast.Sub):
            return a - b
        if isinstance(op, ast.Mult):
            return a * b
        if isinstance(op, ast.Pow):
            return a ** int(node.right.value)
        if poly and isinstance(b, Polynomial):
            raise _NotPolynomial
        return a / b
    if poly:
        raise _NotPolynomial
    return _FUNCS[node.func.id](_eval(node.args[0], x, poly))


class _NotPolynomial(Exception):
    pass


class Expression:
    """Vectorized function of ``x`` parsed from text.

    ``polynomial`` holds the equivalent :class:`numpy.polynomial.Polynomial`
    when the expression uses no transcendental function and no division by
    ``x``; cell averages of such data are then computed exactly.
    """

    def __init__(self, text: str):
        if not isinstance(text, str) or not text.strip():
            raise ExpressionError("empty expression")
        self.text = text.strip()
        try:
            tree = ast.parse(self.text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.text!r}: {exc.msg}") from None
        _check(tree, self.text)
        self._tree = tree.body
        try:
            p = _eval(self._tree, Polynomial([0.0, 1.0]), True)
            self.polynomial = p if isinstance(p, Polynomial) else Polynomial([float(p)])
        except _NotPolynomial:
            self.polynomial = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            out = _eval(self._tree, x, False)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()

    def __repr__(self) -> str:
        return f"Expression({self.text!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Expression) and other.text == self.text

    def __hash__(self) -> int:
        return hash(self.text)


def parse_expression(text: str) -> Expression:
    return Expression(text)


CATALOG = {
    "default_a": "2 + cos(pi*x)",
    "default_b": "1 + 0.5*cos(2*pi*x)",
    "default_c": "0.5*(1 - x*(1 - x))",
    "linear": "x",
    "cosine": "cos(pi*x)",
    "one": "1",
}


def resolve_initial_data(value: str):
    """Catalog name, ``step:b0,b1,...;v0,v1,...`` or an expression string."""
    value = value.strip()
    if value in CATALOG:
        return Expression(CATALOG[value])
    if value.startswith("step:"):
        try:
            breaks, values = value[5:].split(";")
            return PiecewiseConstant(tuple(float(b) for b in breaks.split(",")), tuple(float(v) for v in values.split(",")))
        except ValueError as exc:
            raise ExpressionError(f"bad step function {value!r}: {exc}") from None
    return Expression(value)
