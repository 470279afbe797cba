"""TOML configuration and safe compilation of forcing expressions.

Expressions such as ``"1 + x"`` or ``"1/(1+u**2)"`` are parsed with ``ast``
and only arithmetic, numeric literals, one free variable and a short list of
elementwise functions are accepted.
"""
from __future__ import annotations

import ast
import math
import sys
from typing import Callable

import numpy as np

if sys.version_info >= (3, 11):  # pragma: no cover
    import tomllib
else:
    import tomli as tomllib

from .geometry import PeriodicProfile


class ConfigError(ValueError):
    pass


FUNCTIONS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "sinh": np.sinh, "cosh": np.cosh,
    "atan": np.arctan,
}
CONSTANTS = {"pi": math.pi, "e": math.e}
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_UNARY = (ast.UAdd, ast.USub)


def _check(node, variable: str):
    if isinstance(node, ast.Expression):
        return _check(node.body, variable)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ConfigError(f"literal {node.value!r} is not a number")
        return
    if isinstance(node, ast.Name):
        if node.id != variable and node.id not in CONSTANTS:
            raise ConfigError(f"unknown name {node.id!r} (the variable is {variable!r})")
        return
    if isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
        _check(node.left, variable)
        _check(node.right, variable)
        return
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, _UNARY):
        _check(node.operand, variable)
        return
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
            raise ConfigError("only calls to " + ", ".join(sorted(FUNCTIONS)) + " are allowed")
        if node.keywords or len(node.args) != 1:
            raise ConfigError(f"{node.func.id} takes exactly one positional argument")
        _check(node.args[0], variable)
        return
    raise ConfigError(f"unsupported syntax: {type(node).__name__}")


def compile_expression(expr: str, variable: str = "x") -> Callable:
    """Vectorized function of one variable from a whitelisted expression."""
    text = str(expr).replace("^", "**")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse {expr!r}: {exc.msg}") from None
    _check(tree, variable)
    code = compile(tree, "<forcing>", "eval")
    namespace = {"__builtins__": {}, **FUNCTIONS, **CONSTANTS}

    def func(t):
        t = np.asarray(t, dtype=float)
        val = eval(code, namespace, {variable: t})  # noqa: S307 - whitelisted AST
        return np.broadcast_to(np.asarray(val, dtype=float), t.shape).copy()

    func.expr = str(expr)
    return func


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


def profile_from_table(table: dict) -> PeriodicProfile:
    try:
        return PeriodicProfile.from_dict(table)
    except KeyError as exc:
        raise ConfigError(f"profile table misses key {exc.args[0]!r}") from None
