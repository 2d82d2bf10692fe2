"""Arithmetic expression grammar used for generators and problem data.

Expressions are ordinary infix arithmetic::

    expr    := expr ('+'|'-'|'*'|'/'|'**') expr | '-' expr | '(' expr ')'
             | number | name | call
    call    := func '(' expr {',' expr} ')'

Names available in generator expressions: ``t``, ``y``, ``z`` (first
coordinate), ``z1``..``zd``, ``absz`` (Euclidean norm of z), ``B`` (first
state coordinate), ``B1``..``Bd``, ``absB``.  Data expressions (terminal
value, barriers, forcing rate) see ``t``, ``T`` and the ``B`` family.
Constants: ``pi``, ``e``.  Functions: ``abs exp log sqrt cbrt sin cos tan
tanh sign min max pos neg clip``, where ``pos(a) = max(a, 0)`` and
``neg(a) = max(-a, 0)``.

Parsing goes through :mod:`ast` with a whitelist, so nothing beyond this
grammar is evaluated.
"""

from __future__ import annotations

import ast
import operator
from typing import Callable

import numpy as np


class ExpressionError(ValueError):
    def __init__(self, message: str, expression: str = "", col: int | None = None):
        where = f" at column {col + 1}" if col is not None else ""
        super().__init__(f"{message}{where} in {expression!r}" if expression else message)
        self.col = col


_FUNCS: dict[str, Callable] = {
    "abs": np.abs, "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "cbrt": np.cbrt,
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "tanh": np.tanh, "sign": np.sign,
    "min": np.minimum, "max": np.maximum,
    "pos": lambda a: np.maximum(a, 0.0), "neg": lambda a: np.maximum(-a, 0.0),
    "clip": np.clip,
}
_CONSTS = {"pi": np.pi, "e": np.e}
_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: np.power}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def parse(expression: str, names) -> Callable[[dict], np.ndarray]:
    """Compile ``expression`` into ``fn(env)``; ``names`` lists allowed variables."""
    allowed = set(names)
    try:
        tree = ast.parse(str(expression).strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"syntax error: {exc.msg}", expression, (exc.offset or 1) - 1) from None

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            v = float(node.value)
            return lambda env: v
        if isinstance(node, ast.Name):
            if node.id in allowed:
                key = node.id
                return lambda env: env[key]
            if node.id in _CONSTS:
                v = _CONSTS[node.id]
                return lambda env: v
            raise ExpressionError(f"unknown name {node.id!r}", expression, node.col_offset)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op = _BINOPS[type(node.op)]
            a, b = build(node.left), build(node.right)
            return lambda env: op(a(env), b(env))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            op = _UNOPS[type(node.op)]
            a = build(node.operand)
            return lambda env: op(a(env))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            if node.func.id not in _FUNCS:
                raise ExpressionError(f"unknown function {node.func.id!r}", expression, node.col_offset)
            fn = _FUNCS[node.func.id]
            args = [build(a) for a in node.args]
            return lambda env: fn(*(a(env) for a in args))
        raise ExpressionError(f"unsupported syntax {type(node).__name__}", expression,
                              getattr(node, "col_offset", None))

    return build(tree)


def _state_env(x: np.ndarray, env: dict) -> None:
    x = np.asarray(x, dtype=float)
    env["B"] = x[..., 0]
    env["absB"] = np.sqrt(np.sum(x * x, axis=-1))
    for i in range(x.shape[-1]):
        env[f"B{i + 1}"] = x[..., i]


def generator_function(expression: str, d: int = 1) -> Callable:
    names = ["t", "y", "z", "absz", "B", "absB"] + [f"z{i + 1}" for i in range(d)] + [f"B{i + 1}" for i in range(d)]
    fn = parse(expression, names)

    def g(t, x, y, z):
        z = np.asarray(z, dtype=float)
        env = {"t": np.asarray(t, dtype=float), "y": np.asarray(y, dtype=float),
               "z": z[..., 0], "absz": np.sqrt(np.sum(z * z, axis=-1))}
        for i in range(z.shape[-1]):
            env[f"z{i + 1}"] = z[..., i]
        _state_env(x, env)
        shape = np.broadcast_shapes(np.shape(t), np.shape(y), z.shape[:-1], np.shape(x)[:-1])
        with np.errstate(all="ignore"):
            return np.broadcast_to(fn(env), shape).astype(float)

    g.expression = expression
    return g


def data_function(expression: str, horizon: float, d: int = 1) -> Callable:
    """``fn(t, x)`` for terminal values, barriers and forcing rates."""
    names = ["t", "T", "B", "absB"] + [f"B{i + 1}" for i in range(d)]
    fn = parse(expression, names)

    def h(t, x):
        env = {"t": np.asarray(t, dtype=float), "T": float(horizon)}
        _state_env(x, env)
        shape = np.broadcast_shapes(np.shape(t), np.shape(x)[:-1])
        with np.errstate(all="ignore"):
            return np.broadcast_to(fn(env), shape).astype(float)

    h.expression = expression
    return h
