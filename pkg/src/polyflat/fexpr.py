"""Tiny arithmetic expression language for source terms and analytic fields.

Supports +, -, *, /, **, unary minus, numeric literals, the variables
x, y, z (coordinates), r (distance from the origin), theta (planar angle in
[0, 2*pi)), the constant pi, and the functions sin, cos, exp, pow, abs, as in
"24*pow(r, -1.0/3.0)*sin(2*theta/3)".  Evaluation is vectorized over
coordinate arrays; no attribute access, names, or calls outside the table.
"""

from __future__ import annotations

import ast
import math

import numpy as np

_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "pow": np.power,
    "abs": np.abs,
}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExpressionError(ValueError):
    pass


def _check(node: ast.AST) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body)
    elif isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check(node.left)
        _check(node.right)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        _check(node.operand)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            raise ExpressionError(f"unknown function at {ast.dump(node.func)}")
        if node.keywords:
            raise ExpressionError("keyword arguments are not allowed")
        for arg in node.args:
            _check(arg)
    elif isinstance(node, ast.Name):
        if node.id not in ("x", "y", "z", "r", "theta", "pi"):
            raise ExpressionError(f"unknown name {node.id!r}")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ExpressionError(f"non-numeric constant {node.value!r}")
    else:
        raise ExpressionError(f"disallowed syntax: {type(node).__name__}")


def compile_expression(text: str):
    """Parse and validate; returns a callable of the coordinate grids."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as e:
        raise ExpressionError(f"syntax error in expression: {e}") from None
    _check(tree)

    def evaluate(*grids):
        names = {"pi": math.pi}
        labels = ["x", "y", "z"]
        for i, g in enumerate(grids[:3]):
            names[labels[i]] = g
        rr = sum(np.asarray(g, dtype=float)**2 for g in grids)
        names["r"] = np.sqrt(rr)
        if len(grids) >= 2:
            names["theta"] = np.mod(np.arctan2(grids[1], grids[0]), 2 * math.pi)
        else:
            names["theta"] = np.zeros_like(np.asarray(grids[0], dtype=float))

        def ev(node):
            if isinstance(node, ast.Expression):
                return ev(node.body)
            if isinstance(node, ast.BinOp):
                return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
            if isinstance(node, ast.UnaryOp):
                val = ev(node.operand)
                return -val if isinstance(node.op, ast.USub) else val
            if isinstance(node, ast.Call):
                return _FUNCS[node.func.id](*[ev(a) for a in node.args])
            if isinstance(node, ast.Name):
                return names[node.id]
            if isinstance(node, ast.Constant):
                return float(node.value)
            raise ExpressionError(f"unreachable node {type(node).__name__}")

        with np.errstate(divide="ignore", invalid="ignore"):
            out = ev(tree)
        return np.nan_to_num(np.asarray(out, dtype=float), nan=0.0,
                             posinf=0.0, neginf=0.0)

    return evaluate


def evaluate_on(dom, text: str) -> np.ndarray:
    """Evaluate an expression on a domain's lattice, broadcast to full shape."""
    fn = compile_expression(text)
    vals = fn(*dom.coord_grids())
    return np.broadcast_to(vals, dom.shape).astype(float).copy()
