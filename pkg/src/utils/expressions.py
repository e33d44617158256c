"""
Matrix-entry expressions of the time variable t.

Grammar: numbers, t, pi, + - * / ** ^, parentheses and the functions
sin, cos, exp, sqrt. The source is checked as a Python syntax tree before
sympy sees it, and the sympy tree is checked again before lambdify.
"""

import ast

import numpy as np
import sympy as sym

T = sym.Symbol("t", real=True)

_FUNCTIONS = {"sin": sym.sin, "cos": sym.cos, "exp": sym.exp, "sqrt": sym.sqrt}
_NAMESPACE = {"t": T, "pi": sym.pi, **_FUNCTIONS}
_ALLOWED_HEADS = (sym.Add, sym.Mul, sym.Pow, sym.sin, sym.cos, sym.exp)
_BINARY_OPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.BitXor)
_UNARY_OPS = (ast.UAdd, ast.USub)


class ExpressionError(ValueError):
    """An entry expression is outside the supported grammar."""


def _check_syntax(source):
    try:
        tree = ast.parse(source.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse '{source}': {exc.msg}") from exc
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load)):
            continue
        if isinstance(node, ast.BinOp):
            ok = isinstance(node.op, _BINARY_OPS)
        elif isinstance(node, ast.UnaryOp):
            ok = isinstance(node.op, _UNARY_OPS)
        elif isinstance(node, ast.Constant):
            ok = type(node.value) in (int, float)
        elif isinstance(node, ast.Name):
            ok = node.id in _NAMESPACE
        elif isinstance(node, ast.Call):
            ok = (isinstance(node.func, ast.Name) and node.func.id in _FUNCTIONS
                  and len(node.args) == 1 and not node.keywords)
        elif isinstance(node, (ast.operator, ast.unaryop)):
            continue
        else:
            ok = False
        if not ok:
            raise ExpressionError(f"unsupported syntax '{type(node).__name__}' in '{source}'")


def _check_tree(expr, source):
    for node in sym.preorder_traversal(expr):
        if node.is_Atom:
            if node.is_Symbol and node != T:
                raise ExpressionError(f"unknown symbol '{node}' in '{source}'")
            if not (node.is_Symbol or node.is_number):
                raise ExpressionError(f"unsupported atom '{node}' in '{source}'")
            if node.is_number and not node.is_real:
                raise ExpressionError(f"complex constant in '{source}'")
        elif not isinstance(node, _ALLOWED_HEADS):
            raise ExpressionError(f"unsupported operation '{node.func.__name__}' in '{source}'")


def parse_entry(source):
    """Parse one entry into a sympy expression in t."""
    if isinstance(source, (int, float)):
        return sym.Float(source) if isinstance(source, float) else sym.Integer(source)
    if not isinstance(source, str):
        raise ExpressionError(f"entry must be a number or string, got {type(source).__name__}")
    _check_syntax(source)
    try:
        expr = sym.sympify(source, locals=_NAMESPACE, rational=False, evaluate=True)
    except (sym.SympifyError, SyntaxError, TypeError) as exc:
        raise ExpressionError(f"cannot parse '{source}': {exc}") from exc
    if not isinstance(expr, sym.Expr):
        raise ExpressionError(f"'{source}' is not an arithmetic expression")
    _check_tree(expr, source)
    return expr


def compile_matrix(entries):
    """
    Compile a nested list of entries into a vectorized matrix function.

    The returned callable maps t (scalar or array) to an array of shape
    np.shape(t) + (rows, cols).
    """
    if not entries or not all(isinstance(row, (list, tuple)) for row in entries):
        raise ExpressionError("matrix must be a nonempty list of rows")
    cols = len(entries[0])
    if cols == 0 or any(len(row) != cols for row in entries):
        raise ExpressionError("matrix rows must be nonempty and of equal length")
    exprs = [[parse_entry(item) for item in row] for row in entries]
    funcs = [[sym.lambdify(T, e, modules="numpy") for e in row] for row in exprs]
    rows = len(entries)

    def matrix_fn(t):
        t = np.asarray(t, dtype=float)
        out = np.empty(t.shape + (rows, cols))
        for i in range(rows):
            for j in range(cols):
                out[..., i, j] = np.broadcast_to(funcs[i][j](t), t.shape)
        return out

    matrix_fn.source = [[str(e) for e in row] for row in exprs]
    return matrix_fn
