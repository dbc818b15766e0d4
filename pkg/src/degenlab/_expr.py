"""Restricted arithmetic expressions over grid coordinates.

Expressions are ordinary Python syntax limited to numbers, the coordinate
names ``x1``, ``x2``, ``x3``, ``t`` (first coordinate), ``xd`` (last
coordinate), ``r`` (Euclidean norm), the constants ``pi`` and ``e``, and a
small set of numpy ufuncs. Anything else is rejected before evaluation.
"""

import ast

import numpy as np

_FUNCS = {
    "abs": np.abs,
    "sqrt": np.sqrt,
    "exp": np.exp,
    "log": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "tanh": np.tanh,
    "arctan": np.arctan,
    "sign": np.sign,
    "maximum": np.maximum,
    "minimum": np.minimum,
    "where": np.where,
}
_CONSTS = {"pi": np.pi, "e": np.e}

_ALLOWED = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
    ast.Constant, ast.Compare, ast.Add, ast.Sub, ast.Mult, ast.Div,
    ast.Pow, ast.USub, ast.UAdd, ast.Lt, ast.LtE, ast.Gt, ast.GtE,
)


def compile_expression(source, d):
    """Validate ``source`` and return a callable of the coordinate arrays."""
    if not isinstance(source, str):
        raise TypeError("expression must be a string")
    try:
        tree = ast.parse(source.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {source!r}: {exc.msg}") from None
    names = {f"x{i + 1}" for i in range(d)} | {"t", "xd", "r"}
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ValueError(
                f"disallowed syntax {type(node).__name__} in {source!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ValueError(f"only numeric constants allowed in {source!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ValueError(f"unknown function in {source!r}")
            if node.keywords:
                raise ValueError(f"keyword arguments not allowed in {source!r}")
        if isinstance(node, ast.Name) and not (
                node.id in names or node.id in _FUNCS or node.id in _CONSTS):
            raise ValueError(f"unknown name {node.id!r} in {source!r}")
    code = compile(tree, "<expression>", "eval")

    def evaluate(*coords):
        env = dict(_FUNCS)
        env.update(_CONSTS)
        for i, c in enumerate(coords):
            env[f"x{i + 1}"] = c
        env["t"] = coords[0]
        env["xd"] = coords[-1]
        env["r"] = np.sqrt(sum(c * c for c in coords))
        with np.errstate(all="ignore"):
            return eval(code, {"__builtins__": {}}, env)

    evaluate.source = source
    return evaluate
