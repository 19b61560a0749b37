"""JSON/CSV serialization, config hashing and expression presets."""
from __future__ import annotations

import ast
import csv
import hashlib
import io
import json
import math
import operator as op
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .geometry import ConformalFactor, ManifoldBackend

__all__ = [
    "SCHEMA_VERSION",
    "to_jsonable",
    "dumps",
    "config_hash",
    "envelope",
    "matrix_to_csv",
    "matrix_from_csv",
    "spectrum_to_csv",
    "trajectory_to_csv",
    "rows_to_csv",
    "evaluate_expression",
    "factor_from_spec",
    "direction_from_spec",
    "load_coefficients",
]

SCHEMA_VERSION = 1


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and report objects to JSON types."""
    if hasattr(obj, "to_json"):
        return to_jsonable(obj.to_json())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
        return x
    return obj


def dumps(obj) -> str:
    """Deterministic JSON text (sorted keys, fixed separators, trailing newline)."""
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n"


def config_hash(config: dict) -> str:
    canon = json.dumps(to_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def envelope(command: str, config: dict, result, version: str, timestamp: str | None = None) -> dict:
    """Wrap a result with schema version, artifact version, config and its hash."""
    return {"schema_version": SCHEMA_VERSION, "artifact_version": version, "command": command,
            "config": config, "config_hash": config_hash(config), "seed": config.get("seed"),
            "result": result, "timestamp": timestamp}


# ---------------------------------------------------------------------------
# CSV

def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return x


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def matrix_to_csv(A) -> str:
    """Dense matrix, one row per line, 17 significant digits (lossless for float64)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    for row in A:
        wr.writerow([format(float(x), ".17g") for x in row])
    return buf.getvalue()


def matrix_from_csv(text: str) -> np.ndarray:
    rows = [list(map(float, r)) for r in csv.reader(io.StringIO(text)) if r]
    return np.array(rows, dtype=float)


def spectrum_to_csv(spectrum) -> str:
    rows = []
    for ci, group in enumerate(spectrum.clusters.groups, start=1):
        for k in group:
            rows.append((k, spectrum.eigenvalue(k), ci, float(spectrum.residual_norms[k - 1])))
    return rows_to_csv(("k", "eigenvalue", "cluster", "residual"), rows)


def trajectory_to_csv(trajectory) -> str:
    return rows_to_csv(("step", "lambda_k", "step_size", "direction"), trajectory)


# ---------------------------------------------------------------------------
# expression presets

_BINOPS = {ast.Add: op.add, ast.Sub: op.sub, ast.Mult: op.mul, ast.Div: op.truediv,
           ast.Pow: op.pow}
_UNOPS = {ast.UAdd: op.pos, ast.USub: op.neg}
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "log": np.log, "sqrt": np.sqrt,
          "tanh": np.tanh}
_CONSTS = {"pi": math.pi, "e": math.e}


def evaluate_expression(expr: str, variables: dict):
    """Evaluate an arithmetic expression over node arrays.

    Accepts numbers, the names in ``variables`` plus ``pi``/``e``, the
    operators ``+ - * / ** ^`` (``^`` means power) and the functions
    ``sin cos exp log sqrt tanh``. Anything else is rejected.
    """
    try:
        tree = ast.parse(expr.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"cannot parse expression {expr!r}: {exc.msg}") from None

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in variables:
                return variables[node.id]
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            raise ConfigurationError(f"unknown name {node.id!r} in expression")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ConfigurationError(f"unsupported construct in expression {expr!r}")

    with np.errstate(all="raise"):
        try:
            return ev(tree)
        except FloatingPointError as exc:
            raise ConfigurationError(f"expression {expr!r} is not finite at the nodes: {exc}") from None


def _project_expression(backend: ManifoldBackend, expr: str, tol: float):
    vals = np.broadcast_to(evaluate_expression(expr, backend.coordinates()),
                           (backend.n_nodes,)).astype(float)
    coeffs = backend.project(vals)
    err = float(np.max(np.abs(backend.evaluate(coeffs) - vals)))
    if err > tol * max(1.0, float(np.max(np.abs(vals)))):
        raise ConfigurationError(
            f"expression {expr!r} is not in the span of the basis (projection error {err:.3g}); "
            "raise the truncation degree")
    return coeffs


def load_coefficients(path, basis_dim: int) -> np.ndarray:
    """Coefficient vector from a JSON file (list, or object with ``coeffs``) or text/CSV."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
        if isinstance(data, dict):
            data = data.get("coeffs", data.get("coefficients"))
        c = np.asarray(data, dtype=float)
    else:
        c = np.array([float(t) for t in text.replace(",", " ").split()], dtype=float)
    if c.shape != (basis_dim,):
        raise ConfigurationError(f"{path}: expected {basis_dim} coefficients, got {c.size}")
    return c


def factor_from_spec(backend: ManifoldBackend, spec: str | None, tol: float = 1e-9) -> ConformalFactor:
    """Conformal factor from ``None``/``"zero"``, a coefficient file or an expression."""
    if spec is None or spec.strip() in ("", "zero", "0"):
        return ConformalFactor.zero(backend)
    if Path(spec).is_file():
        return ConformalFactor.from_coeffs(backend, load_coefficients(spec, backend.basis_dim))
    return ConformalFactor.from_coeffs(backend, _project_expression(backend, spec, tol))


def direction_from_spec(backend: ManifoldBackend, spec: str, tol: float = 1e-9) -> np.ndarray:
    """Node values of a direction given by an expression or a coefficient file."""
    if Path(spec).is_file():
        return backend.evaluate(load_coefficients(spec, backend.basis_dim))
    return backend.evaluate(_project_expression(backend, spec, tol))
