"""File formats: problem JSON, plan/trace/table CSV, atomic writes."""

import csv
import io as _io
import json
import os
import tempfile

import numpy as np

from . import __version__
from .core import UotProblem
from .exceptions import ValidationError

__all__ = [
    "atomic_write_text",
    "atomic_write_bytes",
    "load_problem",
    "save_problem",
    "plan_to_csv",
    "plan_from_csv",
    "write_plan_csv",
    "read_plan_csv",
    "write_rows_csv",
    "write_json_report",
]


def atomic_write_bytes(path, data):
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def load_problem(path, a3_factor=1.0):
    """Read ``{"a": [...], "b": [...], "C": [[...]], "tau": t}``."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    missing = [k for k in ("a", "b", "C", "tau") if k not in d]
    if missing:
        raise ValidationError(f"{path}: missing fields {missing}")
    return UotProblem(d["C"], d["a"], d["b"], d["tau"], a3_factor)


def save_problem(path, problem):
    d = {
        "a": problem.a.weights.tolist(),
        "b": problem.b.weights.tolist(),
        "C": problem.C.tolist(),
        "tau": problem.tau,
    }
    atomic_write_text(path, json.dumps(d) + "\n")


def plan_to_csv(X):
    """Row-major CSV with header ``n=<n>``; floats use ``repr`` so they round-trip exactly."""
    X = np.asarray(X, dtype=np.float64)
    lines = [f"n={X.shape[0]}"]
    lines.extend(",".join(repr(float(x)) for x in row) for row in X)
    return "\n".join(lines) + "\n"


def plan_from_csv(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("n="):
        raise ValidationError("plan CSV must start with an 'n=<n>' header")
    n = int(lines[0][2:])
    rows = [[float(x) for x in ln.split(",")] for ln in lines[1:]]
    X = np.array(rows, dtype=np.float64)
    if X.shape != (n, n):
        raise ValidationError(f"plan CSV declares n={n} but holds shape {X.shape}")
    return X


def write_plan_csv(path, X):
    atomic_write_text(path, plan_to_csv(X))


def read_plan_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        return plan_from_csv(fh.read())


def _cell(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_rows_csv(path, columns, rows):
    """Write dict rows with a header; booleans as true/false, floats via ``repr``."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r[c]) for c in columns])
    atomic_write_text(path, buf.getvalue())


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def write_json_report(path, report):
    d = {"version": __version__}
    d.update(_jsonable(report))
    atomic_write_text(path, json.dumps(d, indent=2, sort_keys=True) + "\n")
