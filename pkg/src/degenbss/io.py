"""CSV matrix files and scenario directories.

Matrix CSV layout: a first line ``# rows cols`` followed by one matrix row per
line, comma separated, every value written with 17 significant digits so that
float64 values round-trip exactly.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = ["write_matrix_csv", "read_matrix_csv", "write_json", "read_json"]


def write_matrix_csv(path, M) -> None:
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[np.newaxis, :]
    rows, cols = M.shape
    lines = [f"# {rows} {cols}"]
    lines.extend(",".join(f"{v:.17g}" for v in row) for row in M)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DataError(f"{path}: missing '# rows cols' header")
    try:
        rows, cols = (int(tok) for tok in lines[0][1:].split())
    except ValueError as exc:
        raise DataError(f"{path}: malformed header {lines[0]!r}") from exc
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != rows:
        raise DataError(f"{path}: header says {rows} rows, found {len(body)}")
    try:
        M = np.array([[float(tok) for tok in ln.split(",")] for ln in body], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry") from exc
    if M.shape != (rows, cols):
        raise DataError(f"{path}: header says {rows}x{cols}, parsed {M.shape}")
    return M


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return None
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> None:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path):
    with open(os.fspath(path), encoding="utf-8") as fh:
        return json.load(fh)
