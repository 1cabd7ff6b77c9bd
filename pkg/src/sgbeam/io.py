"""CSV and JSON output with a versioned schema line.

Every CSV starts with ``# sgbeam:<kind> v<version>`` followed by a header
row of column names. JSON files carry the same tag under ``"schema"``.
"""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "SGBEAM_OUTPUT_DIR"


def schema_tag(kind: str) -> str:
    return f"sgbeam:{kind} v{SCHEMA_VERSION}"


def write_csv(path, kind: str, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# {schema_tag(kind)}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_csv(path) -> tuple[str, list[str], list[list[str]]]:
    """(schema tag, column names, rows as strings)."""
    with Path(path).open(newline="") as fh:
        first = fh.readline()
        if not first.startswith("# sgbeam:"):
            raise ValueError(f"{path}: missing schema line")
        r = csv.reader(fh)
        columns = next(r)
        return first[2:].strip(), columns, [row for row in r]


def read_csv_array(path) -> tuple[str, list[str], np.ndarray]:
    """Like :func:`read_csv` but for all-numeric files."""
    tag, cols, rows = read_csv(path)
    return tag, cols, np.array([[float(v) for v in row] for row in rows], dtype=np.float64).reshape(-1, len(cols))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, kind: str, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema": schema_tag(kind), **_jsonable(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def output_directory(flag: str | None, configured: str | None) -> Path:
    """Command-line flag, then the environment variable, then the config value."""
    for candidate in (flag, os.environ.get(OUTPUT_DIR_ENV), configured):
        if candidate:
            return Path(candidate)
    return Path(".")
