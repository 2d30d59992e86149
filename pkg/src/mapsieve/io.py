"""CSV and JSON helpers shared by the command line tools."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .errors import IngestionError

FLOAT_FORMAT = "{:.17g}"


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FORMAT.format(float(v))
    return "" if v is None else str(v)


def write_csv(path, header, rows):
    """Write rows with a header; floats keep 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
    return path


def read_table(path):
    """Read a numeric CSV into ``(header, columns)`` with ``columns[name]`` float arrays.

    Raises :class:`IngestionError` naming the row (1-based, header excluded)
    and column of the first malformed cell.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path} is empty") from None
        if len(set(header)) != len(header):
            raise IngestionError(f"{path} has duplicate column names")
        data = [[] for _ in header]
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}",
                                     row=row_no)
            for col, (name, cell) in enumerate(zip(header, row)):
                try:
                    value = float(cell)
                except ValueError:
                    raise IngestionError(f"{path}: non-numeric value {cell!r} in row {row_no}, column {name}",
                                         row=row_no, column=name) from None
                if not math.isfinite(value):
                    raise IngestionError(f"{path}: non-finite value in row {row_no}, column {name}",
                                         row=row_no, column=name)
                data[col].append(value)
    return header, {name: np.array(col, dtype=float) for name, col in zip(header, data)}


def require_columns(path, header, names):
    for name in names:
        if name not in header:
            raise IngestionError(f"{path}: missing column {name}", column=name)


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def config_digest(settings) -> str:
    """SHA-256 of the canonical JSON form of ``settings``."""
    blob = json.dumps(to_jsonable(settings), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
