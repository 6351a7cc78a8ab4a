"""Field snapshot files.

A snapshot is a JSON header ``<stem>.json`` next to a data file. The header is

    {"format": "pmelab-field", "version": 1, "dim": d, "n": n, "kind": kind,
     "encoding": "f64le" | "csv", "data": "<stem>.bin" | "<stem>.csv", ...}

The data are the ``n**d`` cell values in row-major (C) order, axis 0 slowest.
``f64le`` is raw little-endian float64; ``csv`` is one value per line written
with 17 significant digits so that reading it back is exact. Extra header keys
(for example ``time``) are preserved as metadata.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from pmelab.grid import GridField, PeriodicGrid

FORMAT = "pmelab-field"


def write_field(field: GridField, path, encoding: str = "f64le", **meta) -> Path:
    """Write ``field``; ``path`` is the header path (``.json`` appended if missing)."""
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(path.suffix + ".json") if path.suffix else path.with_suffix(".json")
    stem = path.name[: -len(".json")]
    flat = np.ascontiguousarray(field.values, dtype="<f8").ravel()
    if encoding == "f64le":
        data_name = stem + ".bin"
        flat.tofile(path.parent / data_name)
    elif encoding == "csv":
        data_name = stem + ".csv"
        np.savetxt(path.parent / data_name, flat, fmt="%.17g")
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    header = {
        "format": FORMAT,
        "version": 1,
        "dim": field.grid.dim,
        "n": field.grid.n,
        "kind": field.kind,
        "encoding": encoding,
        "data": data_name,
    }
    header.update(meta)
    path.write_text(json.dumps(header, indent=1))
    return path


def read_header(path) -> dict:
    header = json.loads(Path(path).read_text())
    if header.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} header")
    return header


def read_field(path, kind: str | None = None) -> GridField:
    path = Path(path)
    header = read_header(path)
    grid = PeriodicGrid(int(header["dim"]), int(header["n"]))
    data_path = path.parent / header["data"]
    if header["encoding"] == "f64le":
        flat = np.fromfile(data_path, dtype="<f8")
    elif header["encoding"] == "csv":
        flat = np.loadtxt(data_path, dtype=float, ndmin=1)
    else:
        raise ValueError(f"{path}: unknown encoding {header['encoding']!r}")
    if flat.size != grid.size:
        raise ValueError(f"{data_path}: expected {grid.size} values, found {flat.size}")
    return GridField(grid, flat.reshape(grid.shape), kind or header["kind"])
