"""Binary gridded-field files.

Layout: the magic line ``WXFIELD1``, one JSON header line, then the values
as little-endian float64 in C order. The header holds ``lat_count``,
``lon_count``, ``columns`` (variable-level names), ``batch`` and, for
ensembles, ``members``. The data shape is (members?, batch, cells, columns).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParseError, ShapeMismatch
from .metrics import FieldGrid

MAGIC = b"WXFIELD1\n"


def write_field(path, values, lat_count: int, lon_count: int, columns, members: bool = False) -> None:
    v = np.asarray(values, dtype="<f8")
    ndim = 4 if members else 3
    if v.ndim == ndim - 1:
        v = v[None] if not members else v[:, None]
    if v.ndim != ndim:
        raise ShapeMismatch(f"expected {ndim}-D values, got {v.ndim}-D")
    header = {
        "lat_count": int(lat_count),
        "lon_count": int(lon_count),
        "columns": list(columns),
        "batch": int(v.shape[-3]),
    }
    if members:
        header["members"] = int(v.shape[0])
    if v.shape[-2] != lat_count * lon_count or v.shape[-1] != len(columns):
        raise ShapeMismatch(f"values {v.shape} do not match header {header}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(v).tobytes())


def read_field(path) -> tuple[np.ndarray, dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ParseError(1, f"{path}: not a field file (bad magic)")
    try:
        end = raw.index(b"\n", len(MAGIC))
        header = json.loads(raw[len(MAGIC):end])
        lat, lon, cols, batch = header["lat_count"], header["lon_count"], header["columns"], header["batch"]
    except (ValueError, KeyError) as exc:
        raise ParseError(2, f"{path}: bad header: {exc}") from None
    shape = (batch, lat * lon, len(cols))
    if "members" in header:
        shape = (header["members"],) + shape
    data = raw[end + 1 :]
    if len(data) != 8 * int(np.prod(shape)):
        raise ShapeMismatch(f"{path}: {len(data)} data bytes, header implies shape {shape}")
    return np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64), header


def read_grid(path) -> FieldGrid:
    values, h = read_field(path)
    if "members" in h:
        raise ShapeMismatch(f"{path}: is an ensemble file")
    return FieldGrid(values, h["lat_count"], h["lon_count"], tuple(h["columns"]))
