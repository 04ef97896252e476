"""Structured reports: text, JSON and CSV renderings.

Every report carries a sha256 digest of its canonicalized inputs (command
arguments plus the bytes of any input files), so identical inputs give
identical reports.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import __version__

KINDS = ("flops", "params", "fit_power", "fit_isoflop", "metrics", "utilization", "synth")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def inputs_digest(inputs: Mapping) -> str:
    return "sha256:" + hashlib.sha256(canonical_json(inputs).encode()).hexdigest()


@dataclass(frozen=True)
class Report:
    kind: str
    inputs_digest: str
    body: Mapping
    tool_version: str = __version__
    table: Sequence[Mapping] = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown report kind {self.kind!r}")

    @classmethod
    def build(cls, kind: str, inputs: Mapping, body: Mapping, table: Sequence[Mapping] = ()) -> "Report":
        return cls(kind, inputs_digest(inputs), body, __version__, tuple(table))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "tool_version": self.tool_version,
            "inputs_digest": self.inputs_digest,
            "body": self.body,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def to_text(self) -> str:
        lines = [f"kind: {self.kind}", f"tool_version: {self.tool_version}", f"inputs_digest: {self.inputs_digest}"]
        _render(self.body, 0, lines)
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        return table_to_csv(self.table)


def _scalar(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _render(obj, indent: int, lines: list[str]) -> None:
    pad = "  " * indent
    for k, v in obj.items():
        if isinstance(v, Mapping):
            lines.append(f"{pad}{k}:")
            _render(v, indent + 1, lines)
        elif isinstance(v, (list, tuple)) and v and all(isinstance(x, Mapping) for x in v):
            lines.append(f"{pad}{k}:")
            for item in v:
                lines.append(f"{pad}  -")
                _render(item, indent + 2, lines)
        elif isinstance(v, (list, tuple)):
            lines.append(f"{pad}{k}: [" + ", ".join(_scalar(x) for x in v) + "]")
        else:
            lines.append(f"{pad}{k}: {_scalar(v)}")


def table_to_csv(rows: Sequence[Mapping]) -> str:
    """CSV with floats at full (repr) precision so values parse back exactly."""
    if not rows:
        return ""
    cols = list(rows[0].keys())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow(_scalar(r.get(c)) if r.get(c) is not None else "" for c in cols)
    return buf.getvalue()


def read_csv_table(text: str) -> list[dict]:
    """Inverse of :func:`table_to_csv` for numeric columns."""
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        rec = {}
        for k, v in row.items():
            if v == "":
                rec[k] = None
                continue
            try:
                rec[k] = int(v)
            except ValueError:
                try:
                    rec[k] = float(v)
                except ValueError:
                    rec[k] = v
        out.append(rec)
    return out
