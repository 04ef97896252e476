"""Training-run logs: ingest, validate, serialize, and attach compute.

A run log is newline-delimited JSON. The first non-blank line is a header::

    {"format": "wxscale-runlog", "version": 1, "sample_size": {...}}

(``sample_size`` optional), followed by one :class:`RunRecord` per line with
the field names of the dataclass. Floats are written with ``repr`` so a
parse/serialize round trip is bit exact.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .cost_models import FlopBreakdown, flops as flop_breakdown, lookup_param_count
from .errors import MonotonicityViolation, ParseError, UnknownShape, ValidationError
from .scaling_fit import Observation
from .shapes import ModelShape, ShapeRegistry

FORMAT = "wxscale-runlog"
VERSION = 1
TB = 10**12
TB_TOLERANCE = 1e-3


@dataclass(frozen=True)
class SampleSizeConfig:
    lat_count: int = 721
    lon_count: int = 1440
    total_scalar_fields: int = 69
    bytes_per_value: int = 4

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ValidationError(f"sample size field {f.name} must be a positive integer, got {v!r}")

    @property
    def bytes_per_sample(self) -> int:
        return self.lat_count * self.lon_count * self.total_scalar_fields * self.bytes_per_value

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def samples_to_tb(samples: int, cfg: SampleSizeConfig) -> float:
    """Decimal terabytes (10**12 bytes) of ``samples`` training samples."""
    if samples < 0:
        raise ValidationError("samples must be >= 0")
    return samples * cfg.bytes_per_sample / TB


def tb_to_samples(tb: float, cfg: SampleSizeConfig) -> int:
    if tb < 0:
        raise ValidationError("data volume must be >= 0")
    return round(tb * TB / cfg.bytes_per_sample)


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    model_id: str
    step: int
    samples_seen: int
    batch_size: int
    val_loss: float
    shape: ModelShape | None = None
    data_tb: float | None = None
    per_variable_rmse: Mapping[str, float] | None = None
    wall_time_s: float | None = None
    achieved_tflops: float | None = None
    params: int | None = None
    compute: int | float | None = None

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if f.name == "shape":
                v = v.to_dict()
            elif f.name == "per_variable_rmse":
                v = dict(v)
            out[f.name] = v
        return out


_INT_FIELDS = ("step", "samples_seen", "batch_size")
_REQUIRED = ("run_id", "model_id", "step", "samples_seen", "batch_size", "val_loss")
_KNOWN = {f.name for f in fields(RunRecord)}


def _positive(v, name, line, allow_zero=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ParseError(line, f"must be a finite number, got {v!r}", name)
    if v < 0 or (v == 0 and not allow_zero):
        raise ParseError(line, f"must be {'>= 0' if allow_zero else '> 0'}, got {v!r}", name)
    return v


def parse_record(obj: Mapping, line: int) -> RunRecord:
    if not isinstance(obj, dict):
        raise ParseError(line, "record must be a JSON object")
    unknown = set(obj) - _KNOWN
    if unknown:
        raise ParseError(line, f"unknown fields {sorted(unknown)}")
    for name in _REQUIRED:
        if name not in obj:
            raise ParseError(line, "missing required field", name)
    for name in ("run_id", "model_id"):
        if not isinstance(obj[name], str) or not obj[name]:
            raise ParseError(line, "must be a non-empty string", name)
    for name in _INT_FIELDS:
        v = obj[name]
        if isinstance(v, bool) or not isinstance(v, int):
            raise ParseError(line, f"must be an integer, got {v!r}", name)
        if v < 0 or (name == "batch_size" and v == 0):
            raise ParseError(line, f"out of range: {v}", name)
    kw = dict(obj)
    _positive(kw["val_loss"], "val_loss", line)
    kw["val_loss"] = float(kw["val_loss"])
    if kw.get("shape") is not None:
        try:
            kw["shape"] = ModelShape.from_dict(kw["shape"])
        except (ValidationError, TypeError) as exc:
            raise ParseError(line, str(exc), "shape") from None
    if kw.get("data_tb") is not None:
        kw["data_tb"] = float(_positive(kw["data_tb"], "data_tb", line, allow_zero=True))
    for name in ("wall_time_s", "achieved_tflops"):
        if kw.get(name) is not None:
            kw[name] = float(_positive(kw[name], name, line))
    if kw.get("per_variable_rmse") is not None:
        pv = kw["per_variable_rmse"]
        if not isinstance(pv, dict):
            raise ParseError(line, "must be an object", "per_variable_rmse")
        for k, v in pv.items():
            _positive(v, f"per_variable_rmse.{k}", line)
        kw["per_variable_rmse"] = {k: float(v) for k, v in pv.items()}
    if kw.get("params") is not None:
        p = kw["params"]
        if isinstance(p, bool) or not isinstance(p, int) or p < 1:
            raise ParseError(line, f"must be a positive integer, got {p!r}", "params")
    if kw.get("compute") is not None:
        _positive(kw["compute"], "compute", line, allow_zero=True)
    return RunRecord(**kw)


@dataclass
class RunLog:
    records: list[RunRecord] = field(default_factory=list)
    sample_size: SampleSizeConfig | None = None


def _reject_constant(name):
    raise ValueError(f"non-finite literal {name}")


def parse_runlog(text: str, source: str = "<runlog>") -> RunLog:
    """Parse run-log text; records come back grouped by run and sorted by step."""
    header = None
    sample_size = None
    recs: list[tuple[RunRecord, int]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw, parse_constant=_reject_constant)
        except ValueError as exc:
            raise ParseError(lineno, f"invalid JSON: {exc}") from None
        if header is None:
            if not isinstance(obj, dict) or obj.get("format") != FORMAT:
                raise ParseError(lineno, f"expected a {FORMAT!r} header line")
            if obj.get("version") != VERSION:
                raise ParseError(lineno, f"unsupported version {obj.get('version')!r}", "version")
            extra = set(obj) - {"format", "version", "sample_size"}
            if extra:
                raise ParseError(lineno, f"unknown header fields {sorted(extra)}")
            if obj.get("sample_size") is not None:
                try:
                    sample_size = SampleSizeConfig(**obj["sample_size"])
                except (TypeError, ValidationError) as exc:
                    raise ParseError(lineno, str(exc), "sample_size") from None
            header = obj
            continue
        rec = parse_record(obj, lineno)
        if sample_size is not None and rec.data_tb is not None:
            expect = samples_to_tb(rec.samples_seen, sample_size)
            if abs(rec.data_tb - expect) > TB_TOLERANCE * expect or (expect == 0 and rec.data_tb != 0):
                raise ParseError(
                    lineno, f"data_tb {rec.data_tb!r} inconsistent with samples_seen ({expect!r} TB)", "data_tb"
                )
        recs.append((rec, lineno))

    run_order: dict[str, int] = {}
    for rec, _ in recs:
        run_order.setdefault(rec.run_id, len(run_order))
    recs.sort(key=lambda r: (run_order[r[0].run_id], r[0].step))
    prev: RunRecord | None = None
    for rec, lineno in recs:
        if prev is not None and prev.run_id == rec.run_id:
            if rec.step == prev.step:
                raise ParseError(lineno, f"duplicate step {rec.step} in run {rec.run_id!r}", "step")
            if rec.samples_seen < prev.samples_seen:
                raise MonotonicityViolation(rec.run_id, rec.step, lineno)
        prev = rec
    return RunLog([r for r, _ in recs], sample_size)


def ingest_runlog(path: "str | os.PathLike") -> list[RunRecord]:
    return parse_runlog(Path(path).read_text(), str(path)).records


def load_runlog(path: "str | os.PathLike") -> RunLog:
    return parse_runlog(Path(path).read_text(), str(path))


def serialize_runlog(records: Iterable[RunRecord], sample_size: SampleSizeConfig | None = None) -> str:
    header = {"format": FORMAT, "version": VERSION}
    if sample_size is not None:
        header["sample_size"] = sample_size.to_dict()
    lines = [json.dumps(header)]
    lines += [json.dumps(r.to_dict(), allow_nan=False) for r in records]
    return "\n".join(lines) + "\n"


def write_runlog(path, records, sample_size=None) -> None:
    Path(path).write_text(serialize_runlog(records, sample_size))


# -- compute and observations -----------------------------------------------------


def attach_compute(
    records: Sequence[RunRecord],
    flops_fn: Callable[[ModelShape], FlopBreakdown] | None = None,
) -> list[RunRecord]:
    """Fill ``compute`` = per-sample training FLOPs * samples_seen.

    ``flops_fn`` maps a shape to its per-sample FLOP breakdown (default:
    :func:`wxscale.cost_models.flops` with the bundled grid defaults).
    Records without a shape keep a logged ``compute`` or raise UnknownShape.
    """
    flops_fn = flops_fn or flop_breakdown
    cache: dict[tuple, int] = {}
    out = []
    for r in records:
        if r.shape is None:
            if r.compute is None:
                raise UnknownShape(f"run {r.run_id!r} step {r.step}: no shape to derive compute from")
            out.append(r)
            continue
        key = (r.shape,)
        if key not in cache:
            cache[key] = flops_fn(r.shape).train_total
        out.append(replace(r, compute=cache[key] * r.samples_seen))
    return out


def to_observations(
    records: Iterable[RunRecord],
    x_unit: str = "samples",
    registry: ShapeRegistry | None = None,
    sample_size: SampleSizeConfig | None = None,
) -> list[Observation]:
    """Scaling-fit observations; records with no data yet (D = 0) are skipped."""
    if x_unit not in ("samples", "tb"):
        raise ValidationError(f"x unit must be samples or tb, got {x_unit!r}")
    out = []
    for r in records:
        if r.params is not None:
            N = r.params
        elif r.shape is not None:
            N = lookup_param_count(r.shape, registry)
        else:
            raise UnknownShape(f"run {r.run_id!r}: neither params nor shape recorded")
        if x_unit == "samples":
            D = r.samples_seen
        elif r.data_tb is not None:
            D = r.data_tb
        elif sample_size is not None:
            D = samples_to_tb(r.samples_seen, sample_size)
        else:
            raise ValidationError(f"run {r.run_id!r} step {r.step}: no data_tb and no sample size config")
        if D == 0 or not r.compute:
            continue
        out.append(Observation(r.model_id, float(N), float(D), float(r.compute), r.val_loss, x_unit))
    return out
