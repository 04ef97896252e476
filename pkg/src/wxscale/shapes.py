"""Model shapes, grid specifications and the shape-size registry."""

from __future__ import annotations

import enum
import json
import os
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .errors import InvalidConfig, InvalidShape, UnknownArchitecture, UnknownShape

REGISTRY_ENV = "WXSCALE_REGISTRY"


class ArchitectureId(str, enum.Enum):
    GRAPHCAST = "graphcast"
    AURORA = "aurora"
    PANGU = "pangu"
    SFNO = "sfno"
    AIFS = "aifs"

    @classmethod
    def parse(cls, value: "str | ArchitectureId") -> "ArchitectureId":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(a.value for a in cls)
            raise UnknownArchitecture(
                f"unknown architecture {value!r} (expected one of: {names})"
            ) from None

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def is_attention(self) -> bool:
        return self in (ArchitectureId.AURORA, ArchitectureId.PANGU, ArchitectureId.AIFS)


_LABELS = {
    ArchitectureId.GRAPHCAST: "GraphCast",
    ArchitectureId.AURORA: "Aurora",
    ArchitectureId.PANGU: "Pangu",
    ArchitectureId.SFNO: "SFNO",
    ArchitectureId.AIFS: "AIFS",
}


def parse_depth(value) -> int | tuple[int, ...]:
    """Accept ``8``, ``"8"``, ``[3, 5, 4]``, ``"(3,5,4)"`` or ``"3,5,4"``."""
    if isinstance(value, bool):
        raise InvalidShape(f"invalid depth {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    text = str(value).strip().strip("()[]")
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if not parts:
        raise InvalidShape(f"invalid depth {value!r}")
    try:
        nums = tuple(int(p) for p in parts)
    except ValueError:
        raise InvalidShape(f"invalid depth {value!r}") from None
    if len(nums) == 1 and "," not in text:
        return nums[0]
    return nums


@dataclass(frozen=True)
class ModelShape:
    """Architecture plus the width/depth knobs the cost formulas need.

    ``depth`` is a single int for GraphCast (message-passing steps), SFNO
    (Fourier blocks) and AIFS (processor layers); a tuple of encoder stage
    depths for Aurora; a ``(outer, inner)`` pair for Pangu.
    """

    arch: ArchitectureId
    width: int
    depth: int | tuple[int, ...]
    heads: int | None = None
    mlp_ratio: int = 4
    window: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "arch", ArchitectureId.parse(self.arch))
        object.__setattr__(self, "depth", parse_depth(self.depth))
        # a zero-width GraphCast is a valid degenerate case of its closed form
        min_width = 0 if self.arch is ArchitectureId.GRAPHCAST else 1
        if isinstance(self.width, bool) or not isinstance(self.width, int) or self.width < min_width:
            raise InvalidShape(f"width must be an integer >= {min_width}, got {self.width!r}")
        if self.mlp_ratio < 1:
            raise InvalidShape(f"mlp_ratio must be >= 1, got {self.mlp_ratio}")
        depths = self.depth if isinstance(self.depth, tuple) else (self.depth,)
        if any(d < 0 for d in depths):
            raise InvalidShape(f"depth entries must be >= 0, got {self.depth}")
        if self.arch is ArchitectureId.AURORA:
            if not isinstance(self.depth, tuple):
                object.__setattr__(self, "depth", (self.depth,))
        elif self.arch is ArchitectureId.PANGU:
            if not isinstance(self.depth, tuple) or len(self.depth) != 2:
                raise InvalidShape(f"Pangu depth must be a pair, got {self.depth}")
        elif isinstance(self.depth, tuple):
            if len(self.depth) != 1:
                raise InvalidShape(
                    f"{self.arch.label} depth must be a single integer, got {self.depth}"
                )
            object.__setattr__(self, "depth", self.depth[0])
        if self.heads is not None:
            if self.heads < 1:
                raise InvalidShape(f"heads must be >= 1, got {self.heads}")
            if self.width % self.heads:
                raise InvalidShape(
                    f"width {self.width} is not divisible by heads {self.heads}"
                )
        if self.window is not None and self.window < 1:
            raise InvalidShape(f"window must be >= 1, got {self.window}")

    @property
    def head_dim(self) -> int | None:
        if self.heads is None:
            return None
        return self.width // self.heads

    @property
    def depths(self) -> tuple[int, ...]:
        return self.depth if isinstance(self.depth, tuple) else (self.depth,)

    def key(self) -> tuple:
        return (self.arch.value, self.width, self.depth)

    def to_dict(self) -> dict:
        out = {
            "arch": self.arch.value,
            "width": self.width,
            "depth": list(self.depth) if isinstance(self.depth, tuple) else self.depth,
        }
        if self.heads is not None:
            out["heads"] = self.heads
        if self.mlp_ratio != 4:
            out["mlp_ratio"] = self.mlp_ratio
        if self.window is not None:
            out["window"] = self.window
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelShape":
        extra = set(data) - {f.name for f in fields(cls)}
        if extra:
            raise InvalidShape(f"unknown shape fields: {sorted(extra)}")
        return cls(**data)

    def describe(self) -> str:
        depth = (
            "(" + ", ".join(map(str, self.depth)) + ")"
            if isinstance(self.depth, tuple)
            else str(self.depth)
        )
        return f"{self.arch.label} width={self.width} depth={depth}"


@dataclass(frozen=True)
class GridSpec:
    """Grid, mesh and channel counts consumed by the FLOP formulas.

    Only the fields an architecture actually reads matter for it. ``l_max``
    and ``m_max`` default to ``h_lo`` and ``w_lo // 2 + 1``.
    """

    n_grid: int = 721 * 1440
    n_mesh: int = 40962
    e_mesh: int = 327660
    e_enc: int = 3 * 542080
    e_dec: int = 3 * 542080
    edge_dim: int = 4
    h_hi: int = 721
    w_hi: int = 1440
    h_lo: int = 360
    w_lo: int = 720
    l_max: int | None = None
    m_max: int | None = None
    lat_cells: int = 721
    lon_cells: int = 1440
    patch: int = 4
    channels_in: int = 69
    channels_out: int = 69

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, bool) or not isinstance(v, int):
                raise InvalidConfig(f"grid field {f.name} must be an integer, got {v!r}")
            if v < 1:
                raise InvalidConfig(f"grid field {f.name} must be >= 1, got {v}")

    @property
    def spectral_l(self) -> int:
        return self.h_lo if self.l_max is None else self.l_max

    @property
    def spectral_m(self) -> int:
        return self.w_lo // 2 + 1 if self.m_max is None else self.m_max

    def tokens(self) -> int:
        """Patch-token count C * floor(H/p) * floor(L/p)."""
        return self.channels_in * (self.lat_cells // self.patch) * (self.lon_cells // self.patch)

    def updated(self, **changes) -> "GridSpec":
        return self.from_dict({**asdict(self), **changes})

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: Mapping) -> "GridSpec":
        extra = set(data) - {f.name for f in fields(cls)}
        if extra:
            raise InvalidConfig(f"unknown grid fields: {sorted(extra)}")
        return cls(**data)


@dataclass(frozen=True)
class CostOptions:
    """Architecture knobs that are conventions rather than shape.

    alpha: SFNO spherical-transform complexity constant.
    skip: include the SFNO skip connection term.
    projections: include stage transitions and patch embed/recover (Swin models).
    aurora_head_dim, pangu_head_dim: per-head width when ``shape.heads`` is
        unset (stage heads = stage width / head dim).
    window: Swin window size in tokens when ``shape.window`` is unset.
    aurora_width_mults, aurora_token_divs: per-encoder-stage width multiplier
        and token divisor; stage k defaults to 2**k and 4**k.
    pangu_width_mults, pangu_token_divs: the four Pangu stages.
    """

    alpha: float = 5.0
    skip: bool = False
    projections: bool = True
    aurora_head_dim: int = 64
    pangu_head_dim: int = 32
    window: int = 144
    aurora_width_mults: tuple[int, ...] | None = None
    aurora_token_divs: tuple[int, ...] | None = None
    pangu_width_mults: tuple[int, int, int, int] = (1, 2, 2, 1)
    pangu_token_divs: tuple[int, int, int, int] = (1, 4, 4, 1)

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidConfig(f"alpha must be > 0, got {self.alpha}")
        if min(self.aurora_head_dim, self.pangu_head_dim, self.window) < 1:
            raise InvalidConfig("head dims and window must be >= 1")
        for name in ("aurora_width_mults", "aurora_token_divs", "pangu_width_mults", "pangu_token_divs"):
            v = getattr(self, name)
            if v is None:
                continue
            v = tuple(int(x) for x in v)
            if any(x < 1 for x in v):
                raise InvalidConfig(f"{name} entries must be >= 1")
            object.__setattr__(self, name, v)
        if len(self.pangu_width_mults) != 4 or len(self.pangu_token_divs) != 4:
            raise InvalidConfig("Pangu has exactly four stages")

    def to_dict(self) -> dict:
        out = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in out.items() if v is not None}

    @classmethod
    def from_dict(cls, data: Mapping) -> "CostOptions":
        extra = set(data) - {f.name for f in fields(cls)}
        if extra:
            raise InvalidConfig(f"unknown option fields: {sorted(extra)}")
        return cls(**data)


def _data_path(name: str):
    return resources.files("wxscale") / "data" / name


def load_defaults() -> tuple[dict[ArchitectureId, GridSpec], CostOptions]:
    """Bundled per-architecture grid defaults and cost options."""
    doc = json.loads(_data_path("defaults.json").read_text())
    return parse_config(doc)


def parse_config(doc: Mapping, base: Mapping[ArchitectureId, GridSpec] | None = None):
    """Parse a config document ``{"grid": {...}, "grids": {arch: {...}}, "options": {...}}``.

    ``grid`` applies to every architecture; ``grids`` entries override per
    architecture. Returns ``(grids_by_arch, options)``.
    """
    known = {"grid", "grids", "options", "comment"}
    extra = set(doc) - known
    if extra:
        raise InvalidConfig(f"unknown config sections: {sorted(extra)}")
    common = dict(doc.get("grid", {}))
    grids = {}
    for arch in ArchitectureId:
        start = base[arch].to_dict() if base else {}
        start.update(common)
        for key, spec in doc.get("grids", {}).items():
            if ArchitectureId.parse(key) is arch:
                start.update(spec)
        grids[arch] = GridSpec.from_dict(start)
    options = CostOptions.from_dict(doc.get("options", {}))
    return grids, options


@dataclass(frozen=True)
class RegistryRow:
    shape: ModelShape
    params: int

    def to_dict(self) -> dict:
        d = self.shape.to_dict()
        d["params"] = self.params
        return d


class ShapeRegistry:
    """Immutable map from (arch, width, depth) to a recorded parameter count."""

    def __init__(self, rows: Iterable[RegistryRow] = ()):
        table: dict[tuple, RegistryRow] = {}
        for row in rows:
            k = row.shape.key()
            if k in table and table[k].params != row.params:
                raise InvalidConfig(
                    f"conflicting registry rows for {row.shape.describe()}: "
                    f"{table[k].params} vs {row.params}"
                )
            table[k] = row
        self._rows = table

    def __len__(self):
        return len(self._rows)

    def __iter__(self):
        return iter(self._rows.values())

    def __contains__(self, shape: ModelShape):
        return shape.key() in self._rows

    def get(self, shape: ModelShape) -> int:
        try:
            return self._rows[shape.key()].params
        except KeyError:
            raise UnknownShape(f"no registry entry for {shape.describe()}") from None

    @classmethod
    def parse(cls, text: str, source: str = "<registry>") -> "ShapeRegistry":
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rec = json.loads(line)
                params = rec.pop("params")
                if isinstance(params, bool) or not isinstance(params, int) or params < 0:
                    raise ValueError(f"params must be a non-negative integer, got {params!r}")
                rows.append(RegistryRow(ModelShape.from_dict(rec), params))
            except (ValueError, KeyError, TypeError) as exc:
                raise InvalidConfig(f"{source}:{lineno}: {exc}") from None
        return cls(rows)

    @classmethod
    def load(cls, path: "str | os.PathLike | None" = None) -> "ShapeRegistry":
        """Load a registry file; default is ``$WXSCALE_REGISTRY`` or the bundled one."""
        if path is None:
            path = os.environ.get(REGISTRY_ENV) or None
        if path is None:
            return cls.parse(_data_path("shape_registry.jsonl").read_text(), "bundled registry")
        p = Path(path)
        return cls.parse(p.read_text(), str(p))

    def dumps(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self)
