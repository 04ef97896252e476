"""Forecast verification: unified weighted loss, per-variable MSE and CRPS.

Reductions are correctly rounded (see :mod:`wxscale.kernels`), so a loss
depends only on the multiset of its terms: it is bit-identical across
runs, thread counts, kernel backends and permutations of grid cells.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import (
    EmptyEnsemble,
    InvalidConfig,
    InvalidGrid,
    NonFiniteInput,
    ShapeMismatch,
    UnknownVariable,
)

LEAD_TIME_HOURS = 6

# surface weights; anything not listed defaults to 1.0
SURFACE_WEIGHTS = {"2t": 1.0, "t2m": 1.0, "10u": 0.1, "u10": 0.1, "10v": 0.1, "v10": 0.1, "msl": 0.1}


def level_weights(levels: Sequence[float]) -> np.ndarray:
    """Per-level sub-weights proportional to pressure, summing to 1."""
    p = np.asarray(levels, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise InvalidConfig(f"pressure levels must be positive and finite, got {list(levels)}")
    return p / kernels.exact_sum(p)


@dataclass(frozen=True)
class VariableSpec:
    """One forecast variable.

    Upper-air variables span one column per pressure level (hPa);
    ``inv_variance`` is either one value or one per level.
    """

    name: str
    kind: str = "surface"
    levels: tuple[float, ...] = ()
    loss_weight: float | None = None
    inv_variance: float | tuple[float, ...] = 1.0

    def __post_init__(self):
        if self.kind not in ("surface", "upper_air"):
            raise InvalidConfig(f"{self.name}: kind must be surface or upper_air, got {self.kind!r}")
        object.__setattr__(self, "levels", tuple(float(p) for p in self.levels))
        if self.kind == "upper_air" and not self.levels:
            raise InvalidConfig(f"{self.name}: upper-air variable needs pressure levels")
        if self.kind == "surface" and self.levels:
            raise InvalidConfig(f"{self.name}: surface variable cannot have levels")
        if self.loss_weight is None:
            w = SURFACE_WEIGHTS.get(self.name.lower(), 1.0) if self.kind == "surface" else 1.0
            object.__setattr__(self, "loss_weight", w)
        if not (self.loss_weight >= 0 and math.isfinite(self.loss_weight)):
            raise InvalidConfig(f"{self.name}: loss weight must be >= 0")
        s = self.inv_variance
        if isinstance(s, (list, tuple)):
            s = tuple(float(x) for x in s)
            if len(s) != self.n_columns:
                raise InvalidConfig(f"{self.name}: expected {self.n_columns} inverse variances, got {len(s)}")
            object.__setattr__(self, "inv_variance", s)
        vals = s if isinstance(s, tuple) else (s,)
        if any(not (v > 0 and math.isfinite(v)) for v in vals):
            raise InvalidConfig(f"{self.name}: inverse variance must be > 0")

    @property
    def n_columns(self) -> int:
        return len(self.levels) if self.kind == "upper_air" else 1

    def column_names(self) -> list[str]:
        if self.kind == "surface":
            return [self.name]
        return [f"{self.name}{p:g}" for p in self.levels]

    def sub_weights(self) -> np.ndarray:
        if self.kind == "surface":
            return np.ones(1)
        return level_weights(self.levels)

    def inv_variances(self) -> np.ndarray:
        s = self.inv_variance
        return np.asarray(s if isinstance(s, tuple) else [s] * self.n_columns, dtype=np.float64)

    @classmethod
    def from_dict(cls, d: Mapping) -> "VariableSpec":
        d = dict(d)
        if "sigma" in d:
            sig = d.pop("sigma")
            sig = sig if isinstance(sig, (list, tuple)) else [sig]
            inv = tuple(1.0 / (float(x) ** 2) for x in sig)
            d["inv_variance"] = inv if len(inv) > 1 else inv[0]
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.levels:
            out["levels"] = list(self.levels)
        out["loss_weight"] = self.loss_weight
        s = self.inv_variance
        out["inv_variance"] = list(s) if isinstance(s, tuple) else s
        return out


@dataclass(frozen=True)
class EvalConfig:
    variables: tuple[VariableSpec, ...]
    lead_time_hours: int = LEAD_TIME_HOURS

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        if not self.variables:
            raise InvalidConfig("at least one variable is required")
        if self.lead_time_hours != LEAD_TIME_HOURS:
            raise InvalidConfig(f"only {LEAD_TIME_HOURS} h lead time is supported")
        names = self.column_names()
        if len(set(names)) != len(names):
            raise InvalidConfig("duplicate variable/level columns")
        if not self.total_weight > 0:
            raise InvalidConfig("sum of variable loss weights must be > 0")

    @property
    def total_weight(self) -> float:
        return kernels.exact_sum([v.loss_weight for v in self.variables])

    @property
    def n_columns(self) -> int:
        return sum(v.n_columns for v in self.variables)

    def column_names(self) -> list[str]:
        return [c for v in self.variables for c in v.column_names()]

    def column_coefficients(self) -> np.ndarray:
        """s_j * (w_j / W) * level sub-weight for every column."""
        W = self.total_weight
        parts = [v.inv_variances() * ((v.loss_weight / W) * v.sub_weights()) for v in self.variables]
        return np.concatenate(parts)

    def column_index(self, key: int | str) -> int:
        names = self.column_names()
        if isinstance(key, str):
            if key in names:
                return names.index(key)
            raise UnknownVariable(f"unknown variable {key!r}")
        if isinstance(key, (int, np.integer)) and 0 <= key < len(names):
            return int(key)
        raise UnknownVariable(f"variable index {key} out of range")

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalConfig":
        return cls(
            tuple(VariableSpec.from_dict(v) for v in d.get("variables", [])),
            d.get("lead_time_hours", LEAD_TIME_HOURS),
        )

    def to_dict(self) -> dict:
        return {"lead_time_hours": self.lead_time_hours, "variables": [v.to_dict() for v in self.variables]}


@dataclass(frozen=True)
class AreaWeights:
    a: np.ndarray
    lat_count: int = 0
    lon_count: int = 0

    def __len__(self):
        return self.a.shape[0]


def latitude_centers(lat_count: int) -> np.ndarray:
    """Cell-center latitudes, north to south.

    Odd counts place centers on both poles (e.g. 721 rows at 0.25 deg);
    even counts use offset centers.
    """
    if lat_count < 2:
        raise InvalidGrid(f"need at least 2 latitude rows, got {lat_count}")
    if lat_count % 2:
        return np.linspace(90.0, -90.0, lat_count)
    step = 180.0 / lat_count
    return 90.0 - step * (np.arange(lat_count) + 0.5)


def area_weights_from_latitudes(lats, lon_count: int = 1) -> AreaWeights:
    lats = np.asarray(lats, dtype=np.float64)
    if lats.ndim != 1 or lats.size == 0 or lon_count < 1:
        raise InvalidGrid("need a non-empty latitude vector and lon_count >= 1")
    if np.any(np.abs(lats) > 90) or not np.all(np.isfinite(lats)):
        raise InvalidGrid("latitudes must lie in [-90, 90]")
    c = np.cos(np.deg2rad(lats))
    c[np.abs(lats) == 90.0] = 0.0
    if not np.any(c > 0):
        raise InvalidGrid("all cells have zero area")
    c = c / (kernels.exact_sum(c) / c.size)
    return AreaWeights(np.repeat(c, lon_count), lats.size, lon_count)


def area_weights(lat_count: int, lon_count: int) -> AreaWeights:
    """Cosine-latitude cell weights with mean 1, lat-major cell order."""
    if lon_count < 1:
        raise InvalidGrid(f"lon_count must be >= 1, got {lon_count}")
    return area_weights_from_latitudes(latitude_centers(lat_count), lon_count)


@dataclass(frozen=True)
class FieldGrid:
    """Gridded fields, shape (batch, cells, columns); cells are lat-major."""

    values: np.ndarray
    lat_count: int
    lon_count: int
    columns: tuple[str, ...] = field(default=())

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3:
            raise ShapeMismatch(f"field values must be 2-D or 3-D, got {v.ndim}-D")
        if v.shape[1] != self.lat_count * self.lon_count:
            raise ShapeMismatch(
                f"{v.shape[1]} cells != {self.lat_count} x {self.lon_count}"
            )
        if self.columns and len(self.columns) != v.shape[2]:
            raise ShapeMismatch(f"{len(self.columns)} column names for {v.shape[2]} columns")
        if not np.all(np.isfinite(v)):
            raise NonFiniteInput("field contains NaN or Inf")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def batch(self) -> int:
        return self.values.shape[0]

    @property
    def n_cells(self) -> int:
        return self.values.shape[1]

    @property
    def n_columns(self) -> int:
        return self.values.shape[2]


def _check_pair(pred: FieldGrid, truth: FieldGrid, weights: AreaWeights):
    if pred.values.shape != truth.values.shape:
        raise ShapeMismatch(f"prediction {pred.values.shape} vs truth {truth.values.shape}")
    if (pred.lat_count, pred.lon_count) != (truth.lat_count, truth.lon_count):
        raise ShapeMismatch("prediction and truth grids differ")
    if pred.columns and truth.columns and pred.columns != truth.columns:
        raise ShapeMismatch("prediction and truth variable lists differ")
    if len(weights) != pred.n_cells:
        raise ShapeMismatch(f"{len(weights)} area weights for {pred.n_cells} cells")


def _column_sums(pred: FieldGrid, truth: FieldGrid, weights: AreaWeights, threads: int) -> np.ndarray:
    """(batch, columns) exact sums of a_i * err**2 over cells."""

    def one(b):
        return kernels.weighted_sq_column_sums(pred.values[b], truth.values[b], weights.a)

    try:
        if threads > 1 and pred.batch > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows = list(pool.map(one, range(pred.batch)))
        else:
            rows = [one(b) for b in range(pred.batch)]
    except OverflowError as exc:
        raise NonFiniteInput(f"squared error overflows: {exc}") from None
    return np.stack(rows)


def weighted_mse(pred: FieldGrid, truth: FieldGrid, weights: AreaWeights, cfg: EvalConfig, threads: int = 1) -> float:
    """Unified validation loss: batch mean of cell-mean sum_j s_j (w_j/W) a_i err^2."""
    _check_pair(pred, truth, weights)
    if pred.n_columns != cfg.n_columns:
        raise ShapeMismatch(f"{pred.n_columns} field columns, config describes {cfg.n_columns}")
    if pred.columns and list(pred.columns) != cfg.column_names():
        raise ShapeMismatch("field columns do not match the variable config order")
    sums = _column_sums(pred, truth, weights, threads)
    coef = cfg.column_coefficients()
    G = float(pred.n_cells)
    per_batch = [kernels.exact_sum(coef * row) / G for row in sums]
    return kernels.exact_sum(per_batch) / float(len(per_batch))


def per_variable_mse(pred: FieldGrid, truth: FieldGrid, weights: AreaWeights, j: int | str, cfg: EvalConfig | None = None) -> float:
    """Area-weighted MSE of one variable-level column, without s_j or w_j."""
    _check_pair(pred, truth, weights)
    if isinstance(j, str):
        names = cfg.column_names() if cfg is not None else list(pred.columns)
        if j not in names:
            raise UnknownVariable(f"unknown variable {j!r}")
        j = names.index(j)
    if not (0 <= j < pred.n_columns):
        raise UnknownVariable(f"variable index {j} out of range")
    p = FieldGrid(pred.values[:, :, j : j + 1], pred.lat_count, pred.lon_count)
    t = FieldGrid(truth.values[:, :, j : j + 1], truth.lat_count, truth.lon_count)
    sums = _column_sums(p, t, weights, 1)[:, 0]
    G = float(pred.n_cells)
    return kernels.exact_sum(sums / G) / float(len(sums))


def per_variable_rmse(pred, truth, weights, j, cfg=None) -> float:
    return math.sqrt(per_variable_mse(pred, truth, weights, j, cfg))


@dataclass(frozen=True)
class EnsembleSample:
    members: tuple[float, ...]
    observation: float

    def __post_init__(self):
        m = tuple(float(x) for x in self.members)
        if not m:
            raise EmptyEnsemble("ensemble has no members")
        if not all(math.isfinite(x) for x in m) or not math.isfinite(self.observation):
            raise NonFiniteInput("ensemble values must be finite")
        object.__setattr__(self, "members", m)


def _as_sample(sample, observation) -> EnsembleSample:
    if isinstance(sample, EnsembleSample):
        return sample
    return EnsembleSample(tuple(np.asarray(sample, dtype=np.float64).ravel().tolist()), float(observation))


def crps_ensemble(sample, observation: float | None = None, fair: bool = False) -> float:
    """Ensemble CRPS: mean |x_i - x| minus half the mean pairwise |x_i - x_j|.

    The default divides the pair sum by 2N^2; ``fair=True`` uses 2N(N-1).
    A single member gives the absolute error.
    """
    s = _as_sample(sample, observation)
    X = np.asarray(s.members, dtype=np.float64)[None, :]
    return float(kernels.crps_ensemble_rows(X, np.array([s.observation]), fair)[0])


def crps_integral_oracle(sample, observation: float | None = None, integration_step: float = 1e-4) -> float:
    """Quadrature of the CDF definition of CRPS (test oracle)."""
    s = _as_sample(sample, observation)
    if not integration_step > 0:
        raise InvalidConfig("integration step must be > 0")
    return kernels.crps_quadrature(np.asarray(s.members), s.observation, float(integration_step))


def crps_field(ensemble: np.ndarray, truth: FieldGrid, weights: AreaWeights, fair: bool = False) -> np.ndarray:
    """Area-weighted mean CRPS per column.

    ``ensemble`` has shape (members, batch, cells, columns); the result is
    the batch mean of (1/G) sum_i a_i CRPS_ij for each column j.
    """
    E = np.asarray(ensemble, dtype=np.float64)
    if E.ndim == 3:
        E = E[:, None]
    if E.ndim != 4 or E.shape[1:] != truth.values.shape:
        raise ShapeMismatch(f"ensemble {E.shape} does not match truth {truth.values.shape}")
    if E.shape[0] < 1:
        raise EmptyEnsemble("ensemble has no members")
    if not np.all(np.isfinite(E)):
        raise NonFiniteInput("ensemble contains NaN or Inf")
    if len(weights) != truth.n_cells:
        raise ShapeMismatch(f"{len(weights)} area weights for {truth.n_cells} cells")
    M, B, G, J = E.shape
    rows = np.moveaxis(E, 0, -1).reshape(-1, M)
    scores = kernels.crps_ensemble_rows(rows, truth.values.reshape(-1), fair).reshape(B, G, J)
    out = np.empty(J)
    for j in range(J):
        per_batch = [kernels.exact_sum(weights.a * scores[b, :, j]) / float(G) for b in range(B)]
        out[j] = kernels.exact_sum(per_batch) / float(B)
    return out
