"""Power-law and IsoFLOP scaling fits.

Power laws L = k * x**(-e) are fitted by ordinary least squares on
(ln x, ln L). IsoFLOP curves are quadratics of loss in log10(D) per compute
budget; their vertices give the compute-optimal data volume, and the
compute law turns that into an optimal parameter count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateX, InvalidInput, NoValidMinima, TooFewPoints, UnregisteredLaw
from .shapes import ArchitectureId

MIN_POINTS = 3
N_BOOT = 1000
CI_LEVEL = 0.95
BUDGET_TOLERANCE = 0.05

FULL = "full_parabola"
LEFT = "left_half_only"
RIGHT = "right_half_only"
NON_CONVEX = "non_convex"


@dataclass(frozen=True)
class Observation:
    model_id: str
    N: float
    D: float
    C: float
    loss: float
    d_unit: str = "samples"

    def __post_init__(self):
        for name in ("N", "D", "C", "loss"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidInput(f"observation {self.model_id!r}: {name} must be > 0, got {v!r}")


@dataclass(frozen=True)
class PowerLawFit:
    prefactor: float
    exponent: float
    r_squared: float
    n_points: int
    exponent_ci: tuple[float, float] | None = None
    prefactor_ci: tuple[float, float] | None = None
    max_log_residual: float = 0.0

    def predict(self, x):
        return self.prefactor * np.power(np.asarray(x, dtype=np.float64), -self.exponent)

    def to_dict(self) -> dict:
        return {
            "prefactor": self.prefactor,
            "exponent": self.exponent,
            "r_squared": self.r_squared,
            "n_points": self.n_points,
            "exponent_ci": list(self.exponent_ci) if self.exponent_ci else None,
            "prefactor_ci": list(self.prefactor_ci) if self.prefactor_ci else None,
            "max_log_residual": self.max_log_residual,
        }


def _ols(lx: np.ndarray, ly: np.ndarray) -> tuple[float, float]:
    mx, my = lx.mean(), ly.mean()
    dx = lx - mx
    sxx = float(dx @ dx)
    slope = float(dx @ (ly - my)) / sxx
    return slope, float(my - slope * mx)


def _row_slopes(X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """OLS slope and intercept for every row; NaN where a row has no x spread."""
    mx = X.mean(axis=1, keepdims=True)
    my = Y.mean(axis=1, keepdims=True)
    dx = X - mx
    sxx = (dx * dx).sum(axis=1)
    sxy = (dx * (Y - my)).sum(axis=1)
    degenerate = sxx <= 1e-12 * np.maximum(1.0, (X * X).sum(axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(degenerate, np.nan, sxy / np.where(degenerate, 1.0, sxx))
    intercept = my[:, 0] - slope * mx[:, 0]
    return slope, intercept


def _chunked(fn: Callable[[slice], np.ndarray], n: int, threads: int) -> list:
    if threads <= 1 or n < 2:
        return [fn(slice(0, n))]
    bounds = np.linspace(0, n, min(threads, n) + 1).astype(int)
    slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=len(slices)) as pool:
        return list(pool.map(fn, slices))


def _percentile_ci(samples: np.ndarray, level: float) -> tuple[float, float] | None:
    s = samples[np.isfinite(samples)]
    if s.size == 0:
        return None
    tail = 50.0 * (1.0 - level)
    lo, hi = np.percentile(s, [tail, 100.0 - tail])
    return float(lo), float(hi)


def fit_power_law(
    points: Iterable[tuple[float, float]],
    *,
    min_points: int = MIN_POINTS,
    n_boot: int = N_BOOT,
    seed: int = 0,
    ci_level: float = CI_LEVEL,
    threads: int = 1,
) -> PowerLawFit:
    """Fit loss = prefactor * x**(-exponent) by OLS in log-log space.

    The exponent and prefactor intervals are percentile bootstrap intervals
    over ``n_boot`` resamples of the points (seeded, bit-reproducible for
    any ``threads``). ``n_boot=0`` skips the bootstrap.
    """
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < max(2, min_points):
        raise TooFewPoints(f"need at least {max(2, min_points)} points, got {len(pts)}")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(x > 0) and np.all(y > 0)):
        raise InvalidInput("power-law points must be positive and finite")
    lx, ly = np.log(x), np.log(y)
    if np.all(lx == lx[0]):
        raise DegenerateX("all x values are equal")
    slope, intercept = _ols(lx, ly)
    resid = ly - (intercept + slope * lx)
    ss_res = float(resid @ resid)
    dy = ly - ly.mean()
    ss_tot = float(dy @ dy)
    r2 = 1.0 if ss_tot == 0.0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))

    exp_ci = pre_ci = None
    if n_boot > 0:
        n = len(pts)
        idx = np.random.default_rng(seed).integers(0, n, size=(n_boot, n))

        def work(sl):
            s, c = _row_slopes(lx[idx[sl]], ly[idx[sl]])
            return np.stack([s, c])

        parts = np.concatenate(_chunked(work, n_boot, threads), axis=1)
        exp_ci = _percentile_ci(-parts[0], ci_level)
        pre_ci = _percentile_ci(np.exp(parts[1]), ci_level)

    return PowerLawFit(
        prefactor=math.exp(intercept),
        exponent=-slope,
        r_squared=r2,
        n_points=len(pts),
        exponent_ci=exp_ci,
        prefactor_ci=pre_ci,
        max_log_residual=float(np.max(np.abs(resid))),
    )


# -- compute laws ---------------------------------------------------------------


@dataclass(frozen=True)
class ComputeLaw:
    """Inverse compute law N = C / (kappa * D_eff).

    ``patched``: transformers on patch tokens, C ~ 6 N D / p^2, so
    D_eff = D / p^2. ``graph``: mesh/graph backbones where C ~ N * B per
    step, D_eff = D (samples seen = batch * steps).
    """

    kind: str
    kappa: float = 6.0
    patch: int = 1

    def __post_init__(self):
        if self.kind not in ("patched", "graph"):
            raise UnregisteredLaw(f"unknown compute law {self.kind!r}")
        if not self.kappa > 0 or self.patch < 1:
            raise InvalidInput("compute law needs kappa > 0 and patch >= 1")

    def effective_data(self, D: float) -> float:
        return D / (self.patch * self.patch) if self.kind == "patched" else D

    def params_for(self, C: float, D: float) -> float:
        return C / (self.kappa * self.effective_data(D))

    def compute_for(self, N: float, D: float) -> float:
        return self.kappa * N * self.effective_data(D)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "kappa": self.kappa, "patch": self.patch}


_LAW_KIND = {
    ArchitectureId.AURORA: "patched",
    ArchitectureId.PANGU: "patched",
    ArchitectureId.SFNO: "patched",
    ArchitectureId.GRAPHCAST: "graph",
    ArchitectureId.AIFS: "graph",
}


def compute_law(arch: "ArchitectureId | str", patch: int | None = None, kappa: float = 6.0) -> ComputeLaw:
    """The compute law registered for an architecture.

    Aurora and Pangu default to patch size 4; SFNO has no patching (p = 1).
    """
    if isinstance(arch, str) and arch in ("patched", "graph"):
        return ComputeLaw(arch, kappa, patch or 1)
    try:
        a = ArchitectureId.parse(arch)
    except Exception:
        raise UnregisteredLaw(f"no compute law registered for {arch!r}") from None
    kind = _LAW_KIND.get(a)
    if kind is None:
        raise UnregisteredLaw(f"no compute law registered for {a.label}")
    if kind == "patched":
        default_p = 4 if a in (ArchitectureId.AURORA, ArchitectureId.PANGU) else 1
        return ComputeLaw(kind, kappa, patch or default_p)
    return ComputeLaw(kind, kappa, 1)


# -- IsoFLOP --------------------------------------------------------------------


@dataclass(frozen=True)
class IsoFlopCurve:
    budget: float
    points: tuple[tuple[float, float], ...]
    coeffs: tuple[float, float, float]
    shape_flag: str
    minimum: tuple[float, float] | None = None
    n_opt: float | None = None

    def predict(self, D):
        q2, q1, q0 = self.coeffs
        u = np.log10(np.asarray(D, dtype=np.float64))
        return (q2 * u + q1) * u + q0

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "n_points": len(self.points),
            "coeffs": list(self.coeffs),
            "shape_flag": self.shape_flag,
            "D_opt": self.minimum[0] if self.minimum else None,
            "loss_min": self.minimum[1] if self.minimum else None,
            "N_opt": self.n_opt,
        }


@dataclass(frozen=True)
class IsoFlopFrontier:
    curves: tuple[IsoFlopCurve, ...]
    law: ComputeLaw
    a: float | None = None
    b: float | None = None
    sum_ab: float | None = None
    a_ci: tuple[float, float] | None = None
    b_ci: tuple[float, float] | None = None
    sum_ab_ci: tuple[float, float] | None = None
    notes: tuple[str, ...] = field(default=())

    @property
    def valid_curves(self) -> list[IsoFlopCurve]:
        return [c for c in self.curves if c.minimum is not None]

    def to_dict(self) -> dict:
        ci = lambda v: list(v) if v else None  # noqa: E731
        return {
            "law": self.law.to_dict(),
            "curves": [c.to_dict() for c in self.curves],
            "a": self.a,
            "b": self.b,
            "sum_ab": self.sum_ab,
            "a_ci": ci(self.a_ci),
            "b_ci": ci(self.b_ci),
            "sum_ab_ci": ci(self.sum_ab_ci),
            "notes": list(self.notes),
        }


def fit_parabola(u: np.ndarray, loss: np.ndarray) -> tuple[float, float, float]:
    """Least-squares (q2, q1, q0) of loss = q2 u^2 + q1 u + q0."""
    c = float(u.mean())
    s = float(np.abs(u - c).max()) or 1.0
    t = (u - c) / s
    A = np.stack([t * t, t, np.ones_like(t)], axis=1)
    (p2, p1, p0), *_ = np.linalg.lstsq(A, loss, rcond=None)
    # expand back from the centred/scaled variable
    q2 = p2 / (s * s)
    q1 = p1 / s - 2.0 * p2 * c / (s * s)
    q0 = p0 - p1 * c / s + p2 * c * c / (s * s)
    return float(q2), float(q1), float(q0)


def _classify(u: np.ndarray, q2: float, q1: float, q0: float):
    if not q2 > 0:
        return NON_CONVEX, None
    vert = -q1 / (2.0 * q2)
    if vert > u.max():
        return LEFT, None
    if vert < u.min():
        return RIGHT, None
    return FULL, (10.0**vert, q0 - q1 * q1 / (4.0 * q2))


def fit_isoflop_curve(
    budget: float,
    points: Sequence[tuple[float, float]],
    law: ComputeLaw | None = None,
    min_points: int = MIN_POINTS,
) -> IsoFlopCurve:
    """Fit one fixed-budget curve of (D, loss) points."""
    pts = tuple(sorted((float(d), float(l)) for d, l in points))
    if len(pts) < min_points:
        raise TooFewPoints(f"budget {budget:.4g}: need {min_points} points, got {len(pts)}")
    D = np.array([p[0] for p in pts])
    loss = np.array([p[1] for p in pts])
    u = np.log10(D)
    if np.all(u == u[0]):
        raise DegenerateX(f"budget {budget:.4g}: all D values are equal")
    q2, q1, q0 = fit_parabola(u, loss)
    flag, minimum = _classify(u, q2, q1, q0)
    n_opt = law.params_for(budget, minimum[0]) if (minimum and law) else None
    return IsoFlopCurve(float(budget), pts, (q2, q1, q0), flag, minimum, n_opt)


def bucket_by(values: Sequence[float], tolerance: float = BUDGET_TOLERANCE) -> list[list[int]]:
    """Group indices whose values agree with the group's smallest within ``tolerance``."""
    if not tolerance >= 0:
        raise InvalidInput("tolerance must be >= 0")
    order = sorted(range(len(values)), key=lambda i: (values[i], i))
    groups: list[list[int]] = []
    anchor = None
    for i in order:
        if anchor is None or values[i] > anchor * (1.0 + tolerance):
            groups.append([i])
            anchor = values[i]
        else:
            groups[-1].append(i)
    return groups


def _geomean(vals: Sequence[float]) -> float:
    if len(set(vals)) == 1:
        return float(vals[0])
    return float(math.exp(math.fsum(math.log(v) for v in vals) / len(vals)))


def _loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    return _ols(np.log(np.asarray(x, dtype=np.float64)), np.log(np.asarray(y, dtype=np.float64)))[0]


def fit_isoflop(
    observations: Sequence[Observation],
    budget_tolerance: float = BUDGET_TOLERANCE,
    law: ComputeLaw | None = None,
    *,
    min_points: int = MIN_POINTS,
    n_boot: int = N_BOOT,
    seed: int = 0,
    ci_level: float = CI_LEVEL,
    threads: int = 1,
) -> IsoFlopFrontier:
    """IsoFLOP analysis: parabola per budget bucket, then N_opt ~ C^a, D_opt ~ C^b.

    Buckets with fewer than ``min_points`` observations are skipped. The
    exponents need at least two curves with an interior minimum; otherwise
    they are left as ``None``. Raises :class:`NoValidMinima` (carrying the
    flagged frontier) when no curve has a minimum at all.
    """
    law = law or ComputeLaw("patched")
    obs = list(observations)
    if not obs:
        raise TooFewPoints("no observations")
    groups = bucket_by([o.C for o in obs], budget_tolerance)
    curves = []
    notes = []
    for g in groups:
        members = [obs[i] for i in g]
        budget = _geomean([o.C for o in members])
        if len(members) < min_points:
            notes.append(f"budget {budget:.6g} skipped: {len(members)} points < {min_points}")
            continue
        curves.append(fit_isoflop_curve(budget, [(o.D, o.loss) for o in members], law, min_points))
    if not curves:
        raise TooFewPoints("no budget bucket has enough points for a parabola")
    frontier = IsoFlopFrontier(tuple(curves), law, notes=tuple(notes))
    valid = frontier.valid_curves
    if not valid:
        raise NoValidMinima(frontier)
    if len(valid) < 2:
        return IsoFlopFrontier(
            tuple(curves), law, notes=tuple(notes) + ("fewer than two curves with a minimum; exponents not fitted",)
        )
    C = [c.budget for c in valid]
    a = _loglog_slope(C, [c.n_opt for c in valid])
    b = _loglog_slope(C, [c.minimum[0] for c in valid])

    a_ci = b_ci = s_ci = None
    if n_boot > 0:
        a_ci, b_ci, s_ci = _isoflop_bootstrap(valid, law, n_boot, seed, ci_level, threads, min_points)
    return IsoFlopFrontier(tuple(curves), law, a, b, a + b, a_ci, b_ci, s_ci, tuple(notes))


def _isoflop_bootstrap(valid, law, n_boot, seed, level, threads, min_points):
    rng = np.random.default_rng(seed)
    data = []
    for c in valid:
        D = np.array([p[0] for p in c.points])
        L = np.array([p[1] for p in c.points])
        data.append((c.budget, np.log10(D), L, rng.integers(0, len(D), size=(n_boot, len(D)))))

    def work(sl):
        out = np.full((sl.stop - sl.start, 2), np.nan)
        for r, k in enumerate(range(sl.start, sl.stop)):
            Cs, Ns, Ds = [], [], []
            for budget, u, L, idx in data:
                ui, Li = u[idx[k]], L[idx[k]]
                if np.unique(ui).size < min_points:
                    break
                q = fit_parabola(ui, Li)
                flag, m = _classify(ui, *q)
                if m is None:
                    break
                Cs.append(budget)
                Ds.append(m[0])
                Ns.append(law.params_for(budget, m[0]))
            else:
                out[r] = (_loglog_slope(Cs, Ns), _loglog_slope(Cs, Ds))
        return out

    res = np.concatenate(_chunked(work, n_boot, threads), axis=0)
    return (
        _percentile_ci(res[:, 0], level),
        _percentile_ci(res[:, 1], level),
        _percentile_ci(res[:, 0] + res[:, 1], level),
    )


# -- parameter scaling at fixed D -------------------------------------------------


@dataclass(frozen=True)
class GroupFit:
    key: float
    fit: PowerLawFit
    model_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"group": self.key, "models": list(self.model_ids), **self.fit.to_dict()}


def fit_model_scaling(
    observations: Sequence[Observation],
    d_tolerance: float = BUDGET_TOLERANCE,
    **fit_kwargs,
) -> list[GroupFit]:
    """One L(N) power law per group of observations at (approximately) equal D."""
    obs = list(observations)
    groups = bucket_by([o.D for o in obs], d_tolerance)
    fits = []
    for g in groups:
        members = [obs[i] for i in g]
        if len({o.N for o in members}) < fit_kwargs.get("min_points", MIN_POINTS):
            raise TooFewPoints(
                f"D group {_geomean([o.D for o in members]):.6g} has "
                f"{len({o.N for o in members})} distinct N"
            )
        fit = fit_power_law([(o.N, o.loss) for o in members], **fit_kwargs)
        fits.append(GroupFit(_geomean([o.D for o in members]), fit, tuple(o.model_id for o in members)))
    return fits


def fit_data_scaling(observations: Sequence[Observation], **fit_kwargs) -> list[tuple[str, PowerLawFit]]:
    """One L(D) power law per model, in first-seen model order."""
    by_model: dict[str, list[Observation]] = {}
    for o in observations:
        by_model.setdefault(o.model_id, []).append(o)
    return [(m, fit_power_law([(o.D, o.loss) for o in obs], **fit_kwargs)) for m, obs in by_model.items()]
