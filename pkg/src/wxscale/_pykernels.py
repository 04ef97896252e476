"""Pure numpy/stdlib versions of the compiled kernels.

Same contracts and the same bits as ``wxscale._kernels``: every reduction
goes through ``math.fsum``, which is correctly rounded, and the elementwise
arithmetic follows the same operation order as the compiled loops.
"""

from __future__ import annotations

import math

import numpy as np


def exact_sum(values) -> float:
    v = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise OverflowError("non-finite value in exact sum")
    r = math.fsum(v.tolist())
    if not math.isfinite(r):
        raise OverflowError("non-finite value in exact sum")
    return r


def weighted_sq_column_sums(pred, truth, area) -> np.ndarray:
    P = np.ascontiguousarray(pred, dtype=np.float64)
    T = np.ascontiguousarray(truth, dtype=np.float64)
    A = np.ascontiguousarray(area, dtype=np.float64)
    if P.ndim != 2 or P.shape != T.shape or A.shape != (P.shape[0],):
        raise ValueError("shape mismatch")
    d = P - T
    terms = A[:, None] * (d * d)
    out = np.empty(P.shape[1], dtype=np.float64)
    for j in range(P.shape[1]):
        out[j] = exact_sum(terms[:, j])
    return out


def crps_ensemble_rows(members, obs, fair: bool = False) -> np.ndarray:
    X = np.ascontiguousarray(members, dtype=np.float64)
    O = np.ascontiguousarray(obs, dtype=np.float64)
    if X.ndim != 2 or O.shape != (X.shape[0],):
        raise ValueError("shape mismatch")
    S, N = X.shape
    if N < 1:
        raise ValueError("empty ensemble")
    pair_div = float(2 * N * (N - 1)) if fair and N > 1 else float(2 * N * N)
    out = np.empty(S, dtype=np.float64)
    for s in range(S):
        x = X[s]
        t1 = math.fsum(np.abs(x - O[s]).tolist()) / float(N)
        t2 = math.fsum(np.abs(x[:, None] - x[None, :]).ravel().tolist()) / pair_div
        r = t1 - t2
        out[s] = r if r > 0.0 else 0.0
    return out


def crps_quadrature(members, obs: float, step: float) -> float:
    srt = np.sort(np.ascontiguousarray(members, dtype=np.float64).ravel())
    n = srt.shape[0]
    if n < 1:
        raise ValueError("empty ensemble")
    pts = np.unique(np.concatenate([srt, [obs]]))
    edges = np.concatenate([[pts[0] - 1.0], pts, [pts[-1] + 1.0]])
    dn = float(n)
    parts = []
    for k in range(edges.shape[0] - 1):
        a = float(edges[k])
        L = float(edges[k + 1]) - a
        m = max(1, int(math.ceil(L / step)))
        h = L / float(m)
        y = a + (np.arange(m, dtype=np.float64) + 0.5) * h
        F = np.searchsorted(srt, y, side="right").astype(np.float64) / dn
        d = F - (y >= obs).astype(np.float64)
        parts.append((d * d) * h)
    return math.fsum(np.concatenate(parts).tolist())
