"""Seeded synthetic run logs with known ground truth.

* ``power_d``: one model, loss = k * D**(-beta) along its training run.
* ``power_n``: several models at one data volume, loss = k * N**(-beta).
* ``isoflop``: points on L = E + A/N**alpha + B/D**beta with C = kappa*N*D,
  a log-spaced D sweep around the optimum at each budget.
* ``monotone``: one budget swept only on the data-starved side, so the
  loss keeps falling across the whole range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .runstore import RunRecord


@dataclass(frozen=True)
class Surface:
    E: float = 0.2
    A: float = 5.0
    alpha: float = 0.5
    B: float = 3.0
    beta: float = 0.5
    kappa: float = 6.0

    def loss(self, N, D):
        return self.E + self.A * np.power(N, -self.alpha) + self.B * np.power(D, -self.beta)

    def d_opt(self, C: float) -> float:
        # minimize A (kappa D / C)^alpha + B D^-beta over D
        k = self.kappa / C
        return (self.B * self.beta / (self.A * self.alpha * k**self.alpha)) ** (1.0 / (self.alpha + self.beta))


def _noise(rng, n, sigma):
    return np.exp(sigma * rng.standard_normal(n)) if sigma > 0 else np.ones(n)


def power_d(beta=0.51, prefactor=2.0, points=20, lo=100, hi=100_000, noise=0.0, seed=0, params=1_000_000):
    rng = np.random.default_rng(seed)
    D = np.unique(np.round(np.logspace(math.log10(lo), math.log10(hi), points)).astype(np.int64))
    L = prefactor * np.power(D.astype(np.float64), -beta) * _noise(rng, len(D), noise)
    return [
        RunRecord("synth-d", "synth-model", int(d), int(d), 1, float(l), params=params, compute=6 * params * int(d))
        for d, l in zip(D, L)
    ]


def power_n(beta=0.34, prefactor=2.0, points=12, lo=100_000, hi=100_000_000, noise=0.0, seed=0, samples=10_000):
    rng = np.random.default_rng(seed)
    N = np.unique(np.round(np.logspace(math.log10(lo), math.log10(hi), points)).astype(np.int64))
    L = prefactor * np.power(N.astype(np.float64), -beta) * _noise(rng, len(N), noise)
    return [
        RunRecord(f"run-{i}", f"model-{int(n)}", samples, samples, 1, float(l), params=int(n), compute=6 * int(n) * samples)
        for i, (n, l) in enumerate(zip(N, L))
    ]


def isoflop(
    budgets: Sequence[float] = (1e8, 1e10, 1e12),
    points=15,
    span=1.0,
    noise=0.0,
    seed=0,
    surface: Surface = Surface(),
):
    """``points`` log-spaced D per budget within 10**±span of the optimum."""
    rng = np.random.default_rng(seed)
    out = []
    for bi, C in enumerate(budgets):
        D = np.unique(np.round(surface.d_opt(C) * np.logspace(-span, span, points)).astype(np.int64))
        N = C / (surface.kappa * D)
        L = surface.loss(N, D.astype(np.float64)) * _noise(rng, len(D), noise)
        for k, (d, n, l) in enumerate(zip(D, N, L)):
            out.append(
                RunRecord(
                    f"c{bi}-{k}", f"c{bi}-n{max(1, round(n))}", int(d), int(d), 1, float(l),
                    params=max(1, round(n)), compute=float(C),
                )
            )
    return out


def monotone(budget=1e10, points=10, noise=0.0, seed=0, surface: Surface = Surface()):
    """A single budget sampled at 10**-3 .. 10**-1.5 of the optimal D."""
    rng = np.random.default_rng(seed)
    D = np.unique(np.round(surface.d_opt(budget) * np.logspace(-3.0, -1.5, points)).astype(np.int64))
    D = D[D > 0]
    N = budget / (surface.kappa * D)
    L = surface.loss(N, D.astype(np.float64)) * _noise(rng, len(D), noise)
    return [
        RunRecord(f"m-{k}", f"m-n{round(n)}", int(d), int(d), 1, float(l), params=max(1, round(n)), compute=float(budget))
        for k, (d, n, l) in enumerate(zip(D, N, L))
    ]

