"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on the same inputs under both backends; the script checks
the outputs are bit-identical and prints the best wall time of each.
"""

import argparse
import time

import numpy as np

from wxscale import _pykernels

try:
    from wxscale import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(rng):
    # one 0.25 deg-ish slab of cells with a handful of columns
    pred = rng.normal(size=(181 * 360, 8))
    truth = rng.normal(size=pred.shape)
    area = rng.uniform(0, 2, size=pred.shape[0])
    members = rng.normal(size=(20_000, 16))
    obs = rng.normal(size=20_000)
    flat = rng.normal(size=1_000_000) * 10.0 ** rng.integers(-8, 8, size=1_000_000)
    return [
        ("exact_sum (1e6 values)", lambda k: k.exact_sum(flat)),
        ("weighted_sq_column_sums (65k x 8)", lambda k: k.weighted_sq_column_sums(pred, truth, area)),
        ("crps_ensemble_rows (20k x 16)", lambda k: k.crps_ensemble_rows(members, obs, False)),
        ("crps_quadrature (step 1e-4)", lambda k: k.crps_quadrature(members[0], float(obs[0]), 1e-4)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'kernel':<38}{'cython s':>11}{'python s':>11}{'speedup':>9}  same bits")
    for name, fn in cases(np.random.default_rng(args.seed)):
        tc, oc = best_of(lambda: fn(_kernels), args.repeat)
        tp, op = best_of(lambda: fn(_pykernels), args.repeat)
        same = np.asarray(oc).tobytes() == np.asarray(op).tobytes()
        print(f"{name:<38}{tc:>11.4f}{tp:>11.4f}{tp / tc:>8.1f}x  {'yes' if same else 'NO'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
