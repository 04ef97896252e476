"""``wxscale`` command-line front end.

Exit codes: 0 success, 2 invalid input, 3 not enough data for a fit.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__, synth
from .cost_models import flops, format_millions, lookup_param_count, param_count_graphcast, sig3, utilization
from .errors import InsufficientData, InvalidConfig, NoValidMinima, TooFewPoints, ValidationError, WxScaleError
from .metrics import EvalConfig, VariableSpec, area_weights, crps_field, per_variable_rmse, weighted_mse
from .report import Report, file_digest
from .runstore import attach_compute, load_runlog, to_observations, write_runlog
from .scaling_fit import (
    BUDGET_TOLERANCE,
    CI_LEVEL,
    MIN_POINTS,
    N_BOOT,
    compute_law,
    fit_data_scaling,
    fit_isoflop,
    fit_model_scaling,
)
from .shapes import (
    REGISTRY_ENV,
    ArchitectureId,
    CostOptions,
    ModelShape,
    ShapeRegistry,
    load_defaults,
    parse_config,
    parse_depth,
)
from .tensorio import read_field, read_grid


# -- helpers ------------------------------------------------------------------------


def _shape_from_args(args) -> ModelShape:
    if args.arch is None or args.width is None or args.depth is None:
        raise InvalidConfig("--arch, --width and --depth are required")
    return ModelShape(
        ArchitectureId.parse(args.arch),
        args.width,
        parse_depth(args.depth),
        heads=args.heads,
        mlp_ratio=args.mlp_ratio,
    )


def _shape_args(p):
    p.add_argument("--arch", help="graphcast, aurora, pangu, sfno or aifs")
    p.add_argument("--width", type=int)
    p.add_argument("--depth", help="an integer, or a comma list for staged models (e.g. 3,5,4)")
    p.add_argument("--heads", type=int)
    p.add_argument("--mlp-ratio", type=int, default=4)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: {exc}") from None


def _registry(args) -> ShapeRegistry:
    return ShapeRegistry.load(args.registry)


def _registry_digest(args):
    path = args.registry or os.environ.get(REGISTRY_ENV)
    return file_digest(path) if path else "bundled"


def _kv(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise InvalidConfig(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


# -- verbs --------------------------------------------------------------------------


def cmd_params(args) -> Report:
    if args.arch is None:
        reg = _registry(args)
        rows = [
            {**r.shape.to_dict(), "params": r.params, "params_millions": format_millions(r.params)} for r in reg
        ]
        body = {"source": "registry", "rows": rows}
        return Report.build("params", {"verb": "params", "registry": _registry_digest(args)}, body, rows)
    shape = _shape_from_args(args)
    if shape.arch is ArchitectureId.GRAPHCAST:
        n, source = param_count_graphcast(shape.width, shape.depth), "formula"
        inputs = {"verb": "params", "shape": shape.to_dict()}
    else:
        n, source = lookup_param_count(shape, _registry(args)), "registry"
        inputs = {"verb": "params", "shape": shape.to_dict(), "registry": _registry_digest(args)}
    body = {"shape": shape.to_dict(), "source": source, "params": n, "params_millions": format_millions(n)}
    row = {"arch": shape.arch.value, "width": shape.width, "depth": str(shape.depth), "params": n}
    return Report.build("params", inputs, body, [row])


def cmd_flops(args) -> Report:
    shape = _shape_from_args(args)
    grids, options = load_defaults()
    doc = {}
    if args.config:
        doc = _read_json(args.config)
        grids, options = parse_config(doc, grids)
    overrides = _kv(args.grid)
    if overrides:
        grids = {a: g.updated(**overrides) for a, g in grids.items()}
    opt_over = _kv(args.option)
    if args.alpha is not None:
        opt_over["alpha"] = args.alpha
    if args.skip:
        opt_over["skip"] = True
    if opt_over:
        options = CostOptions.from_dict({**options.to_dict(), **opt_over})
    grid = grids[shape.arch]
    fb = flops(shape, grid, options)
    body = {"shape": shape.to_dict(), "grid": grid.to_dict(), "options": options.to_dict(), **fb.to_dict()}
    inputs = {"verb": "flops", "shape": shape.to_dict(), "grid": grid.to_dict(), "options": options.to_dict()}
    rows = [{"component": k, "forward_flops": v, "train_flops": 3 * v} for k, v in fb.components]
    rows.append({"component": "total", "forward_flops": fb.forward_total, "train_flops": fb.train_total})
    return Report.build("flops", inputs, body, rows)


def _filter_records(records, args):
    applied = []
    if args.model:
        records = [r for r in records if r.model_id in args.model]
        applied.append(f"model in {args.model}")
    if args.run:
        records = [r for r in records if r.run_id in args.run]
        applied.append(f"run in {args.run}")
    if args.filter_arch:
        a = ArchitectureId.parse(args.filter_arch)
        records = [r for r in records if r.shape is not None and r.shape.arch is a]
        applied.append(f"arch = {a.value}")
    if args.min_step is not None:
        records = [r for r in records if r.step >= args.min_step]
        applied.append(f"step >= {args.min_step}")
    if args.last_only:
        last = {}
        for r in records:
            last[r.run_id] = r
        records = list(last.values())
        applied.append("last record per run")
    return records, applied


def cmd_fit(args) -> Report:
    log = load_runlog(args.runlog)
    records, applied = _filter_records(log.records, args)
    need = [r for r in records if r.compute is None]
    if need:
        records = attach_compute(records)
    reg = _registry(args) if any(r.params is None for r in records) else None
    obs = to_observations(records, args.x_unit, reg, log.sample_size)
    fit_kw = dict(min_points=args.min_points, n_boot=args.n_boot, seed=args.seed, ci_level=args.ci_level,
                  threads=args.threads)
    inputs = {
        "verb": "fit",
        "mode": args.mode,
        "runlog": file_digest(args.runlog),
        "filters": applied,
        "x_unit": args.x_unit,
        "fit": {k: v for k, v in fit_kw.items() if k != "threads"},
    }
    where = f" (after filters: {', '.join(applied)})" if applied else ""
    try:
        if args.mode == "power-D":
            fits = fit_data_scaling(obs, **fit_kw)
            body = {"mode": args.mode, "x": "D", "x_unit": args.x_unit,
                    "fits": [{"model": m, **f.to_dict()} for m, f in fits]}
            table = []
            by_model = {m: f for m, f in fits}
            for o in obs:
                table.append({"model": o.model_id, "x": o.D, "loss": o.loss,
                              "fitted_loss": float(by_model[o.model_id].predict(o.D))})
            return Report.build("fit_power", inputs, body, table)
        if args.mode == "power-N":
            inputs["d_tolerance"] = args.d_tolerance
            groups = fit_model_scaling(obs, args.d_tolerance, **fit_kw)
            body = {"mode": args.mode, "x": "N", "group_by": f"D ({args.x_unit})",
                    "fits": [g.to_dict() for g in groups]}
            table = []
            for g in groups:
                for o in obs:
                    if o.model_id in g.model_ids and abs(o.D / g.key - 1) <= args.d_tolerance:
                        table.append({"group_D": g.key, "x": o.N, "loss": o.loss,
                                      "fitted_loss": float(g.fit.predict(o.N))})
            return Report.build("fit_power", inputs, body, table)
        law = compute_law(args.law, args.patch, args.kappa)
        inputs.update(law=law.to_dict(), budget_tolerance=args.budget_tolerance)
        try:
            frontier = fit_isoflop(obs, args.budget_tolerance, law, **fit_kw)
            failed = None
        except NoValidMinima as exc:
            frontier, failed = exc.frontier, exc
        table = []
        for c in frontier.curves:
            for d, l in c.points:
                table.append({"budget": c.budget, "x": d, "loss": l, "fitted_loss": float(c.predict(d))})
        body = {"mode": args.mode, **frontier.to_dict()}
        rep = Report.build("fit_isoflop", inputs, body, table)
        if failed is not None:
            raise _ReportedFailure(rep, failed)
        return rep
    except TooFewPoints as exc:
        raise TooFewPoints(f"{exc}{where}") from None


class _ReportedFailure(Exception):
    """A report that must still be printed before exiting non-zero."""

    def __init__(self, report, error):
        super().__init__(str(error))
        self.report, self.error = report, error


def cmd_metrics(args) -> Report:
    pred = read_grid(args.pred)
    truth = read_grid(args.truth)
    if args.config:
        cfg = EvalConfig.from_dict(_read_json(args.config))
    else:
        cfg = EvalConfig(tuple(VariableSpec(c) for c in truth.columns))
    w = area_weights(truth.lat_count, truth.lon_count)
    loss = weighted_mse(pred, truth, w, cfg, threads=args.threads)
    names = cfg.column_names()
    rows = [{"column": n, "rmse": per_variable_rmse(pred, truth, w, j, cfg)} for j, n in enumerate(names)]
    inputs = {
        "verb": "metrics",
        "pred": file_digest(args.pred),
        "truth": file_digest(args.truth),
        "config": cfg.to_dict(),
        "fair": args.fair,
    }
    body = {"weighted_loss": loss, "per_variable_rmse": rows}
    if args.ensemble:
        ens, header = read_field(args.ensemble)
        if "members" not in header:
            raise InvalidConfig(f"{args.ensemble}: not an ensemble file")
        scores = crps_field(ens, truth, w, fair=args.fair)
        for r, s in zip(rows, scores):
            r["crps"] = float(s)
        body["crps_estimator"] = "fair" if args.fair else "standard"
        inputs["ensemble"] = file_digest(args.ensemble)
    return Report.build("metrics", inputs, body, rows)


def cmd_utilization(args) -> Report:
    if args.achieved is not None or args.peak is not None:
        if args.achieved is None or args.peak is None:
            raise InvalidConfig("--achieved and --peak go together")
        src = [{"model": args.label, "achieved_tflops": args.achieved, "peak_tflops": args.peak,
                "precision_bits": args.precision}]
        inputs = {"verb": "utilization", "rows": src}
    else:
        if args.preset_file:
            doc = _read_json(args.preset_file)
        else:
            from .shapes import _data_path

            doc = json.loads(_data_path("h100_utilization.json").read_text())
        src = doc["rows"]
        inputs = {"verb": "utilization", "preset": doc}
    rows = []
    for r in src:
        u = utilization(float(r["achieved_tflops"]), float(r["peak_tflops"]), int(r.get("precision_bits", 32)))
        row = {
            "model": r.get("model", "-"),
            "achieved_tflops": u.achieved_tflops,
            "peak_tflops": u.peak_tflops,
            "precision_bits": u.precision_bits,
            "utilization_pct": u.utilization_pct,
            "utilization_pct_3sf": sig3(u.utilization_pct),
        }
        if "printed_pct" in r:
            row["printed_pct"] = r["printed_pct"]
        rows.append(row)
    return Report.build("utilization", inputs, {"rows": rows}, rows)


def cmd_synth(args) -> Report:
    kw = dict(noise=args.noise, seed=args.seed)
    if args.points is not None:
        kw["points"] = args.points
    if args.kind == "power-D":
        records = synth.power_d(beta=args.beta, prefactor=args.prefactor, **kw)
    elif args.kind == "power-N":
        records = synth.power_n(beta=args.beta, prefactor=args.prefactor, **kw)
    elif args.kind == "isoflop":
        budgets = [float(b) for b in args.budgets.split(",")] if args.budgets else (1e8, 1e10, 1e12)
        records = synth.isoflop(budgets, **kw)
    else:
        records = synth.monotone(float(args.budgets) if args.budgets else 1e10, **kw)
    write_runlog(args.output, records)
    inputs = {"verb": "synth", "kind": args.kind, "beta": args.beta, "prefactor": args.prefactor,
              "budgets": args.budgets, "points": args.points, **kw}
    body = {"kind": args.kind, "records": len(records), "runlog_sha256": file_digest(args.output)}
    return Report.build("synth", inputs, body)


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print the report as JSON")
    common.add_argument("--csv", metavar="PATH", help="write the report's table as CSV")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--registry", help="shape registry file (default: $WXSCALE_REGISTRY or bundled)")

    parser = argparse.ArgumentParser(prog="wxscale", description="Scaling analysis for weather models.")
    parser.add_argument("--version", action="version", version=f"wxscale {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("params", parents=[common], help="parameter count of a shape, or list the registry")
    _shape_args(p)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("flops", parents=[common], help="per-sample forward and training FLOPs")
    _shape_args(p)
    p.add_argument("--config", help="grid/options config file (JSON)")
    p.add_argument("--grid", action="append", metavar="KEY=VALUE", help="override a grid field")
    p.add_argument("--option", action="append", metavar="KEY=VALUE", help="override a cost option")
    p.add_argument("--alpha", type=float, help="SFNO transform constant")
    p.add_argument("--skip", action="store_true", help="count the SFNO skip connection")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("fit", parents=[common], help="power-law or IsoFLOP fit of a run log")
    p.add_argument("runlog")
    p.add_argument("--mode", choices=("power-D", "power-N", "isoflop"), default="power-D")
    p.add_argument("--x-unit", choices=("samples", "tb"), default="samples")
    p.add_argument("--model", action="append", help="keep only these model ids")
    p.add_argument("--run", action="append", help="keep only these run ids")
    p.add_argument("--arch", dest="filter_arch", help="keep only records of this architecture")
    p.add_argument("--min-step", type=int)
    p.add_argument("--last-only", action="store_true", help="use only the final record of each run")
    p.add_argument("--law", default="graph", help="compute law: graph, patched or an architecture name")
    p.add_argument("--patch", type=int, help="patch size for the patched law")
    p.add_argument("--kappa", type=float, default=6.0)
    p.add_argument("--budget-tolerance", type=float, default=BUDGET_TOLERANCE)
    p.add_argument("--d-tolerance", type=float, default=BUDGET_TOLERANCE)
    p.add_argument("--min-points", type=int, default=MIN_POINTS)
    p.add_argument("--n-boot", type=int, default=N_BOOT)
    p.add_argument("--ci-level", type=float, default=CI_LEVEL)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("metrics", parents=[common], help="weighted loss, RMSE and CRPS of field files")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--config", help="variable config (JSON)")
    p.add_argument("--ensemble", help="ensemble field file for CRPS")
    p.add_argument("--fair", action="store_true", help="use the fair CRPS estimator")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("utilization", parents=[common], help="hardware utilization")
    p.add_argument("--preset", action="store_true", help="bundled preset (the default without --achieved)")
    p.add_argument("--preset-file")
    p.add_argument("--achieved", type=float, help="achieved Tflop/s")
    p.add_argument("--peak", type=float, help="peak Tflop/s at the training precision")
    p.add_argument("--precision", type=int, default=32)
    p.add_argument("--label", default="custom")
    p.set_defaults(func=cmd_utilization)

    p = sub.add_parser("synth", parents=[common], help="write a seeded synthetic run log")
    p.add_argument("kind", choices=("power-D", "power-N", "isoflop", "monotone"))
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--beta", type=float, default=0.51)
    p.add_argument("--prefactor", type=float, default=2.0)
    p.add_argument("--points", type=int)
    p.add_argument("--budgets", help="comma-separated compute budgets")
    p.add_argument("--noise", type=float, default=0.0, help="lognormal noise sigma")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def _emit(report: Report, args, out) -> None:
    out.write(report.to_json() if args.json else report.to_text())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        stderr.write("wxscale: error: --threads must be >= 1\n")
        return 2
    try:
        _emit(args.func(args), args, stdout)
        return 0
    except _ReportedFailure as exc:
        _emit(exc.report, args, stdout)
        stderr.write(f"wxscale: {type(exc.error).__name__}: {exc.error}\n")
        return exc.error.exit_code
    except (ValidationError, InsufficientData) as exc:
        stderr.write(f"wxscale: {type(exc).__name__}: {exc}\n")
        return exc.exit_code
    except (OSError, KeyError) as exc:
        stderr.write(f"wxscale: error: {exc}\n")
        return 2
    except WxScaleError as exc:  # pragma: no cover
        stderr.write(f"wxscale: {exc}\n")
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
