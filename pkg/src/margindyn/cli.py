"""Command-line interface.

Subcommands:
  train-toy  run the deterministic toy trainer, write a run file
  estimate   print a network's Lipschitz scale and per-layer norm table
  analyze    normalize a run and write the diagnosis as report.json
  heatmap    write the threshold-pair rank-correlation grid as CSV/SVG
  report     analyze + heatmap + per-epoch curves, as one output directory
  validate   schema/consistency check of a run file or network dir

Exit codes: 0 success, 1 data/validation failure, 2 usage error,
3 numeric failure. MARGINDYN_THREADS caps analysis thread use.
"""

import argparse
import json
import os
import sys

import numpy as np

from .analysis import DEFAULT_GRID_SIZE, DEFAULT_PROMINENCE, DEFAULT_WINDOW, correlation_heatmap
from .errors import (
    AnalysisError,
    DataError,
    EstimationError,
    FormatError,
    NumericError,
    OracleSizeError,
    ShapeError,
)
from .estimators import MarginDynamicsAnalyzer
from .margins import inverse_quantile_curve, margin_error_curve, normalize_run, quantile_margin_curve
from .norms import network_lipschitz
from .runio import (
    RunRecord,
    read_network,
    read_run,
    read_run_list,
    write_curves_csv,
    write_heatmap_csv,
    write_heatmap_svg,
    write_network,
    write_report_json,
    write_run,
)
from .trainer import config_from_dict, train

_VALIDATION_ERRORS = (
    DataError,
    FormatError,
    ShapeError,
    AnalysisError,
    EstimationError,
    OracleSizeError,
    OSError,
)


def _cmd_train_toy(args):
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = config_from_dict(json.load(fh))
    except (DataError, TypeError, ValueError, OSError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    run = train(config)
    write_run(args.out, run.manifest, run.records)
    if args.weights_dir:
        spec = run.net.to_network_spec(config.data.dim, config.data.num_classes)
        write_network(spec, args.weights_dir)
    if run.records:
        last = run.records[-1]
        print(
            f"epochs={len(run.records)} train_error={last.train_error:.4f} "
            f"test_error={last.test_error:.4f} train_loss={last.train_loss:.4f} "
            f"lipschitz={last.lipschitz:.6g}"
        )
    if run.diverged_at is not None:
        print(f"run diverged at epoch {run.diverged_at}; partial run saved", file=sys.stderr)
        return 3
    return 0


def _cmd_estimate(args):
    net = read_network(args.network)
    scale, estimates = network_lipschitz(net, method=args.method)
    if args.per_layer:
        print(f"{'layer':<24} {'method':<18} {'value':>14} {'iters':>6} {'conv':>6}")
        for est in estimates:
            iters = est.iterations_used if est.method == "power_iteration" else ""
            conv = "" if est.method != "power_iteration" else ("yes" if est.converged else "no")
            print(f"{est.layer_id:<24} {est.method:<18} {est.value:>14.6g} {iters:>6} {conv:>6}")
    print(f"lipschitz_scale {scale:.10g}")
    return 0


def _resolve_lipschitz(run_path, records, method):
    """Fill missing per-epoch scales from referenced weight directories."""
    base = os.path.dirname(os.path.abspath(run_path))
    resolved = []
    for rec in records:
        if rec.lipschitz is None:
            if not rec.weights_dir:
                raise DataError(
                    f"epoch {rec.epoch}: no lipschitz value and no weights_dir to estimate from"
                )
            net = read_network(os.path.join(base, rec.weights_dir))
            scale, _ = network_lipschitz(net, method=method)
            rec = RunRecord(
                epoch=rec.epoch,
                train_margins=rec.train_margins,
                lipschitz=scale,
                test_margins=rec.test_margins,
                train_loss=rec.train_loss,
                train_error=rec.train_error,
                test_error=rec.test_error,
                weights_dir=rec.weights_dir,
                extra=rec.extra,
            )
        resolved.append(rec)
    return resolved


def _load_dynamics(args):
    manifest, records = read_run_list(args.run)
    if not records:
        raise DataError("run has no epochs")
    records = _resolve_lipschitz(args.run, records, args.method)
    return manifest, records, normalize_run(records)


def _fit_analyzer(args, manifest, dyn):
    gamma = args.gamma
    if gamma != "auto":
        gamma = float(gamma)
    analyzer = MarginDynamicsAnalyzer(
        q=args.q,
        gamma=gamma,
        grid_size=args.grid_size,
        window=args.window,
        prominence=args.prominence,
        complexity_constant=args.ch,
        delta=args.delta,
        tau=args.tau,
        input_bound=args.input_bound,
        depth=args.depth,
    )
    analyzer.fit(dyn, num_classes=manifest.num_classes)
    if analyzer.auto_selection_unavailable_:
        print(
            "note: --gamma auto needs test margins on every epoch to select a "
            f"threshold; falling back to the configured q={args.q}",
            file=sys.stderr,
        )
    return analyzer


def _cmd_analyze(args):
    manifest, _, dyn = _load_dynamics(args)
    analyzer = _fit_analyzer(args, manifest, dyn)
    report = analyzer.report()
    write_report_json(report, args.out)
    if report["stop"] is not None:
        print(f"suggested stop epoch: {report['stop']['epoch']}")
    if report["dilemma"] is not None:
        print(f"dilemma flag: {report['dilemma']['flag']}")
    print(f"report written to {args.out}")
    return 0


def _cmd_heatmap(args):
    _, _, dyn = _load_dynamics(args)
    heatmap = correlation_heatmap(dyn, grid_size=args.grid_size, with_kendall=False)
    write_heatmap_csv(heatmap, args.out)
    print(f"heatmap written to {args.out}")
    if args.svg:
        write_heatmap_svg(heatmap, args.svg)
        print(f"svg written to {args.svg}")
    return 0


def _curves_table(analyzer, records):
    dyn = analyzer.dynamics_
    curves = {
        "train_error": margin_error_curve(dyn, 0.0, "train"),
        "quantile_margin": analyzer.quantile_margin_curve_,
        "inverse_quantile_margin": analyzer.inverse_quantile_curve_,
        "lipschitz": np.array(dyn.lipschitz),
        "train_loss": np.array(
            [r.train_loss if r.train_loss is not None else np.nan for r in records]
        ),
    }
    if analyzer.gamma_used_ is not None:
        curves["train_margin_error_at_gamma"] = analyzer.gamma_curve_
    if dyn.has_test:
        curves["test_error"] = analyzer.test_error_curve_
    return curves


def _cmd_report(args):
    manifest, records, dyn = _load_dynamics(args)
    analyzer = _fit_analyzer(args, manifest, dyn)
    os.makedirs(args.out_dir, exist_ok=True)
    report = analyzer.report()
    write_report_json(report, os.path.join(args.out_dir, "report.json"))
    write_curves_csv(dyn.epochs, _curves_table(analyzer, records),
                     os.path.join(args.out_dir, "curves.csv"))
    if dyn.has_test and dyn.num_epochs >= 2:
        heatmap = analyzer.heatmap(with_kendall=False)
        write_heatmap_csv(heatmap, os.path.join(args.out_dir, "heatmap.csv"))
        write_heatmap_svg(heatmap, os.path.join(args.out_dir, "heatmap.svg"))
    print(f"report bundle written to {args.out_dir}")
    return 0


def _cmd_validate(args):
    if args.run:
        manifest, records = read_run(args.run)
        count = 0
        for _ in records:
            count += 1
        print(f"ok: manifest (num_classes={manifest.num_classes}) and {count} records")
        return 0
    net = read_network(args.network)
    print(f"ok: network with {len(net.layers)} layers, depth {net.depth}")
    return 0


def _add_analysis_flags(parser):
    parser.add_argument("--q", type=float, default=0.95, help="quantile level (default 0.95)")
    parser.add_argument(
        "--gamma",
        default="auto",
        help="margin threshold, or 'auto' to select by rank correlation (needs test margins)",
    )
    parser.add_argument("--ch", type=float, default=0.0,
                        help="complexity constant for the bound evaluators (default 0)")
    parser.add_argument("--delta", type=float, default=0.05,
                        help="confidence parameter (default 0.05)")
    parser.add_argument("--tau", type=float, default=0.01,
                        help="quantile-margin floor for the bound precondition")
    parser.add_argument("--input-bound", type=float, default=1.0,
                        help="assumed bound on input norms")
    parser.add_argument("--depth", type=int, default=1, help="network depth for the bound")
    parser.add_argument("--method", choices=("power", "l1"), default="power",
                        help="norm method when scales must be estimated from weight dirs")
    parser.add_argument("--grid-size", type=int, default=DEFAULT_GRID_SIZE)
    parser.add_argument("--window", type=int, default=DEFAULT_WINDOW,
                        help="phase-detection smoothing window (epochs)")
    parser.add_argument("--prominence", type=float, default=DEFAULT_PROMINENCE,
                        help="phase-detection prominence threshold (fraction of range)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="margindyn",
        description="Lipschitz-normalized margin dynamics diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-toy", help="run the deterministic toy trainer")
    p.add_argument("--config", required=True, help="JSON training config")
    p.add_argument("--out", required=True, help="output run file (JSON Lines)")
    p.add_argument("--weights-dir", help="also write the final network here")
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("estimate", help="estimate a network's Lipschitz scale")
    p.add_argument("--network", required=True, help="network directory (layers.json)")
    p.add_argument("--method", choices=("l1", "power"), default="power")
    p.add_argument("--per-layer", action="store_true", help="print the per-layer table")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("analyze", help="diagnose a run and write report.json")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    _add_analysis_flags(p)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("heatmap", help="threshold-pair rank-correlation grid")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--svg", help="also write a color-mapped SVG here")
    p.add_argument("--grid-size", type=int, default=DEFAULT_GRID_SIZE)
    p.add_argument("--method", choices=("power", "l1"), default="power")
    p.set_defaults(func=_cmd_heatmap)

    p = sub.add_parser("report", help="full bundle: report.json, curves.csv, heatmap")
    p.add_argument("--run", required=True)
    p.add_argument("--out-dir", required=True)
    _add_analysis_flags(p)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("validate", help="check a run file or network directory")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--run")
    group.add_argument("--network")
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
