"""Command line front end.

Subcommands: ``dim-sweep``, ``small-tau``, ``train``, ``fields-dump``,
``plot``.  Common flags: ``--config PATH`` (flat key = value file with
``[common]`` and per-experiment sections), ``--seed N``, ``--out DIR``,
``--kernel {laplace,gaussian}``.  The ``DRIFTFIELD_WORKERS`` environment
variable sets the worker count for sweep points.

Exit code 0 means no unflagged errors; flagged degenerate rows never
abort a sweep.
"""

from __future__ import annotations

import argparse
import sys

from driftfield.experiments import (
    ExperimentConfig,
    load_config,
    run_dim_sweep,
    run_fields_dump,
    run_smalltau,
    run_train,
)
from driftfield.svgplot import PlotSpec, emit_svg_plot


def _add_common(parser, kernels=("laplace", "gaussian")):
    parser.add_argument("--config", default=None, help="config file path")
    parser.add_argument("--seed", type=int, default=None, help="base seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--kernel", choices=kernels, default=None)
    parser.add_argument("--dataset", default=None)
    parser.add_argument("--repeats", type=int, default=None)
    parser.add_argument("--n-refs", type=int, default=None, dest="n_refs")
    parser.add_argument("--n-queries", type=int, default=None, dest="n_queries")
    parser.add_argument("--no-svg", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftfield",
        description="Mean-shift drift fields vs kernel scores: experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dim-sweep", help="alignment metrics across dimensions")
    _add_common(p)
    p.add_argument("--d-list", default=None, help="comma-separated dimensions")

    p = sub.add_parser("small-tau", help="small-bandwidth expansion rate")
    _add_common(p)
    p.add_argument("--tau-list", default=None, help="comma-separated bandwidths")
    p.add_argument("--dim", type=int, default=None)

    p = sub.add_parser("train", help="train one generator per kernel")
    _add_common(p)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--kernel-scale", type=float, default=None, dest="kernel_scale")
    p.add_argument("--eval-interval", type=int, default=None, dest="eval_interval")
    p.add_argument("--eval-samples", type=int, default=None, dest="eval_samples")

    p = sub.add_parser("fields-dump", help="dump per-query field rows")
    _add_common(p, kernels=("laplace", "gaussian", "both"))
    p.add_argument("--dim", type=int, default=None)

    p = sub.add_parser("plot", help="render a CSV as an SVG line chart")
    p.add_argument("--csv", required=True)
    p.add_argument("--x", required=True, dest="x_col")
    p.add_argument("--y", required=True, dest="y_cols", help="comma-separated columns")
    p.add_argument("--log-x", action="store_true")
    p.add_argument("--log-y", action="store_true")
    p.add_argument("--title", default="")
    p.add_argument("--out", required=True, dest="out_svg")
    return parser


def _config_from_args(args, experiment) -> ExperimentConfig:
    overrides = {
        "seed": args.seed,
        "out_dir": args.out,
        "kernel": args.kernel,
        "dataset": args.dataset,
        "repeats": args.repeats,
        "n_refs": args.n_refs,
        "n_queries": args.n_queries,
    }
    if getattr(args, "d_list", None):
        overrides["d_list"] = tuple(int(v) for v in args.d_list.split(","))
    if getattr(args, "tau_list", None):
        overrides["tau_list"] = tuple(float(v) for v in args.tau_list.split(","))
    for key in ("dim", "steps", "batch_size", "kernel_scale", "eval_interval",
                "eval_samples"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if args.no_svg:
        overrides["emit_svg"] = False
    return load_config(args.config, experiment, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "dim-sweep":
            cfg = _config_from_args(args, "dim_sweep")
            _, slopes, paths = run_dim_sweep(cfg)
            for metric, (slope, _) in slopes.items():
                print(f"{metric} slope vs D: {slope:+.3f}")
            print(f"wrote {paths['sweep']}")
        elif args.command == "small-tau":
            cfg = _config_from_args(args, "small_tau")
            _, slope, paths = run_smalltau(cfg)
            if slope is not None:
                print(f"expansion error slope vs tau: {slope[0]:+.3f}")
            print(f"wrote {paths['smalltau']}")
        elif args.command == "train":
            cfg = _config_from_args(args, "train")
            summary, paths = run_train(cfg)
            for family in ("laplace", "gaussian"):
                print(
                    f"{family}: final SWD {summary[family]['swd_final']:.4f} "
                    f"MMD {summary[family]['mmd_final']:.4f}"
                )
            print(f"SWD ratio laplace/gaussian: {summary['ratio_swd']:.3f}")
            print(f"wrote {paths['summary']}")
        elif args.command == "fields-dump":
            cfg = _config_from_args(args, "fields_dump")
            paths = run_fields_dump(cfg)
            for family, path in paths.items():
                print(f"wrote {path}")
        elif args.command == "plot":
            spec = PlotSpec(
                x_col=args.x_col,
                y_cols=tuple(c for c in args.y_cols.split(",") if c),
                log_x=args.log_x,
                log_y=args.log_y,
                title=args.title,
            )
            emit_svg_plot(args.csv, spec, args.out_svg)
            print(f"wrote {args.out_svg}")
    except (ValueError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
