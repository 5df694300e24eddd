"""Command-line interface: run, sweep, check, plot, version.

Exit codes: 0 success, 1 run/criterion failure, 2 configuration error.
Plotting imports stay inside the commands that need them so the core
paths never touch matplotlib.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, make_config, read_entries
from .simulate import SimulationAborted, run, sweep, write_sweep_csv

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def _cmd_run(args) -> int:
    entries = read_entries(args.config)
    if args.no_erg:
        entries["erg_enabled"] = "false"
    cfg = make_config(entries)
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    code = EXIT_OK
    try:
        log, metrics = run(cfg)
    except SimulationAborted as exc:
        log, metrics = exc.log, exc.metrics
        print(f"run aborted: {exc}", file=sys.stderr)
        code = EXIT_FAIL
    log.write_csv(out / "trajectory.csv")
    metrics.write(out / "metrics.txt")
    for key, value in metrics.as_items():
        print(f"{key} = {value}")
    print(f"wrote {out / 'trajectory.csv'}")
    if args.plot:
        from .plots import render_run_figures

        for path in render_run_figures(log, cfg, out):
            print(f"wrote {path}")
    return code


def _cmd_sweep(args) -> int:
    entries = read_entries(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    rows = sweep(entries, args.param, values)
    out = Path(args.out) if args.out else Path(entries.get("out_dir", "runs"))
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    write_sweep_csv(rows, path)
    for row in rows:
        if row.get("error"):
            print(f"{args.param} = {row['value']}: ERROR {row['error']}")
        else:
            print(
                f"{args.param} = {row['value']}: fall={row['fall']} "
                f"mean_speed={float(row['mean_speed']):.3f} "
                f"violations={row['violation_count']}"
            )
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_check(args) -> int:
    from .acceptance import run_all

    results = run_all(fast=args.fast)
    for r in results:
        print(r.line())
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} criteria passed")
    if args.report:
        path = Path(args.report)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [
            f"{r.ident} = {'pass' if r.passed else 'fail'} | "
            f"{r.measured} | {r.threshold}"
            for r in results
        ]
        path.write_text("\n".join(lines) + "\n")
        print(f"wrote {path}")
    return EXIT_OK if n_fail == 0 else EXIT_FAIL


def _cmd_plot(args) -> int:
    from .plots import plot_columns

    cols = [c.strip() for c in args.cols.split(",") if c.strip()]
    try:
        path = plot_columns(args.infile, cols, args.out)
    except (ValueError, OSError) as exc:
        print(f"plot failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ergsim",
        description="Reduced-order quadruped trot simulation with a "
        "constraint-enforcing reference governor.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one rollout from a config file")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--out", help="output directory (default: config out_dir)")
    p.add_argument("--no-erg", action="store_true", help="bypass the governor")
    p.add_argument("--plot", action="store_true", help="render summary SVGs")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("sweep", help="one run per value of a config key")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, help="dotted config key")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", help="output directory (default: config out_dir)")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("check", help="run the acceptance criteria")
    p.add_argument("--fast", action="store_true", help="smaller instance counts")
    p.add_argument("--report", help="also write a machine-readable report file")
    p.set_defaults(fn=_cmd_check)

    p = sub.add_parser("plot", help="line chart of logged columns")
    p.add_argument("--in", dest="infile", required=True, help="trajectory CSV")
    p.add_argument("--cols", required=True, help="comma-separated column names")
    p.add_argument("--out", required=True, help="output SVG path")
    p.set_defaults(fn=_cmd_plot)

    p = sub.add_parser("version", help="print the package version")
    p.set_defaults(fn=lambda args: (print(__version__), EXIT_OK)[1])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
