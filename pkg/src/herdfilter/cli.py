"""Command-line entry point.

Subcommands mirror the experiment kinds (`quad`, `filter`, `rbpf`) plus
`summarize` for turning a metrics CSV into median/quantile rows. Exit
codes: 0 success, 2 config problem, 3 numerical failure during a run.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, NumericalError
from .harness import (
    load_config,
    read_rows,
    run_filter_experiment,
    run_quad_experiment,
    run_rbpf_experiment,
    summarize,
    write_rows,
    write_summary,
)

_RUNNERS = {
    "quad": run_quad_experiment,
    "filter": run_filter_experiment,
    "rbpf": run_rbpf_experiment,
}


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="herdfilter",
        description="kernel-herding quadrature and particle-filter experiment grids",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, blurb in (
        ("quad", "mixture quadrature sweep"),
        ("filter", "state-space filtering sweep"),
        ("rbpf", "Rao-Blackwellized filtering sweep"),
    ):
        sp = sub.add_parser(name, help=blurb)
        sp.add_argument("--config", required=True, help="experiment config file")
        sp.add_argument("--out", help="output CSV path (overrides the config)")
        sp.add_argument("--workers", type=int, default=1, help="worker threads")
        sp.add_argument(
            "--paper-scale",
            action="store_true",
            help="full-size grids: M=50000, T=100, 30 batches (slow)",
        )
    sp = sub.add_parser("summarize", help="median/quantile summary of a metrics CSV")
    sp.add_argument("rows_csv", help="metrics CSV produced by an experiment run")
    sp.add_argument("--out", required=True, help="summary CSV path")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "summarize":
            write_summary(args.out, summarize(read_rows(args.rows_csv)))
            return 0
        if args.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {args.workers}")
        cfg = load_config(args.config, paper_scale=args.paper_scale)
        if cfg.kind != args.command:
            raise ConfigError(
                f"config kind {cfg.kind!r} does not match command {args.command!r}"
            )
        out = args.out or cfg.out
        if out is None:
            raise ConfigError("no output path: set [experiment] out or pass --out")
        write_rows(out, _RUNNERS[cfg.kind](cfg, workers=args.workers))
        return 0
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
