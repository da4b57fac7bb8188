"""Command-line entry point.

Subcommands:
  gen-data   write a synthetic probit data set as CSV
  run        run the configured experiment and append rows to the result CSV
  sweep      repeat the experiment along one axis (snr, t, k, zeta)
  report     print per-scheme summary statistics from a result CSV
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import load_config
from .data import export_csv, gen_probit_data
from .report import format_summary, load_rows, summarize
from .runner import run_experiment, substream, sweep, write_manifest, write_rows


def _add_common(parser: argparse.ArgumentParser, need_out: bool = False) -> None:
    parser.add_argument("--config", required=True, help="path to the JSON config")
    parser.add_argument("--out", required=need_out, help="output path")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--parallel", type=int, default=1, help="trial worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wcmc", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic probit CSV")
    _add_common(p, need_out=True)

    p = sub.add_parser("run", help="run the configured experiment")
    _add_common(p)

    p = sub.add_parser("sweep", help="run the experiment along one axis")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=("snr", "t", "k", "zeta"))
    p.add_argument("--values", required=True, help="comma-separated axis values")

    p = sub.add_parser("report", help="summarize a result CSV")
    p.add_argument("--out", required=True, help="result CSV to summarize")
    return parser


def _resolve(args) -> tuple:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out = args.out or config.output
    if out is None:
        raise SystemExit("no output path: pass --out or set 'output' in the config")
    return config, out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "report":
        print(format_summary(summarize(load_rows(args.out))))
        return 0

    config, out = _resolve(args)

    if args.command == "gen-data":
        rng = substream(config.seed, 0, "data")
        dataset = gen_probit_data(config.data.n, config.dim, config.data.theta_star, rng)
        export_csv(dataset, out)
        print(f"wrote {dataset.size} rows x {dataset.dim} covariates to {out}")
        return 0

    if args.command == "run":
        rows = run_experiment(config, parallel=args.parallel)
    else:
        values = [float(v) for v in args.values.split(",") if v.strip()]
        if not values:
            raise SystemExit("--values must list at least one number")
        rows = sweep(config, args.axis, values, parallel=args.parallel)

    write_rows(out, rows)
    write_manifest(out, config, extra={"rows_written": len(rows)})
    print(f"appended {len(rows)} rows to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
