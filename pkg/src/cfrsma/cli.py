"""Command-line front end: sweep runner and statistics self-check.

Exit codes: 0 success, 2 invalid configuration, 3 closed-form statistics
failed the Monte Carlo self-check.
"""

from __future__ import annotations

import argparse
import os
import sys

from cfrsma.config import ConfigError, Mode, SimConfig, parse_config_file
from cfrsma.experiments import SWEEP_AXES, preset_spec, run_and_save


def _parse_axis(text: str) -> tuple[str, tuple]:
    name, _, values = text.partition("=")
    name = name.strip()
    if name not in SWEEP_AXES:
        raise argparse.ArgumentTypeError(
            f"unknown axis '{name}'; choose from {', '.join(SWEEP_AXES)}")
    try:
        parsed = tuple(
            int(v) if name in ("K", "L", "tau_c", "M") else float(v)
            for v in values.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad axis values '{values}': {exc}")
    if not parsed:
        raise argparse.ArgumentTypeError(f"axis '{name}' has no values")
    return name, parsed


def _parse_modes(text: str) -> tuple[Mode, ...]:
    try:
        return tuple(Mode(m.strip().lower()) for m in text.split(",") if m.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfrsma",
        description="Monte Carlo spectral-efficiency studies of downlink "
                    "user-centric cell-free massive MIMO with rate splitting")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a sweep preset and write CSV results")
    run.add_argument("--preset", choices=("fig_a", "fig_b", "fig_c", "custom"),
                     default="custom")
    run.add_argument("--config", metavar="PATH",
                     help="key=value config file providing the base parameters")
    run.add_argument("--output", metavar="DIR", default="results")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--drops", type=int, default=None)
    run.add_argument("--realizations", type=int, default=None)
    run.add_argument("--modes", type=_parse_modes, default=None,
                     metavar="MODE[,MODE...]",
                     help="comma list of rsma_dl_pilots, rsma_no_dl_pilots, sdma")
    run.add_argument("--axis", action="append", type=_parse_axis, default=[],
                     metavar="NAME=V1,V2,...",
                     help=f"sweep axis (repeatable); axes: {', '.join(SWEEP_AXES)}")
    run.add_argument("--plot", action="store_true", help="emit an SVG plot")
    run.add_argument("--threads", type=int, default=None,
                     help="worker threads over drops (default: CF_RSMA_THREADS or 1)")
    run.add_argument("--stats-check", type=int, metavar="SAMPLES", default=None,
                     help="verify the closed-form statistics against the Monte "
                          "Carlo oracle with this many samples before running")
    run.add_argument("--quiet", action="store_true")

    verify = sub.add_parser("verify-stats",
                            help="compare closed-form DL statistics to the oracle")
    verify.add_argument("--samples", type=int, default=100_000)
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--quiet", action="store_true")
    return parser


def _threads_from(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("CF_RSMA_THREADS", "")
    return max(1, int(env)) if env.strip() else 1


def _stats_check(samples: int, seed: int, quiet: bool) -> int:
    from cfrsma.oracle import run_statistics_selfcheck

    ok, rows, _ = run_statistics_selfcheck(n_drops=samples, seed=seed)
    bad = [r for r in rows if not r.ok]
    if not quiet:
        print(f"statistics self-check: {len(rows) - len(bad)}/{len(rows)} scalars "
              f"within tolerance ({samples} samples)")
    if bad:
        for r in bad:
            print(f"closed-form mismatch: {r}", file=sys.stderr)
        return 3
    return 0


def _cmd_run(args) -> int:
    base = parse_config_file(args.config) if args.config else SimConfig()
    spec = preset_spec(args.preset, drops=args.drops, realizations=args.realizations,
                       seed=args.seed, modes=args.modes,
                       axes=dict(args.axis) or None, base=base)
    threads = _threads_from(args)
    if args.stats_check is not None:
        code = _stats_check(args.stats_check, spec.base.seed, args.quiet)
        if code:
            return code
    log = None if args.quiet else print
    rows = run_and_save(spec, args.output, threads=threads, plot=args.plot, log=log)
    if not args.quiet:
        print(f"wrote {len(rows)} rows to {args.output}/results.csv")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "verify-stats":
            return _stats_check(args.samples, args.seed, args.quiet)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
