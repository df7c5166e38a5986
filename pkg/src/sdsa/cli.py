"""Command line entry point: ``sdsa run | check | sweep``.

Exit codes: 0 success, 1 failed check, 2 invalid config or unknown registry
key, 3 iterates left the monitored region, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import core, harness
from .testbeds import UnknownKeyError

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_A2 = 3
EXIT_NUMERICAL = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdsa", description="State-dependent stochastic approximation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config (TOML)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="trajectory output path")
        p.add_argument("--quiet", action="store_true", help="only print failures")

    common(sub.add_parser("run", help="run one training experiment"))
    p = sub.add_parser("check", help="verify gradients, the downhill condition or the schedule")
    common(p)
    p.add_argument("--check", required=True, choices=harness.CHECKS)
    p = sub.add_parser("sweep", help="run one experiment per seed")
    common(p)
    p.add_argument("--seeds", type=int, nargs="+", required=True)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def _load(args) -> harness.ExperimentConfig:
    config = harness.load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    config.validate()
    return config


def _cmd_run(args) -> int:
    result = harness.run_experiment(_load(args), out=args.out)
    if result.status == core.A2_VIOLATED:
        print(f"A2 violated: |theta| exceeded the monitor radius at t={result.trajectory.final.t}", file=sys.stderr)
        print(result.summary())
        return EXIT_A2
    if not args.quiet:
        print(result.summary())
    return EXIT_OK


def _cmd_check(args) -> int:
    items = harness.run_check(_load(args), args.check)
    failed = [i for i in items if not i.passed]
    for item in items:
        if not args.quiet or not item.passed:
            print(item.line())
    print(f"{args.check}: {len(items) - len(failed)}/{len(items)} passed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _cmd_sweep(args) -> int:
    config = _load(args)
    entries = harness.sweep(config, args.seeds, jobs=args.jobs, out=args.out)
    for e in entries:
        if not args.quiet or e.error is not None:
            print(e.line())
    frac = harness.fraction_converged(entries)
    n_ok = round(frac * len(entries))
    print(f"converged {n_ok}/{len(entries)} ({frac:.3f})")
    return EXIT_OK if all(e.error is None for e in entries) else EXIT_NUMERICAL


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "check": _cmd_check, "sweep": _cmd_sweep}
    try:
        return handlers[args.command](args)
    except UnknownKeyError as e:
        print(f"error: unknown registry key {e.args[0]!r}", file=sys.stderr)
        return EXIT_CONFIG
    except (harness.ConfigError, TypeError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, core.SampleBoundError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
