"""Command-line entry point: ``qmonitor run-<experiment> --config PATH``.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, QMonitorError
from .experiments import run_experiment
from .io import EXPERIMENTS, load_config, write_results

log = logging.getLogger("qmonitor")


class _Parser(argparse.ArgumentParser):
    # Usage mistakes are validation errors, not runtime errors.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qmonitor", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in EXPERIMENTS:
        p = sub.add_parser(f"run-{kind}", help=f"run the '{kind}' experiment")
        p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="ensemble seed (overrides ensemble.seed)")
        p.add_argument("--workers", type=int, default=1,
                       help="worker processes; changes speed only, never results")
        p.set_defaults(experiment=kind)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.experiment, args.seed)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 1
    if args.workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return 1
    out_dir = args.out or (Path(cfg.out_dir) if cfg.out_dir else Path("results") / args.experiment)
    try:
        log.info("running %s (seed %d)", args.experiment, cfg.seed)
        result = run_experiment(cfg, workers=args.workers)
        paths = write_results(result, out_dir)
    except (QMonitorError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for kind, path in paths.items():
        log.info("wrote %s: %s", kind, path)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
