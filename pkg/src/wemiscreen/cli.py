"""Command-line entry point: ``wemiscreen <stage> --config cfg.json --out DIR``.

Exit codes: 0 success, 1 validation error (bad config or missing stage
input), 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .detect import STATISTIC_KINDS

STAGES = {
    "simulate": lambda cfg, out, kinds: pipeline.cmd_simulate(cfg, out),
    "preprocess": lambda cfg, out, kinds: pipeline.cmd_preprocess(cfg, out),
    "train": pipeline.cmd_train,
    "detect": pipeline.cmd_detect,
    "alarms": pipeline.cmd_alarms,
    "score": pipeline.cmd_score,
    "run-all": pipeline.run_all,
}


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wemiscreen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", type=Path, default=None, help="JSON configuration file")
        p.add_argument("--seed", type=_seed, default=None, help="override the configured seed")
        p.add_argument("--out", type=Path, default=Path("wemi_out"), help="output directory")
        p.add_argument("--detector", choices=STATISTIC_KINDS, default=None,
                       help="restrict detect/train/alarms/score to one detector")
        p.add_argument("--print-config", action="store_true",
                       help="print the resolved configuration and exit")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = pipeline.load_config(args.config, args.seed)
        if args.print_config:
            sys.stdout.write(pipeline.config_text(cfg))
            return 0
        kinds = pipeline.selected_kinds(cfg, args.detector)
        for line in STAGES[args.command](cfg, args.out, kinds):
            print(line)
    except pipeline.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
