"""Command-line entry point.

    enhsep {simulate,enhance,score,run} [--config FILE] [--jobs N] [--force]
           [--seed N] [--section.key VALUE ...]

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, dump_config, load_config, parse_overrides, validate
from .pipeline import STAGE_RUNNERS, PipelineError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

log = logging.getLogger("enhsep")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="enhsep", description="Simulate, enhance and score multichannel speech mixtures.")
    parser.add_argument("command", choices=("simulate", "enhance", "score", "run"))
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    parser.add_argument("--force", action="store_true", help="recompute outputs that already exist")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
        if args.jobs < 1:
            parser.error("--jobs must be >= 1")
    except SystemExit as exc:  # argparse exits on --help and usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    try:
        cfg = load_config(args.config, parse_overrides(rest))
        if args.seed is not None:
            cfg["seed"] = args.seed
        stages = list(cfg["stages"]) if args.command == "run" else [args.command]
        validate(cfg, stages)
    except ConfigError as exc:
        print(f"enhsep: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out_dir = Path(cfg["io"]["output_dir"])
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.resolved.yaml").write_text(dump_config(cfg), encoding="utf-8")
        for stage in stages:
            log.info("stage %s", stage)
            STAGE_RUNNERS[stage](cfg, jobs=args.jobs, force=args.force)
    except ConfigError as exc:
        print(f"enhsep: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PipelineError as exc:
        print(f"enhsep: {'config' if exc.exit_code == EXIT_USAGE else 'data'} error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"enhsep: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
