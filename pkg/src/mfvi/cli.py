"""Command-line entry point: ``mfvi <command> --config FILE --out PATH``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time

from . import experiments
from .base_dist import DomainError
from .config import COMMANDS, ConfigError, check_output_writable, parse_config
from .io import emit_results

log = logging.getLogger("mfvi")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfvi", description="Mean-field BBVI experiments with SPGD.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML experiment file (see docs/config.md)")
    p.add_argument("--out", required=True, help="result file; metadata goes to <out>.meta.json")
    p.add_argument("--seeds", type=int, nargs="+", help="override the seed list")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker processes")
    p.add_argument("--t", type=float, default=None, help="lower-bound truncation level (default 0.5)")
    p.add_argument("--format", choices=("csv", "json-lines"), default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = parse_config(args.config)
        if cfg.command != args.command:
            raise ConfigError(f"config is for '{cfg.command}' but '{args.command}' was requested")
        if args.seeds:
            cfg = cfg.with_seeds(args.seeds)
        if args.t is not None:
            if args.t <= 0:
                raise ConfigError("--t must be > 0")
            cfg = dataclasses.replace(cfg, t=args.t)
        if args.format:
            cfg = dataclasses.replace(cfg, format=args.format)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        check_output_writable(args.out)
    except ConfigError as exc:
        print(f"mfvi: config error: {exc}", file=sys.stderr)
        return 2

    start = time.perf_counter()
    try:
        result = experiments.RUNNERS[cfg.command](cfg, workers=args.workers)
    except (ConfigError, DomainError) as exc:
        print(f"mfvi: {exc}", file=sys.stderr)
        return 2
    meta = {"command": cfg.command, "seeds": list(cfg.seeds), "config_digest": cfg.digest(), "config": cfg.to_json()}
    if cfg.command == "fit":
        rows, traces, sched = result
        meta["schedule"] = sched
        meta["runs"] = [tr.metadata() for tr in traces]
    else:
        rows = result
    side = emit_results(rows, args.out, experiments.HEADERS[cfg.command], cfg.format, meta)
    log.info("wrote %d rows to %s (%s) in %.1fs", len(rows), args.out, side, time.perf_counter() - start)
    return 0


if __name__ == "__main__":
    sys.exit(main())
