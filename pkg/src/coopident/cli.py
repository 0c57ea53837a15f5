"""Command line driver.

    coopident phase1   [--config cfg.json] [--seed N] [--out DIR]
    coopident phase2   [... ] [--true-poses] [--no-consensus]
    coopident adaptive [... ]
    coopident all      [... ] [--plot]

Each phase writes ``<out>/<phase>.csv`` (``time,entity,metric,value``) and
prints one JSON summary line per phase on stdout.  On failure a single JSON
line ``{"error": ..., "message": ...}`` goes to stderr and the exit code is
nonzero (2 for bad input, 1 otherwise).
"""

from __future__ import annotations

import argparse
from dataclasses import replace
import json
import logging
from pathlib import Path
import sys

from .errors import ConfigError, CoopIdentError
from .harness import emit_csv, run_adaptive, run_phase1, run_phase2
from .scenario import ScenarioConfig, load_config

log = logging.getLogger("coopident")


def _parser():
    p = argparse.ArgumentParser(prog="coopident",
                                description="Cooperative load identification experiments")
    p.add_argument("command", choices=("phase1", "phase2", "adaptive", "all"))
    p.add_argument("--config", type=Path, help="JSON scenario file (defaults if omitted)")
    p.add_argument("--seed", type=int, help="noise seed, overrides the config")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--true-poses", action="store_true",
                   help="phase 2 uses the exact relative poses instead of phase-1 estimates")
    p.add_argument("--no-consensus", action="store_true",
                   help="ablation: every robot uses only its own wrench and neighbours")
    p.add_argument("--plot", action="store_true", help="also render PNG error traces")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _emit(name, result, args, title):
    path = emit_csv(result.metrics.records, args.out / f"{name}.csv")
    summary = {"phase": name, "csv": str(path), **result.summary}
    if args.plot:
        from .plotting import plot_metrics
        summary["figure"] = str(plot_metrics(result.metrics, args.out / f"{name}.png", title))
    print(json.dumps(summary, sort_keys=True))


def run(args):
    config = load_config(args.config) if args.config else ScenarioConfig().validate()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be non-negative")
        config = replace(config, seed=args.seed)
    cmd = args.command
    consensus = not args.no_consensus

    p1 = None
    if cmd == "phase1" or cmd == "all" or not args.true_poses:
        p1 = run_phase1(config)
        if cmd in ("phase1", "all"):
            _emit("phase1", p1, args, "relative pose identification")
    if cmd in ("phase2", "all"):
        r = run_phase2(config, p1, true_poses=args.true_poses, use_consensus=consensus)
        _emit("phase2", r, args, "inertial parameter identification")
    if cmd in ("adaptive", "all"):
        r = run_adaptive(config, p1, true_poses=args.true_poses, use_consensus=consensus)
        _emit("adaptive", r, args, "re-identification after a load change")


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except (ConfigError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except CoopIdentError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
