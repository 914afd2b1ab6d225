"""Command line entry point: ``python -m dtoffload {train,eval,sweep,check}``.

Verbosity comes from ``DTOFFLOAD_LOG`` (DEBUG, INFO, WARNING; default INFO).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import rl_agent as rl
from .checks import run_checks
from .config import SCHEMES, ConfigError, SimConfig, load_config, reference_config
from .harness import (LEARNED_SCHEMES, export_metrics, run_baseline, run_training, sweep)

log = logging.getLogger("dtoffload")


def _config(args) -> SimConfig:
    cfg = load_config(args.config) if args.config else reference_config()
    overrides: dict = {}
    if getattr(args, "episodes", None):
        overrides["episodes"] = args.episodes
    if getattr(args, "episode_len", None):
        overrides["episode_len"] = args.episode_len
    if getattr(args, "workers", None):
        overrides["workers"] = args.workers
    if overrides:
        cfg = cfg.replace(training=overrides)
    if getattr(args, "scheme", None):
        cfg = cfg.replace(scheme=args.scheme)
    return cfg


def _common(p: argparse.ArgumentParser, scheme_choices=SCHEMES) -> None:
    p.add_argument("--config", help="YAML config file (default: built-in reference setup)")
    p.add_argument("--seed", type=int, default=None, help="run seed (default: first config seed)")
    p.add_argument("--scheme", choices=scheme_choices, default=None)
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.add_argument("--workers", type=int, default=None, help="number of asynchronous workers K")


def cmd_train(args) -> int:
    cfg = _config(args)
    record, artifacts = run_training(cfg, seed=args.seed, workers=args.workers,
                                     record_slots=True, record_queues=args.queues)
    files = export_metrics(record, artifacts, args.out)
    print(f"final cost {record.final_cost:.6g}  EE {record.final_ee:.6g} J/bit  "
          f"updates {record.updates}  ({record.wall_clock:.1f} s)")
    print(f"wrote {', '.join(str(f) for f in files.values())}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    scheme = args.scheme or "greedy-drift"
    actor = None
    if scheme in LEARNED_SCHEMES:
        if not args.checkpoint:
            print(f"scheme {scheme} needs --checkpoint", file=sys.stderr)
            return 2
        actor, _, _ = rl.load_checkpoint(args.checkpoint)
    record, artifacts = run_baseline(cfg, scheme, seed=args.seed, episodes=args.episodes or 1,
                                     slots=args.slots, actor=actor)
    export_metrics(record, artifacts, args.out)
    print(f"{scheme}: mean cost {record.final_cost:.6g}  EE {record.final_ee:.6g} J/bit  "
          f"backlog slope {record.slope:.4g} bits/slot")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    values = [float(v) if args.axis in ("learning_rate", "V") else int(v) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else cfg.seeds
    schemes = args.schemes.split(",") if args.schemes else list(LEARNED_SCHEMES)
    rows = sweep(cfg, args.axis, values, seeds, schemes, out_dir=args.out)
    print(f"{len(rows)} runs written to {Path(args.out) / f'sweep_{args.axis}.csv'}")
    return 0


def cmd_check(args) -> int:
    cfg = _config(args)
    results = run_checks(cfg, seed=args.seed or 0)
    for name, res in results.items():
        print(f"{'PASS' if res['passed'] else 'FAIL'}  {name:16s} {res['detail']}  ({res['seconds']} s)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "checks.json").open("w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
    return 0 if all(r["passed"] for r in results.values()) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtoffload", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the actor-critic agent")
    _common(p, LEARNED_SCHEMES)
    p.add_argument("--episodes", type=int, help="override training.episodes")
    p.add_argument("--episode-len", type=int, help="override training.episode_len")
    p.add_argument("--queues", action="store_true", help="also write per-queue traces")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a baseline or a checkpointed policy")
    _common(p)
    p.add_argument("--checkpoint", help="checkpoint.npz for learned schemes")
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--slots", type=int, default=None, help="slots per episode")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="cross-product sweep over one axis")
    _common(p)
    p.add_argument("--axis", required=True, choices=["N", "M", "learning_rate", "V"])
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--seeds", help="comma-separated seeds (default: config seeds)")
    p.add_argument("--schemes", help="comma-separated schemes (default: the learned ones)")
    p.add_argument("--episodes", type=int, help="override training.episodes")
    p.add_argument("--episode-len", type=int, help="override training.episode_len")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="run the quick invariant suite")
    _common(p)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("DTOFFLOAD_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
