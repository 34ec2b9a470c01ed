"""Command line entry point: ``unsure-lab run`` and ``unsure-lab suite acceptance``."""
from __future__ import annotations

import argparse
import os
import sys

from ..errors import UnsureError
from .config import load_config


def _save_checkpoint(rep, out_dir: str, cfg) -> None:
    net = rep.artifacts.get("net")
    if net is None:
        return
    trace = rep.artifacts["trace"]
    net.save(os.path.join(out_dir, f"{rep.experiment}_net"),
             meta={"family": "unsure", "seed": cfg.seed, "run_id": rep.run_id,
                   "eta_trace": [list(map(float, e)) for e in trace.eta]})


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    out_dir = args.out or cfg.out
    from .experiments import run
    rep = run(cfg)
    paths = rep.write(out_dir)
    _save_checkpoint(rep, out_dir, cfg)
    for r in rep.rows:
        print(",".join(r.cells()))
    print(f"run {rep.run_id}: {len(rep.rows) - len(rep.failures())}/{len(rep.rows)} rows pass; "
          f"report in {paths['csv']}", file=sys.stderr)
    return 0 if rep.passed else 1


def cmd_suite(args) -> int:
    if args.name != "acceptance":
        print(f"unknown suite {args.name!r}", file=sys.stderr)
        return 2
    env_seed = os.environ.get("UNSURE_SEED")
    seed = int(env_seed) if env_seed not in (None, "") else args.seed
    from .acceptance import run_suite
    only = None if not args.only else sorted({int(x) for x in args.only.split(",")})
    results, _ = run_suite(seed, out_dir=args.out, only=only)
    failed = [r.number for r in results if not r.passed]
    print(f"acceptance: {len(results) - len(failed)}/{len(results)} criteria pass"
          + (f"; failing: {failed}" if failed else ""))
    return 0 if not failed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unsure-lab", description="Zero-expected-divergence denoising experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment from a JSON config")
    r.add_argument("config")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config leaf by dotted path (repeatable)")
    r.add_argument("--out", default=None, help="output directory (default: the config's 'out')")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("suite", help="run a named battery")
    s.add_argument("name", choices=["acceptance"])
    s.add_argument("--out", default="acceptance_out")
    s.add_argument("--seed", type=int, default=0, help="master seed (UNSURE_SEED takes precedence)")
    s.add_argument("--only", default="", help="comma-separated criterion numbers")
    s.set_defaults(func=cmd_suite)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UnsureError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
