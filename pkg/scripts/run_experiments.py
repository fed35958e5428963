"""Run the desk-scale experiments in scripts/configs through the CLI driver.

    python scripts/run_experiments.py                 # every config
    python scripts/run_experiments.py tails bounds    # a subset
    python scripts/run_experiments.py --root out/     # results under out/

Each run writes its artifacts to <root>/results/<command>; a one-line
summary per command goes to stdout and the exit status is the worst of the
individual ones.
"""
import argparse
import sys
import time
from pathlib import Path

from inertdrift import cli
from inertdrift.config import COMMANDS

HERE = Path(__file__).resolve().parent


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("commands", nargs="*", metavar="command", help=", ".join(COMMANDS))
    ap.add_argument("--root", default=".", help="results go to <root>/results/<command>")
    ap.add_argument("--workers", type=int)
    args = ap.parse_args(argv)
    unknown = sorted(set(args.commands) - set(COMMANDS))
    if unknown:
        ap.error(f"unknown commands {unknown}")
    worst = 0
    for cmd in args.commands or COMMANDS:
        cfg = HERE / "configs" / f"{cmd}.ini"
        out = Path(args.root) / "results" / cmd
        extra = ["--workers", str(args.workers)] if args.workers else []
        t0 = time.perf_counter()
        status = cli.main([cmd, "--config", str(cfg), "--out", str(out), *extra])
        print(f"# {cmd}: exit {status} in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
        worst = max(worst, status)
    return worst


if __name__ == "__main__":
    sys.exit(main())
