"""Per-spec calibration table for the bounds suite.

    python scripts/calibrate_bounds.py [--factor F] [--seed N] [spec ...]

Runs each registered spec on its own (so the wall time per spec is visible)
and prints the verdict table plus, for shape specs, the estimated
probabilities along the abscissa.  ``--factor`` scales every trial count and
is floored at the suite's minimum of 10^4 trials.
"""
import argparse
import time

from inertdrift.bounds import registry, run_suite
from inertdrift.model import ModelParams


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("specs", nargs="*")
    ap.add_argument("--factor", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--gamma", type=float, default=1.0)
    ap.add_argument("--g", type=float, default=1.0)
    args = ap.parse_args(argv)
    params = ModelParams(args.gamma, args.g)
    total = time.perf_counter()
    for spec in registry():
        if args.specs and spec.name not in args.specs:
            continue
        t0 = time.perf_counter()
        rep = run_suite(params, seed=args.seed, trial_factor=args.factor, specs=[spec])
        print(rep.table().split("\n", 1)[1], f"  [{time.perf_counter() - t0:.1f}s]", flush=True)
        for s in rep.shape:
            print("    p_hat:", " ".join(f"{p:.3g}" for p in s.p_hat))
            print("    z    :", " ".join(f"{z:.3g}" for z in s.abscissa))
    print(f"total {time.perf_counter() - total:.1f}s")


if __name__ == "__main__":
    main()
