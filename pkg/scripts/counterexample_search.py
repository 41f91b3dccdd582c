"""Run the counterexample search over weighted Minkowski spacetimes.

Sweeps the weight slope and the dimension parameter N and prints one row per
run: the curvature at the chosen candidate, the lambda where a violation was
certified and its margin.
"""
import argparse
import time

from spacetime_tbm import tbm
from spacetime_tbm.catalog import spacetime


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--slopes", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    ap.add_argument("--N", type=float, nargs="+", default=[3.0, 4.0, 6.0])
    ap.add_argument("--K", type=float, default=0.0)
    ap.add_argument("--eps-floor", type=float, default=0.05)
    ap.add_argument("--levels", type=int, default=5)
    args = ap.parse_args()

    print(f"{'slope':>6} {'N':>5} {'Ric_N':>10} {'status':>12} {'lam':>8} {'margin':>12} {'sec':>6}")
    for s in args.slopes:
        for N in args.N:
            st = spacetime("weighted_minkowski2", N=N, weight_slope=s)
            t0 = time.perf_counter()
            rep = tbm.find_counterexample(st, args.K, eps_floor=args.eps_floor, levels=args.levels)
            ric = rep.candidate.ricci if rep.candidate is not None else float("nan")
            lam = f"{rep.lam:.4g}" if rep.lam else "-"
            print(f"{s:6.2f} {N:5.1f} {ric:10.4f} {rep.status:>12} {lam:>8} "
                  f"{rep.best_margin:12.3e} {time.perf_counter() - t0:6.1f}")


if __name__ == "__main__":
    main()
