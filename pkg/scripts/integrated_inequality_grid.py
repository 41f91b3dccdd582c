"""Residual of the integrated distortion inequality over a (lam, delta) grid.

Runs on weighted_minkowski2 (N = 3) with K = 0, prints the residual
m^(1/N)(T_{lam t} A) minus its tau-combination, and fits
r = (C1 (delta + lam^4) - C2 lam^2) delta^(n/N).
"""
import argparse

import numpy as np

from spacetime_tbm import tbm
from spacetime_tbm.catalog import spacetime


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lams", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.025])
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.02, 0.01, 0.005])
    ap.add_argument("--K", type=float, default=0.0)
    ap.add_argument("--t", type=float, default=0.5)
    args = ap.parse_args()

    st = spacetime("weighted_minkowski2", N=3)
    tf = tbm.build_transport_field(st, [0.0, 0.0], [1.0, 0.0])
    reps = []
    print(f"{'lam':>7} {'delta':>7} {'theta':>9} {'lhs':>12} {'rhs':>12} {'residual':>11}")
    cube = [(lam, lam ** 3) for lam in args.lams]
    for lam, d in [(l, d) for l in args.lams for d in args.deltas] + cube:
        r = tbm.check_integrated_inequality(st, tf, lam, d, args.K, t=args.t)
        reps.append(r)
        print(f"{lam:7.4f} {d:7.4g} {r.theta:9.6f} {r.lhs:12.6e} {r.rhs:12.6e} {r.residual:11.3e}")
    c1, c2 = tbm.fit_integrated_model(reps, st.n, st.N)
    print(f"\nfit: C1={c1:.4g} C2={c2:.4g}")
    neg = [r.lam for r in reps[-len(cube):] if r.residual < 0]
    print(f"delta = lam^3 residual negative at lam in {neg}")


if __name__ == "__main__":
    main()
