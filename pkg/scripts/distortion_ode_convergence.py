"""Error term of the volume-distortion ODE as lambda shrinks.

For each lambda prints the smallest residual of D'' + (K - eps)/N lam^2 D,
whether it clears the tolerance band, and sup|E| with its halving ratio.
"""
import argparse

from spacetime_tbm import tbm
from spacetime_tbm.catalog import spacetime


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lams", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.025, 0.0125])
    ap.add_argument("--K", type=float, default=0.0)
    ap.add_argument("--eps", type=float, default=0.4)
    ap.add_argument("--N", type=float, default=3.0)
    args = ap.parse_args()

    st = spacetime("weighted_minkowski2", N=args.N)
    tf = tbm.build_transport_field(st, [0.0, 0.0], [1.0, 0.0])
    prev = None
    print(f"{'lam':>8} {'min_residual':>13} {'certified':>9} {'sup|E|':>11} {'ratio':>7}")
    for lam in args.lams:
        r = tbm.check_distortion_ode(st, tf, lam, args.K, args.eps)
        ratio = f"{prev / r.sup_error:7.2f}" if prev else "      -"
        print(f"{lam:8.4f} {r.min_residual:13.4e} {str(r.certified):>9} {r.sup_error:11.3e} {ratio}")
        prev = r.sup_error


if __name__ == "__main__":
    main()
