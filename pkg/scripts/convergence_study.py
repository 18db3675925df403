"""Vanishing-discount study on the cosine well and its two-mode lift.

    python3 scripts/convergence_study.py [--n 128] [--lift] [--out study.csv]
"""

import argparse
import time

from hjswitch import default_scheme, lifted_problem, scalar_problem
from hjswitch.selection import convergence_study


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--controls", type=int, default=65)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.4, 0.2, 0.1, 0.05])
    ap.add_argument("--potential", default="1 - cos(2*pi*x)")
    ap.add_argument("--lift", action="store_true", help="use the symmetric two-mode lift")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    prob = scalar_problem(args.potential)
    if args.lift:
        prob = lifted_problem(prob)
    sc = default_scheme(prob, args.n, args.controls)
    t0 = time.perf_counter()
    rep = convergence_study(prob, sc.grid, sc.controls, sc.h, args.lambdas, scheme=sc)
    print(f"c_h = {rep.c_h:.3e}   ({time.perf_counter() - t0:.1f}s)")
    print(f"{'lambda':>8} {'|u-u0|':>10} {'ergodic':>10} {'closed':>10}")
    for r in rep.rows:
        print(f"{r.lam:8.3f} {r.dist_u0:10.5f} {r.ergodic:10.5f} {r.closedness:10.2e}")
    print(f"monotone: {rep.monotone}   final <= {rep.bound}: {rep.final_ok}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(rep.to_csv())


if __name__ == "__main__":
    main()
