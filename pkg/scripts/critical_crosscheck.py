"""Critical value two ways (vanishing discount vs Mather LP) on seeded random problems.

    python3 scripts/critical_crosscheck.py --seeds 0 1 2 3 --n 32 --modes 2
"""

import argparse
import time

from hjswitch import default_scheme, estimate_critical_value, random_problem
from hjswitch.mather import build_lp, extreme_mather_measures, solve_lp


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--modes", type=int, default=2)
    ap.add_argument("--d", type=int, default=1)
    ap.add_argument("--controls", type=int, default=65)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.2, 0.1, 0.05])
    args = ap.parse_args()

    print(f"{'seed':>4} {'VI':>12} {'LP':>12} {'|diff|':>9} {'gap':>9} {'vertices':>8} {'time':>6}")
    for seed in args.seeds:
        t0 = time.perf_counter()
        sc = default_scheme(random_problem(seed, args.modes, args.d), args.n, args.controls)
        est = estimate_critical_value(sc, args.lambdas)
        lp = build_lp(sc)
        sol = solve_lp(lp)
        found = extreme_mather_measures(lp, 8, seed, sol)
        dt = time.perf_counter() - t0
        print(
            f"{seed:4d} {est.value:12.6f} {sol.c_h:12.6f} {abs(est.value - sol.c_h):9.1e} "
            f"{sol.gap:9.1e} {len(found):8d} {dt:5.1f}s"
        )


if __name__ == "__main__":
    main()
