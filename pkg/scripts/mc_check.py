"""Monte Carlo check of the discounted representation and occupation measures.

    python3 scripts/mc_check.py --lam 0.2 --y 0.5 --paths 10000 [--two-mode]
"""

import argparse
import time

import numpy as np

from hjswitch import HamiltonianSpec, ProblemSpec, default_scheme, scalar_problem, validate_coupling
from hjswitch.mather import closedness_residual
from hjswitch.montecarlo import estimate_occupation, simulate_discounted_cost, synthesize_feedback
from hjswitch.solver import solve_discounted


def two_mode(rate):
    h0 = HamiltonianSpec("quadratic", "1 - cos(2*pi*x)", mode=0)
    h1 = HamiltonianSpec("quadratic", "0.5 + 0.5*sin(2*pi*x)", mode=1)
    return ProblemSpec((h0, h1), validate_coupling([[rate, -rate], [-rate, rate]]))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--lam", type=float, default=0.2)
    ap.add_argument("--y", type=float, default=0.5)
    ap.add_argument("--mode", type=int, default=0)
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--two-mode", type=float, default=None, metavar="RATE")
    args = ap.parse_args()

    prob = scalar_problem() if args.two_mode is None else two_mode(args.two_mode)
    sc = default_scheme(prob, args.n, 65)
    u = solve_discounted(sc, args.lam, 0.0)
    pol = synthesize_feedback(sc, u)
    y = int(sc.grid.nearest(np.array([[args.y]]))[0])
    t0 = time.perf_counter()
    res = simulate_discounted_cost(sc, pol, y, args.mode, args.lam, args.paths, seed=args.seed)
    print(f"grid u = {u.values[args.mode, y]:.6f}")
    print(f"MC     = {res.estimate:.6f} +- {res.stderr:.2e} (tail <= {res.tail_bound:.1e}, {time.perf_counter() - t0:.1f}s)")
    occ = estimate_occupation(sc, pol, y, args.mode, args.lam, min(args.paths, 1000), seed=args.seed)
    print(f"occupation closedness residual = {closedness_residual(sc, occ.measure):.3e}")


if __name__ == "__main__":
    main()
