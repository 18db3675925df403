"""Acceptance criteria 1-9. Each criterion is a function returning (ok, detail);
pytest records one PASS/FAIL line per criterion in the terminal summary, and
``python3 tests/test_acceptance.py`` prints the same lines directly."""

import functools
import math
import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

import properties as P  # noqa: E402
from hjswitch.mather import build_lp, closedness_residual, solve_lp  # noqa: E402
from hjswitch.markov import dynkin_residual, empirical_marginal, sample_paths, transition_matrix  # noqa: E402
from hjswitch.model import TorusGrid, lifted_problem, random_problem, scalar_problem  # noqa: E402
from hjswitch.montecarlo import (  # noqa: E402
    estimate_occupation,
    exact_occupation,
    simulate_discounted_cost,
    synthesize_feedback,
)
from hjswitch.selection import compute_u0, convergence_study, lower_bound_check, selection_problem  # noqa: E402
from hjswitch.solver import default_scheme, estimate_critical_value, normalized_limit, solve_discounted  # noqa: E402

from oracles import critical_quadratic, mane_potential_half, two_state_exp  # noqa: E402

LAMBDAS = (0.4, 0.2, 0.1, 0.05)
COS = "1 - cos(2*pi*x)"


@functools.lru_cache(maxsize=None)
def scheme(kind="scalar", n=128):
    prob = scalar_problem(COS)
    return default_scheme(prob if kind == "scalar" else lifted_problem(prob), n, 65)


@functools.lru_cache(maxsize=None)
def mather(kind="scalar", n=128):
    return solve_lp(build_lp(scheme(kind, n)))


@functools.lru_cache(maxsize=None)
def study(kind):
    sc = scheme(kind)
    return convergence_study(sc.problem, sc.grid, sc.controls, sc.h, LAMBDAS, scheme=sc)


# -- criteria --------------------------------------------------------------------------


def criterion_1():
    t0 = time.perf_counter()
    sc = scheme()
    est = estimate_critical_value(sc, (0.2, 0.1, 0.05))
    sol = solve_lp(build_lp(sc))
    elapsed = time.perf_counter() - t0
    oracle = critical_quadratic(sc.problem.hamiltonians[0].potential(TorusGrid(1, 4096).nodes))
    ok = abs(est.value - oracle) <= 2e-2 and abs(sol.c_h - oracle) <= 2e-2 and sol.gap <= 1e-8 and elapsed <= 30
    return ok, f"estimate={est.value:.3e} c_h^LP={sol.c_h:.3e} oracle={oracle:.1e} gap={sol.gap:.1e} time={elapsed:.1f}s"


def criterion_2(seeds=(0, 1, 2)):
    parts, ok = [], True
    for seed in seeds:
        t0 = time.perf_counter()
        sc = default_scheme(random_problem(seed, 2), 32, 65)
        est = estimate_critical_value(sc, (0.2, 0.1, 0.05))
        sol = solve_lp(build_lp(sc))
        elapsed = time.perf_counter() - t0
        diff = abs(est.value - sol.c_h)
        ok &= diff <= 3e-2 and elapsed <= 60
        parts.append(f"seed {seed}: |diff|={diff:.1e} ({elapsed:.1f}s)")
    return ok, "; ".join(parts)


def criterion_3():
    oracle = mane_potential_half()
    parts, ok = [], True
    for kind in ("scalar", "lifted"):
        rep = study(kind)
        sc = scheme(kind)
        half = sc.n_nodes // 2
        u_half = rep.u0.values[:, half]
        err = float(np.abs(u_half - oracle).max())
        ok &= rep.monotone and rep.final_ok and err <= 3e-2
        dists = ",".join(f"{r.dist_u0:.4f}" for r in rep.rows)
        parts.append(f"{kind}: dist=[{dists}] u0(1/2)={u_half[0]:.4f} vs 2/pi={oracle:.4f}")
    return ok, "; ".join(parts)


def criterion_4():
    sc = scheme()
    c_h = mather().c_h
    tol = 1e-9
    fitted = 0.0
    for c in (0.0, 1.0):
        w0 = None
        for lam in LAMBDAS:
            u = solve_discounted(sc, lam, c, tol, w0=w0)
            w0 = u.values
            err = float(np.abs(sc.effective_rate(lam) * u.values - (c - c_h)).max())
            fitted = max(fitted, err / lam)
    agree = max(
        float(np.abs(normalized_limit(sc, lam, 0.0, tol).values - normalized_limit(sc, lam, 1.0, tol).values).max())
        for lam in (0.4, 0.2)
    )
    ok = fitted <= 5 and agree <= 2 * tol
    return ok, f"fitted C={fitted:.3f} (<= 5), normalized limits differ by {agree:.1e} (<= {2 * tol:.0e})"


@functools.lru_cache(maxsize=None)
def _sweep(kind):
    """u^lam at c_h on 20 rates spanning the study's range, plus u0."""
    rep = study(kind)
    sc = scheme(kind)
    lams = np.geomspace(0.4, 0.05, 20)
    sols, w0 = {}, rep.u0.values
    for lam in lams:
        u = solve_discounted(sc, float(lam), rep.c_h, w0=w0)
        sols[float(lam)] = u.values
        w0 = u.values
    return rep.u0.values, sols


def _below_u0(kind, lam_index, mode, node):
    u0, sols = _sweep(kind)
    u = sols[sorted(sols)[lam_index]]
    node %= u.shape[1]
    mode %= u.shape[0]
    assert u[mode, node] <= u0[mode, node] + 5e-2


def criterion_5(n=1000):
    from hypothesis import strategies as st

    runs = [
        ("monotone", P.prop_monotone, P.operator_cases()),
        ("contraction", P.prop_contraction, P.operator_cases()),
        ("constants", P.prop_constant, P.operator_cases()),
        ("comparison", P.prop_comparison, P.operator_cases()),
        ("fenchel", P.prop_fenchel, P.fenchel_cases()),
        ("expm", P.prop_stochastic_semigroup, P.generator_cases()),
        ("B1=0", P.prop_kills_constants, P.generator_cases()),
        ("shift", P.prop_shift, P.shift_cases()),
        (
            "u<=u0+5e-2",
            _below_u0,
            st.tuples(st.sampled_from(["scalar", "lifted"]), st.integers(0, 19), st.integers(0, 1), st.integers(0, 127)),
        ),
    ]
    failed = []
    for name, prop, strat in runs:
        try:
            P.run(prop, strat, n)
        except Exception as exc:  # a falsifying example
            failed.append(f"{name}: {type(exc).__name__}")
    return not failed, f"{len(runs)} properties x {n} cases" + (f"; failed: {failed}" if failed else "")


def criterion_6():
    t0 = time.perf_counter()
    sc = scheme()
    c_h = mather().c_h
    u = solve_discounted(sc, 0.2, c_h)
    y = sc.n_nodes // 2
    res = simulate_discounted_cost(sc, synthesize_feedback(sc, u), y, 0, 0.2, 10_000, seed=2024)
    elapsed = time.perf_counter() - t0
    diff = abs(res.estimate - u.values[0, y])
    bound = 3 * res.stderr + 5e-2
    ok = diff <= bound and elapsed <= 30
    return ok, f"MC={res.estimate:.5f} grid={u.values[0, y]:.5f} |diff|={diff:.1e} <= {bound:.1e}; time={elapsed:.1f}s"


def criterion_7():
    sc = scheme()
    c_h = mather().c_h
    y = sc.n_nodes // 2
    resid, mass = [], None
    for lam in (0.4, 0.2, 0.1):
        u = solve_discounted(sc, lam, c_h)
        occ = estimate_occupation(sc, synthesize_feedback(sc, u), y, 0, lam, 100, seed=7)
        resid.append(closedness_residual(sc, occ.measure))
        if lam == 0.1:
            near_x = sc.grid.distance(sc.grid.nodes, np.zeros((1, 1))) <= 3 * sc.grid.spacing * (1 + 1e-12)
            near_v = np.abs(sc.controls.values[:, 0]) <= 3 * sc.controls.spacing * (1 + 1e-12)
            mass = float(occ.measure.weights[0][np.ix_(near_x, near_v)].sum())
    ok = resid[0] > resid[1] > resid[2] and mass >= 0.8
    return ok, f"closedness={[f'{r:.2e}' for r in resid]} mass near (x*,0) at lam=0.1: {mass:.3f}"


def criterion_8():
    sc = scheme("scalar", 64)
    sel, sol = selection_problem(sc)
    u0 = compute_u0(sel)
    lam = 0.1
    u = solve_discounted(sc, lam, sel.c_h)
    pol = synthesize_feedback(sc, u)
    worst = {"mather dual": math.inf, "u0": math.inf}
    for y in range(0, sc.n_nodes, 8):
        mus = [estimate_occupation(sc, pol, y, 0, lam, 100, seed=y).measure, exact_occupation(sc, u, 0, y)]
        for mu in mus:
            for name, w in (("mather dual", sol.w), ("u0", u0.values)):
                worst[name] = min(worst[name], lower_bound_check(sc, lam, w, y, 0, mu, sel.c_h, u=u))
    ok = all(v >= -1e-3 for v in worst.values())
    return ok, ", ".join(f"min {k}={v:.2e}" for k, v in worst.items())


def criterion_9():
    B = [[1.0, -1.0], [-1.0, 1.0]]
    n = 100_000
    paths = sample_paths(B, 0, 1.0, n, seed=99)
    emp = empirical_marginal(paths, 1.0, 2)
    row = transition_matrix(B, 1.0).entries[0]
    assert np.allclose(row, two_state_exp(1.0)[0], atol=1e-14)
    tv = 0.5 * float(np.abs(emp - row).sum())
    tv_bound = 3 * math.sqrt(1 / (4 * n))
    grid = TorusGrid(1, 32)
    x = grid.nodes[:, 0]
    g = np.stack([1 + np.sin(2 * np.pi * x), -2 * np.cos(2 * np.pi * x)])
    res, err = dynkin_residual(g, grid, B, paths[:10_000], 0.0, 1.0, [0.3])
    ok = tv <= tv_bound and res <= 3 * err
    return ok, f"TV={tv:.2e} <= {tv_bound:.2e}; Dynkin residual {res:.2e} <= 3 sigma = {3 * err:.2e}"


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 10)}


@pytest.mark.parametrize("key", sorted(CRITERIA))
def test_criterion(key, acceptance):
    t0 = time.perf_counter()
    ok, detail = CRITERIA[key]()
    acceptance[key] = (ok, f"{detail} [{time.perf_counter() - t0:.1f}s]")
    print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


if __name__ == "__main__":
    failures = 0
    for key, fn in CRITERIA.items():
        t0 = time.perf_counter()
        ok, detail = fn()
        failures += not ok
        print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail} [{time.perf_counter() - t0:.1f}s]", flush=True)
    sys.exit(1 if failures else 0)
