import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import linprog

from hjswitch.errors import ValidationError
from hjswitch.mather import build_lp, extreme_mather_measures, solve_lp
from hjswitch.model import lifted_problem, random_problem, scalar_problem
from hjswitch.selection import (
    BudgetExceeded,
    NotSubsolution,
    SelectionProblem,
    compute_u0,
    convergence_study,
    lower_bound_check,
    selection_problem,
    solve_u0,
    stability_diagnostic,
    verify_u0_membership,
)
from hjswitch.solver import default_scheme, solve_discounted

from conftest import selection

TWO_WELLS = "1 - cos(4*pi*x)"


def _primal_u0_highs(sc, c_h, measures, target):
    """max w_l(y) over subsolutions with mu-averages <= 0, as an LP in w (HiGHS)."""
    m, n, K = sc.m, sc.n_nodes, sc.n_controls
    rows, rhs = [], []
    eye = np.eye(m * n)
    for i in range(m):
        for x in range(n):
            for k in range(K):
                r = eye[i * n + x].copy()
                for j in range(m):
                    for y, a in zip(sc.idx[x, k], sc.wts[x, k]):
                        r[j * n + y] -= sc.P[i, j] * a
                rows.append(r)
                rhs.append(sc.h * (sc.lagrangian[i, x, k] + c_h))
    for mu in measures:
        rows.append(mu.state_marginal().ravel())
        rhs.append(0.0)
    obj = np.zeros(m * n)
    obj[target[0] * n + target[1]] = -1.0
    res = linprog(obj, A_ub=np.array(rows), b_ub=rhs, bounds=(None, None), method="highs")
    assert res.status == 0
    return -res.fun


@pytest.fixture(scope="module")
def small():
    sc = default_scheme(scalar_problem(), 16, 9, h=0.04)
    sel, sol = selection_problem(sc, k=8)
    return sc, sel, sol, solve_u0(sel)


def test_u0_at_minimizer_and_against_highs(small):
    sc, sel, sol, res = small
    assert abs(res.values[0, 0]) <= 1e-8
    for x in (0, 3, 8, 13):
        ref = _primal_u0_highs(sc, sel.c_h, res.measures, (0, x))
        assert res.values[0, x] == pytest.approx(ref, abs=1e-8)


def test_two_mode_against_highs():
    sc = default_scheme(random_problem(1), 10, 7, h=0.04)
    sel, _ = selection_problem(sc, k=8)
    res = solve_u0(sel)
    for target in ((0, 0), (1, 4), (0, 7)):
        ref = _primal_u0_highs(sc, sel.c_h, res.measures, target)
        assert res.values[target] == pytest.approx(ref, abs=1e-7)
    assert verify_u0_membership(sel, res.values, res.measures).ok


def test_membership(small):
    sc, sel, sol, res = small
    u0 = res.function(sc.grid)
    rep = verify_u0_membership(sel, u0, res.measures)
    assert rep.ok, rep
    bumped = u0.values.copy()
    bumped[0, 5] += 0.1
    rep = verify_u0_membership(sel, bumped, res.measures)
    assert not (rep.subsolution_ok and rep.tight_ok)
    # at lam = 0 the operator commutes with constants, so u0 - 1 is still tight everywhere
    rep = verify_u0_membership(sel, u0.values - 1.0, res.measures)
    assert rep.subsolution_ok and rep.measures_ok and rep.tight_ok
    # w = 0 is a strict subsolution away from the minimizer of f
    rep = verify_u0_membership(sel, np.zeros((1, sc.n_nodes)), res.measures)
    assert rep.subsolution_ok and rep.measures_ok and not rep.tight_ok
    assert (0, 0) not in rep.loose_states and (0, 8) in rep.loose_states


def test_u0_dominates_feasible_family(small):
    sc, sel, sol, res = small
    duals = list(res.duals.values())
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.integers(len(duals), size=2)
        t = rng.random()
        w = t * duals[a] + (1 - t) * duals[b] - rng.exponential()
        assert sc.subsolution_slack(w, sel.c_h).min() >= -1e-9
        assert max(mu.integrate(w) for mu in res.measures) <= 1e-9
        assert np.all(res.values >= w - 1e-8)
    # the Mather dual shifted by its largest measure average is feasible too
    w = sol.w - max(mu.integrate(sol.w) for mu in res.measures)
    assert np.all(res.values >= w - 1e-8)


def test_more_measures_never_increase_u0():
    sc = default_scheme(scalar_problem(TWO_WELLS), 16, 9, h=0.04)
    lp = build_lp(sc)
    sol = solve_lp(lp)
    found = extreme_mather_measures(lp, 16, 0, sol)
    assert len(found) >= 2
    one = solve_u0(SelectionProblem(sc, sol.c_h, found[:1]), separate=False).values
    both = solve_u0(SelectionProblem(sc, sol.c_h, found), separate=False).values
    assert np.all(both <= one + 1e-9)
    assert np.any(both < one - 1e-3)


def test_separation_recovers_missing_measures():
    sc = default_scheme(scalar_problem(TWO_WELLS), 16, 9, h=0.04)
    sel, sol = selection_problem(sc, k=16)
    full = solve_u0(sel).values
    lone = SelectionProblem(sc, sel.c_h, sel.measures[:1], sel.face)
    res = solve_u0(lone)
    assert res.cuts >= 1
    assert np.allclose(res.values, full, atol=1e-8)


def test_seed_invariance_and_stability():
    sc = default_scheme(scalar_problem(), 16, 9, h=0.04)
    a = compute_u0(selection_problem(sc, k=4, seed=0)[0])
    b = compute_u0(selection_problem(sc, k=4, seed=9)[0])
    assert np.abs(a.values - b.values).max() <= 1e-8
    assert stability_diagnostic(sc, k=4) <= 1e-8


def test_symmetric_lift_equals_scalar():
    s1 = default_scheme(scalar_problem(), 32, 17)
    s2 = default_scheme(lifted_problem(scalar_problem()), 32, 17)
    u1 = compute_u0(selection_problem(s1, k=4)[0]).values
    u2 = compute_u0(selection_problem(s2, k=4)[0]).values
    assert np.abs(u2[0] - u2[1]).max() <= 2e-9
    assert np.abs(u2[0] - u1[0]).max() <= 2e-9


def test_selection_guards(small):
    sc, sel, sol, res = small
    with pytest.raises(ValidationError):
        SelectionProblem(sc, sel.c_h, [])
    with pytest.raises(ValidationError):
        SelectionProblem(sc, sel.c_h + 0.1, sel.measures)
    with pytest.raises(ValidationError):
        solve_u0(SelectionProblem(sc, sel.c_h, sel.measures))
    with pytest.raises(BudgetExceeded):
        solve_u0(sel, max_iterations=1)


def test_lower_bound_check(small):
    sc, sel, sol, res = small
    lam = 0.5
    u = solve_discounted(sc, lam, sel.c_h)
    from hjswitch.montecarlo import exact_occupation

    mu = exact_occupation(sc, u, 0, 8)
    zero = np.zeros((1, sc.n_nodes))
    assert lower_bound_check(sc, lam, zero, 8, 0, mu, sel.c_h, u=u) == pytest.approx(u.values[0, 8])
    assert lower_bound_check(sc, lam, sol.w, 8, 0, mu, sel.c_h, u=u) >= -1e-3
    assert lower_bound_check(sc, lam, res.values, 8, 0, mu, sel.c_h) >= -1e-3
    with pytest.raises(NotSubsolution):
        lower_bound_check(sc, lam, res.values + np.eye(1, sc.n_nodes, 3), 8, 0, mu, sel.c_h, u=u)


def test_convergence_study_flat():
    sc = default_scheme(scalar_problem("0.3"), 16, 9, h=0.04)
    rep = convergence_study(None, None, None, lambdas=(0.4, 0.2, 0.1), scheme=sc, k=2)
    assert np.abs(rep.u0.values).max() <= 1e-9
    assert all(r.dist_u0 <= 1e-9 for r in rep.rows)
    assert rep.ok
    assert rep.to_csv().splitlines()[0] == "lambda,dist_u0,ergodic,closedness"
    with pytest.raises(ValidationError):
        convergence_study(None, None, None, lambdas=(0.4, 0.2), scheme=sc)


def test_u_lambda_below_u0(small):
    sc, sel, sol, res = small
    w0 = res.values
    for lam in (0.4, 0.2, 0.1):
        u = solve_discounted(sc, lam, sel.c_h, w0=w0)
        assert np.all(u.values <= res.values + 5e-2)


def test_session_cache_shapes():
    sel, sol, u0 = selection("scalar", 32)
    assert u0.values.shape == (1, 32)
