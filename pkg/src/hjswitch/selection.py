"""The selected critical solution u0 and the vanishing-discount study.

u0_l(y) is the largest value w_l(y) over discrete critical subsolutions w whose
state-mode average against every Mather measure is <= 0. Each (mode, node)
target is one LP, solved in its dual (measure) form

    min  sum mu h (L + c_h + eps)   s.t.  A_stat mu + M nu = e_(l,y),  mu, nu >= 0

where the columns of M are state-mode marginals of Mather measures. The row
duals of an optimal basis are a maximizing subsolution w. Consecutive targets
differ only in the right-hand side, so the previous basis stays dual feasible.

The Mather constraints only enter through finitely many measures. After each
target, the maximizing w is checked against the whole optimal face of the
Mather LP; a face vertex with positive w-average is appended to M and the
target is re-solved, so the result does not depend on which vertices were
sampled up front.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError, ValidationError
from .mather import (
    DiscreteMeasure,
    MatherFace,
    build_lp,
    closedness_residual,
    extreme_mather_measures,
    solve_lp,
    stationarity_matrix,
)
from .simplex import SimplexLP
from .solver import DiscreteScheme, GridVectorFunction, build_scheme, solve_discounted

logger = logging.getLogger(__name__)

# keeps the measure LP bounded when c_h carries round-off from below
C_GUARD = 1e-10


class NotSubsolution(ValidationError):
    pass


class BudgetExceeded(NumericalError):
    pass


@dataclass(eq=False)
class SelectionProblem:
    scheme: DiscreteScheme
    c_h: float
    measures: list
    face: MatherFace | None = None
    tol_face: float = 1e-8

    def __post_init__(self):
        if not self.measures:
            raise ValidationError("need at least one Mather measure")
        target = -self.c_h
        for mu in self.measures:
            res = closedness_residual(self.scheme, mu)
            if res > 1e-8:
                raise ValidationError(f"supplied measure is not closed (residual {res:.2e})")
            gap = mu.integrate(self.scheme.lagrangian) - target
            if abs(gap) > self.tol_face:
                raise ValidationError(f"supplied measure is off the optimal face by {gap:.2e}")


def selection_problem(scheme: DiscreteScheme, k: int = 16, seed: int = 0, tol: float = 1e-9, tol_face: float = 1e-8):
    """Mather LP, k sampled face vertices and the face itself; returns (SelectionProblem, MatherSolution)."""
    lp = build_lp(scheme)
    sol = solve_lp(lp, tol)
    measures = extreme_mather_measures(lp, k, seed, sol, tol_face) or [sol.measure]
    face = MatherFace(lp, sol, tol_face)
    return SelectionProblem(scheme, sol.c_h, measures, face, tol_face), sol


@dataclass
class U0Result:
    values: np.ndarray  # (m, n_nodes); NaN where not requested
    duals: dict  # target -> maximizing subsolution (m, n_nodes)
    cuts: int
    iterations: int
    measures: list = field(repr=False, default_factory=list)

    def function(self, grid) -> GridVectorFunction:
        return GridVectorFunction(self.values, grid, {"cuts": self.cuts, "iterations": self.iterations})


def solve_u0(
    sel: SelectionProblem,
    targets=None,
    separate: bool = True,
    sep_tol: float = 1e-9,
    max_cuts: int = 200,
    max_iterations: int | None = None,
) -> U0Result:
    """Per-target LPs; ``targets`` is an iterable of (mode, node), all by default."""
    sc = sel.scheme
    m, n = sc.m, sc.n_nodes
    if targets is None:
        targets = [(i, x) for i in range(m) for x in range(n)]
    targets = [(int(i), int(x)) for i, x in targets]
    if separate and sel.face is None:
        raise ValidationError("separation needs the optimal face")
    stat = stationarity_matrix(sc)
    marg = np.stack([mu.state_marginal().ravel() for mu in sel.measures], axis=1)
    A = sp.hstack([stat, sp.csc_matrix(marg)], format="csc")
    cost = np.concatenate([(sc.h * (sc.lagrangian + sel.c_h + C_GUARD)).ravel(), np.zeros(marg.shape[1])])
    b = np.zeros(m * n)
    lp = SimplexLP(A, b, cost)
    values = np.full((m, n), np.nan)
    duals = {}
    cuts = 0
    total_iter = 0
    extra = []
    for i, x in targets:
        lp.b = np.zeros(m * n)
        lp.b[i * n + x] = 1.0
        while True:
            sol = lp.solve()
            total_iter += sol.iterations
            if max_iterations is not None and total_iter > max_iterations:
                raise BudgetExceeded(f"LP iteration budget {max_iterations} exceeded")
            w = sol.y.reshape(m, n)
            if not separate:
                break
            mu, avg = sel.face.maximize_state_function(w)
            if avg <= sep_tol:
                break
            if cuts >= max_cuts:
                raise BudgetExceeded(f"more than {max_cuts} separation cuts")
            cuts += 1
            extra.append(mu)
            lp.add_columns(mu.state_marginal().reshape(-1, 1), [0.0])
        values[i, x] = sol.objective
        duals[(i, x)] = w
    return U0Result(values, duals, cuts, total_iter, list(sel.measures) + extra)


def compute_u0(sel: SelectionProblem, **kw) -> GridVectorFunction:
    res = solve_u0(sel, **kw)
    u0 = res.function(sel.scheme.grid)
    u0.meta["measures"] = len(res.measures)
    return u0


def stability_diagnostic(scheme: DiscreteScheme, k: int = 16, seed: int = 0, targets=None) -> float:
    """max |u0(2k measures) - u0(k measures)| without separation cuts, on the given targets."""
    lp = build_lp(scheme)
    sol = solve_lp(lp)
    a = extreme_mather_measures(lp, k, seed, sol) or [sol.measure]
    b = extreme_mather_measures(lp, 2 * k, seed, sol) or [sol.measure]
    ua = solve_u0(SelectionProblem(scheme, sol.c_h, a), targets, separate=False).values
    ub = solve_u0(SelectionProblem(scheme, sol.c_h, b), targets, separate=False).values
    ok = ~np.isnan(ua)
    return float(np.abs(ua[ok] - ub[ok]).max())


# -- checks -----------------------------------------------------------------------


@dataclass
class MembershipReport:
    min_slack: float
    max_measure_average: float
    max_tightness: float
    subsolution_ok: bool
    measures_ok: bool
    tight_ok: bool
    loose_states: list

    @property
    def ok(self) -> bool:
        return self.subsolution_ok and self.measures_ok and self.tight_ok


def verify_u0_membership(sel: SelectionProblem, u0, measures=None) -> MembershipReport:
    """(a) subsolution slack >= -1e-8, (b) every measure average <= 1e-6, (c) tight somewhere at each state."""
    sc = sel.scheme
    w = u0.values if isinstance(u0, GridVectorFunction) else np.asarray(u0, float)
    slack = sc.subsolution_slack(w, sel.c_h)
    per_state = slack.min(axis=-1)
    measures = sel.measures if measures is None else measures
    avg = max(mu.integrate(w) for mu in measures)
    loose = [tuple(map(int, s)) for s in np.argwhere(per_state > 1e-6)]
    return MembershipReport(
        min_slack=float(slack.min()),
        max_measure_average=float(avg),
        max_tightness=float(per_state.max()),
        subsolution_ok=bool(slack.min() >= -1e-8),
        measures_ok=bool(avg <= 1e-6),
        tight_ok=not loose,
        loose_states=loose,
    )


def lower_bound_check(
    scheme: DiscreteScheme,
    lam: float,
    w,
    y: int,
    mode: int,
    mu_y: DiscreteMeasure,
    c_h: float,
    u=None,
    sub_tol: float = 1e-7,
    tol: float = 1e-10,
) -> float:
    """u^lam_l(y) - w_l(y) + <w, marginal of mu_y>; nonnegative up to discretization error.

    ``u`` is the discounted solution at c = c_h (solved here if omitted),
    ``y`` a node index and ``w`` a critical subsolution.
    """
    wv = w.values if isinstance(w, GridVectorFunction) else np.atleast_2d(np.asarray(w, float))
    slack = scheme.subsolution_slack(wv, c_h).min()
    if slack < -sub_tol:
        raise NotSubsolution(f"w violates the critical subsolution inequality by {-slack:.2e}")
    if u is None:
        u = solve_discounted(scheme, lam, c_h, tol)
    uv = u.values if isinstance(u, GridVectorFunction) else np.asarray(u, float)
    return float(uv[mode, y] - wv[mode, y] + mu_y.integrate(wv))


# -- convergence study ----------------------------------------------------------------


@dataclass
class StudyRow:
    lam: float
    dist_u0: float
    ergodic: float
    closedness: float


@dataclass
class ConvergenceReport:
    rows: list
    c_h: float
    bound: float
    u0: GridVectorFunction = field(repr=False)
    probes: list = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        d = [r.dist_u0 for r in self.rows]
        return all(b <= 1.1 * a for a, b in zip(d, d[1:]))

    @property
    def final_ok(self) -> bool:
        return self.rows[-1].dist_u0 <= self.bound

    @property
    def ok(self) -> bool:
        return self.monotone and self.final_ok

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["lambda", "dist_u0", "ergodic", "closedness"])
        for r in self.rows:
            wr.writerow([f"{v:.17g}" for v in (r.lam, r.dist_u0, r.ergodic, r.closedness)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "c_h": self.c_h,
                "bound": self.bound,
                "monotone": self.monotone,
                "final_ok": self.final_ok,
                "probes": self.probes,
                "rows": [asdict(r) for r in self.rows],
            },
            indent=2,
        )


def convergence_study(
    problem,
    grid,
    controls,
    h=None,
    lambdas=(0.4, 0.2, 0.1, 0.05),
    probes=None,
    bound: float = 5e-2,
    tol: float = 1e-9,
    k: int = 16,
    seed: int = 0,
    scheme: DiscreteScheme | None = None,
) -> ConvergenceReport:
    """Rows (lam, ||u^lam - u0||, ||lam' u^{lam,0} + c_h||, max closedness of mu^lam_y over probes)."""
    from .montecarlo import exact_occupation

    lambdas = [float(l) for l in lambdas]
    if len(lambdas) < 3 or any(b >= a for a, b in zip(lambdas, lambdas[1:])) or lambdas[-1] <= 0:
        raise ValidationError("need at least three strictly decreasing positive rates")
    sc = scheme if scheme is not None else build_scheme(problem, grid, controls, h)
    sel, _ = selection_problem(sc, k, seed, tol)
    u0 = compute_u0(sel)
    if probes is None:
        probes = [(0, int(x)) for x in np.linspace(0, sc.n_nodes, 5, endpoint=False).astype(int)]
    rows = []
    for lam in lambdas:
        u = solve_discounted(sc, lam, sel.c_h, tol, w0=u0.values)
        u_free = solve_discounted(sc, lam, 0.0, tol, w0=u.values - sel.c_h / sc.effective_rate(lam))
        resid = max(closedness_residual(sc, exact_occupation(sc, u, i, x)) for i, x in probes)
        rows.append(
            StudyRow(
                lam=lam,
                dist_u0=float(np.abs(u.values - u0.values).max()),
                ergodic=float(np.abs(sc.effective_rate(lam) * u_free.values + sel.c_h).max()),
                closedness=resid,
            )
        )
    return ConvergenceReport(rows, sel.c_h, bound, u0, [list(p) for p in probes])
