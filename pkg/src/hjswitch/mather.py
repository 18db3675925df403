"""Discrete closed measures and Mather measures.

Variables are weights mu(i, x, k) on (mode, node, control), flattened in that
order. For every (mode j, node y) the stationarity row reads

    sum_k mu(j, y, k) - sum_{i,x,k} mu(i, x, k) P_ij alpha_{x - h v_k}(y) = 0

(nodal hat functions tested against the one-step kernel), plus total mass 1.
These rows sum to zero; the simplex keeps one artificial at level zero on the
redundant row, and the dual w is normalized so that its last entry is 0.
The cost of a column is h L_i(x, v_k); the optimum divided by h is -c_h.
The row duals w form a discrete critical subsolution:

    w_i(x) <= h L_i(x, v) + sum_j P_ij Interp[w_j](x - h v) - g,   g = -h c_h.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .simplex import LPSolution, SimplexLP

MAX_NNZ = 5_000_000


@dataclass(eq=False)
class DiscreteMeasure:
    """Nonnegative weights of shape (m, n_nodes, K)."""

    weights: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, float)
        if self.weights.ndim != 3:
            raise ValidationError("measure weights need shape (m, n_nodes, K)")
        if self.weights.min(initial=0.0) < -1e-12:
            raise ValidationError("measure has negative weights")

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def state_marginal(self) -> np.ndarray:
        return self.weights.sum(axis=2)

    def support(self, thr: float = 1e-9) -> frozenset:
        return frozenset(map(tuple, np.argwhere(self.weights > thr)))

    def integrate(self, table: np.ndarray) -> float:
        """Integral of a per-cell table (m, n_nodes, K) or per-state table (m, n_nodes)."""
        table = np.asarray(table, float)
        if table.ndim == 2:
            return float((self.state_marginal() * table).sum())
        return float((self.weights * table).sum())

    def csv_rows(self, grid, controls, thr: float = 0.0):
        for i, x, k in np.argwhere(self.weights > thr):
            yield (*grid.nodes[x], *controls.values[k], int(i), self.weights[i, x, k])


@dataclass(eq=False)
class MatherLP:
    scheme: object
    A: sp.csc_matrix
    b: np.ndarray
    cost: np.ndarray
    shape: tuple

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def stationarity(self) -> sp.csc_matrix:
        return stationarity_matrix(self.scheme)


@dataclass(eq=False)
class MatherSolution:
    measure: DiscreteMeasure
    objective: float
    c_h: float
    w: np.ndarray
    g: float
    gap: float
    dual_infeasibility: float
    lp: SimplexLP = field(repr=False)
    raw: LPSolution = field(repr=False)

    @property
    def reduced_costs(self) -> np.ndarray:
        return self.raw.reduced_costs


def stationarity_matrix(scheme) -> sp.csc_matrix:
    m, n, k = scheme.m, scheme.n_nodes, scheme.n_controls
    s = scheme.idx.shape[-1]
    n_cols = m * n * k
    cols = np.arange(n_cols).reshape(m, n, k)
    # outflow: +1 at own row
    own_rows = (np.arange(m)[:, None, None] * n + np.arange(n)[None, :, None]) * np.ones((1, 1, k), np.int64)
    rows = [own_rows.ravel()]
    vals = [np.ones(n_cols)]
    cidx = [cols.ravel()]
    for j in range(m):
        r = j * n + np.broadcast_to(scheme.idx[None], (m, n, k, s))
        v = -scheme.P[:, j][:, None, None, None] * np.broadcast_to(scheme.wts[None], (m, n, k, s))
        rows.append(r.ravel())
        vals.append(v.ravel())
        cidx.append(np.broadcast_to(cols[..., None], (m, n, k, s)).ravel())
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cidx))), shape=(m * n, n_cols)
    ).tocsc()
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def build_lp(scheme, max_nnz: int = MAX_NNZ) -> MatherLP:
    m, n, k = scheme.m, scheme.n_nodes, scheme.n_controls
    s = scheme.idx.shape[-1]
    nnz_est = m * n * k * (2 + m * s)
    if nnz_est > max_nnz:
        raise ValidationError(f"LP would have ~{nnz_est} nonzeros (limit {max_nnz})")
    stat = stationarity_matrix(scheme)
    A = sp.vstack([stat, sp.csr_matrix(np.ones((1, m * n * k)))], format="csc")
    b = np.zeros(m * n + 1)
    b[-1] = 1.0
    cost = (scheme.h * scheme.lagrangian).ravel()
    return MatherLP(scheme, A, b, cost, (m, n, k))


def solve_lp(lp: MatherLP, tol: float = 1e-9) -> MatherSolution:
    """Mather measure (an optimal vertex), critical value and dual certificate."""
    h = lp.scheme.h
    solver = SimplexLP(lp.A, lp.b, lp.cost, tol=tol)
    raw = solver.solve()
    m, n, _ = lp.shape
    # (w + a, g) is an equally good dual for any constant a; pin the last entry
    w = (raw.y[:-1] - raw.y[-2]).reshape(m, n)
    measure = DiscreteMeasure(raw.x.reshape(lp.shape) / raw.x.sum())
    objective = raw.objective / h
    return MatherSolution(
        measure=measure,
        objective=objective,
        c_h=-objective,
        w=w,
        g=float(raw.y[-1]),
        gap=raw.gap / h,
        dual_infeasibility=raw.dual_infeasibility,
        lp=solver,
        raw=raw,
    )


def closedness_residual(scheme, mu) -> float:
    """Largest stationarity violation over nodal test functions."""
    wts = mu.weights if isinstance(mu, DiscreteMeasure) else np.asarray(mu, float)
    if wts.shape != (scheme.m, scheme.n_nodes, scheme.n_controls):
        raise ValidationError(f"measure shape {wts.shape} does not match the scheme")
    mixed = np.einsum("ij,ixk->jxk", scheme.P, wts)
    inflow = np.zeros((scheme.m, scheme.n_nodes))
    for j in range(scheme.m):
        np.add.at(inflow[j], scheme.idx, mixed[j][..., None] * scheme.wts)
    return float(np.abs(wts.sum(axis=2) - inflow).max())


class MatherFace:
    """The optimal face of the Mather LP, for re-optimizing auxiliary objectives.

    The face is exactly the set of feasible measures supported on columns whose
    reduced cost (for the optimal dual) is at most ``tol_face``.
    """

    def __init__(self, lp: MatherLP, solution: MatherSolution, tol_face: float = 1e-8):
        self.lp = lp
        self.columns = solution.reduced_costs <= tol_face
        self.simplex = SimplexLP(lp.A, lp.b, np.zeros(lp.n_vars), tol=solution.lp.tol)
        self.simplex.allowed = self.columns.copy()
        self.simplex.basis = solution.raw.basis.copy()
        self.optimum = solution.objective

    def minimize(self, objective: np.ndarray) -> DiscreteMeasure:
        obj = np.asarray(objective, float).reshape(-1)
        self.simplex.c = np.where(self.columns, obj, 0.0)
        raw = self.simplex.solve()
        x = raw.x * self.columns
        return DiscreteMeasure(x.reshape(self.lp.shape) / x.sum(), {"objective": raw.objective})

    def maximize_state_function(self, w: np.ndarray) -> tuple[DiscreteMeasure, float]:
        """argmax over the face of sum mu(i,x,k) w_i(x), with the maximum."""
        lift = np.broadcast_to(np.asarray(w, float)[..., None], self.lp.shape)
        mu = self.minimize(-lift)
        return mu, mu.integrate(np.asarray(w, float))


def extreme_mather_measures(lp: MatherLP, k: int, seed: int = 0, solution=None, tol_face: float = 1e-8) -> list:
    """Up to k vertices of the optimal face from random auxiliary objectives, deduplicated by support."""
    if k <= 0:
        return []
    solution = solve_lp(lp) if solution is None else solution
    face = MatherFace(lp, solution, tol_face)
    rng = np.random.default_rng(seed)
    found, supports = [], set()
    for _ in range(k):
        mu = face.minimize(rng.standard_normal(lp.n_vars))
        key = mu.support()
        if key not in supports:
            supports.add(key)
            found.append(mu)
    for mu in found:
        mu.meta["k_requested"] = k
        mu.meta["distinct"] = len(found)
    return found
