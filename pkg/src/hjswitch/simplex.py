"""Revised simplex for  min c.x  s.t.  A x = b, x >= 0  with sparse A.

Bookkeeping:
  * columns 0..m-1 are artificial unit columns, real columns follow, so
    appending real columns never renumbers a basis;
  * outside phase one, artificials are variables fixed at zero: they never
    enter, and a basic artificial leaves as soon as a pivot touches its row;
  * the basis inverse is kept as a dense matrix updated by eta pivots and
    refactored periodically (row counts stay in the hundreds at desk scale);
  * Devex pricing with a Harris ratio test and a relative pivot threshold,
    switching to Bland's rule after a run of degenerate pivots;
  * a basis that turns out singular at refactorization is repaired by
    swapping its dependent columns for artificials, followed by a warm
    phase one.

A solved instance keeps its basis. Changing ``c`` (restricted to an allowed
column set, optionally) or ``b`` and calling :meth:`SimplexLP.solve` again
warm-starts with the primal or dual simplex, whichever the old basis is
feasible for.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import NumericalError

logger = logging.getLogger(__name__)


class Infeasible(NumericalError):
    pass


class Unbounded(NumericalError):
    pass


class IterationLimit(NumericalError):
    pass


class _Singular(Exception):
    pass


@dataclass
class LPSolution:
    x: np.ndarray
    objective: float
    y: np.ndarray
    reduced_costs: np.ndarray
    basis: np.ndarray
    iterations: int
    dual_objective: float = float("nan")

    @property
    def gap(self) -> float:
        return abs(self.objective - self.dual_objective)

    @property
    def dual_infeasibility(self) -> float:
        return float(max(0.0, -self.reduced_costs.min(initial=0.0)))


class SimplexLP:
    REFACTOR_EVERY = 64
    DEGENERATE_RUN = 1000  # Bland fallback after max(this, 10 m) degenerate pivots
    HARRIS_DELTA = 1e-9
    PIV_REL = 1e-7
    MAX_REPAIRS = 50

    def __init__(self, A, b, c, tol: float = 1e-9, max_iter: int = 200_000):
        A = sp.csc_matrix(A, dtype=float)
        self.m, self.n = A.shape
        self.tol = tol
        self.piv_tol = 1e-7
        self.max_iter = max_iter
        self.b = np.asarray(b, float).copy()
        self._art_sign = np.where(self.b >= 0, 1.0, -1.0)
        self._real = A
        self._assemble()
        self.c = np.asarray(c, float).copy()
        self.basis: np.ndarray | None = None
        self.allowed: np.ndarray | None = None
        self._binv = None
        self.iterations = 0
        self.repairs = 0

    def _assemble(self) -> None:
        art = sp.diags(self._art_sign, format="csc")
        self._full = sp.hstack([art, self._real], format="csc")
        self._fullT = self._full.T.tocsr()

    @property
    def n_total(self) -> int:
        return self.m + self.n

    def add_columns(self, cols, costs) -> None:
        cols = sp.csc_matrix(cols, dtype=float)
        if cols.shape[0] != self.m:
            raise ValueError("new columns have the wrong height")
        self._real = sp.hstack([self._real, cols], format="csc")
        self._assemble()
        self.c = np.concatenate([self.c, np.asarray(costs, float).reshape(-1)])
        if self.allowed is not None:
            self.allowed = np.concatenate([self.allowed, np.ones(cols.shape[1], bool)])
        self.n += cols.shape[1]

    def _column(self, j: int) -> np.ndarray:
        out = np.zeros(self.m)
        lo, hi = self._full.indptr[j], self._full.indptr[j + 1]
        out[self._full.indices[lo:hi]] = self._full.data[lo:hi]
        return out

    # -- factorization ------------------------------------------------------------

    def _refactor(self) -> None:
        bmat = self._full[:, self.basis].toarray()
        try:
            lu = sla.lu_factor(bmat, check_finite=False)
        except (ValueError, np.linalg.LinAlgError):
            raise _Singular() from None
        diag = np.abs(np.diag(lu[0]))
        if diag.min() <= 1e-11 * max(1.0, diag.max()):
            raise _Singular()
        self._binv = sla.lu_solve(lu, np.eye(self.m), check_finite=False)
        self._since_refactor = 0

    def _repair(self) -> None:
        """Replace dependent basic columns by artificials of uncovered rows."""
        self.repairs += 1
        if self.repairs > self.MAX_REPAIRS:
            raise NumericalError("basis keeps degenerating to singular")
        bmat = self._full[:, self.basis].toarray()
        _, r, perm = sla.qr(bmat, pivoting=True, mode="economic")
        diag = np.abs(np.diag(r))
        rank = int((diag > 1e-9 * max(1.0, diag[0])).sum())
        keep = perm[:rank]
        q, _ = np.linalg.qr(bmat[:, keep], mode="complete")
        comp = q[:, rank:]
        _, _, rows = sla.qr(comp.T, pivoting=True, mode="economic")
        rows = rows[: self.m - rank]
        logger.debug("basis repair: rank %d of %d", rank, self.m)
        for pos, row in zip(perm[rank:], rows):
            self.basis[pos] = row
        self._refactor()

    def _factor(self) -> bool:
        """Refactor, repairing if needed; True if a repair happened."""
        try:
            self._refactor()
            return False
        except _Singular:
            self._repair()
            return True

    def _pivot(self, r: int, q: int, u: np.ndarray) -> None:
        self.basis[r] = q
        self._since_refactor += 1
        if self._since_refactor >= self.REFACTOR_EVERY:
            self._refactor()
            return
        row = self._binv[r] / u[r]
        self._binv -= np.outer(u, row)
        self._binv[r] = row

    @property
    def _run_limit(self) -> int:
        return max(self.DEGENERATE_RUN, 10 * self.m)

    def _reduced(self, cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y = cost[self.basis] @ self._binv
        d = cost - self._fullT @ y
        d[self.basis] = 0.0
        return y, d

    # -- primal simplex -------------------------------------------------------------

    def _primal(self, cost: np.ndarray, enter_mask: np.ndarray, fixed_art: bool) -> None:
        bland = False
        degenerate = 0
        xb = self._binv @ self.b
        ref = np.ones(self.n_total)  # Devex reference weights
        for _ in range(self.max_iter):
            self.iterations += 1
            _, d = self._reduced(cost)
            cand = enter_mask & (d < -self.tol)
            cand[self.basis] = False
            if not cand.any():
                return
            idx = np.flatnonzero(cand)
            q = int(idx[0]) if bland else int(idx[np.argmax(d[idx] ** 2 / ref[idx])])
            u = self._binv @ self._column(q)
            thr = max(self.piv_tol, self.PIV_REL * np.abs(u).max())
            art = self.basis < self.m
            if fixed_art and np.any(art & (np.abs(u) > thr)):
                # a basic artificial is touched: pivot it out at zero step
                rows = np.flatnonzero(art & (np.abs(u) > thr))
                r = int(rows[np.argmax(np.abs(u[rows]))])
                theta = 0.0
            else:
                pos = u > thr
                if fixed_art:
                    pos &= ~art
                if not pos.any():
                    raise Unbounded("objective unbounded below")
                xpos = np.maximum(xb, 0.0)
                ratios = np.full(self.m, np.inf)
                ratios[pos] = xpos[pos] / u[pos]
                if bland:
                    ties = np.flatnonzero(ratios <= ratios.min() + 1e-12)
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    bound = ((xpos[pos] + self.HARRIS_DELTA) / u[pos]).min()
                    ties = np.flatnonzero(ratios <= bound)
                    r = int(ties[np.argmax(u[ties])])
                theta = xpos[r] / u[r]
            if theta <= 1e-13:
                degenerate += 1
                if degenerate > self._run_limit:
                    bland = True
            else:
                degenerate = 0
                bland = False
            ratio = (self._fullT @ self._binv[r]) / u[r]
            leaving = self.basis[r]
            ref = np.maximum(ref, ratio**2 * ref[q])
            ref[leaving] = max(ref[q] / u[r] ** 2, 1.0)
            if ref.max() > 1e8:
                ref[:] = 1.0
            self._pivot(r, q, u)
            if self._since_refactor == 0:
                xb = self._binv @ self.b
            else:
                xb = xb - theta * u
                xb[r] = theta
        raise IterationLimit(f"primal simplex exceeded {self.max_iter} iterations")

    # -- dual simplex -----------------------------------------------------------------

    def _primal_violation(self, xb: np.ndarray) -> np.ndarray:
        """Per-row bound violation; basic artificials are bounded to [0, 0]."""
        viol = np.maximum(-xb, 0.0)
        art = self.basis < self.m
        viol[art] = np.abs(xb[art])
        return viol

    def _dual(self, cost: np.ndarray, enter_mask: np.ndarray) -> None:
        bland = False
        stalls = 0
        for _ in range(self.max_iter):
            self.iterations += 1
            xb = self._binv @ self.b
            viol = self._primal_violation(xb)
            bad = np.flatnonzero(viol > self.tol)
            if bad.size == 0:
                return
            r = int(bad[np.argmin(self.basis[bad])]) if bland else int(bad[np.argmax(viol[bad])])
            _, d = self._reduced(cost)
            alpha = self._fullT @ self._binv[r]
            # leaving below zero needs alpha < 0; an artificial above zero needs alpha > 0
            sgn = 1.0 if xb[r] > 0 else -1.0
            a = sgn * alpha
            thr = max(self.piv_tol, self.PIV_REL * np.abs(alpha).max(initial=0.0))
            cand = enter_mask & (a > thr)
            cand[self.basis] = False
            idx = np.flatnonzero(cand)
            if idx.size == 0:
                raise Infeasible("dual simplex: primal infeasible")
            dpos = np.maximum(d[idx], 0.0)
            ratios = dpos / a[idx]
            if bland:
                ties = idx[ratios <= ratios.min() + 1e-12]
                q = int(ties.min())
            else:
                bound = ((dpos + self.HARRIS_DELTA) / a[idx]).min()
                ties = idx[ratios <= bound]
                q = int(ties[np.argmax(a[ties])])
            step = max(d[q], 0.0) / a[q]
            if step <= 1e-13:
                stalls += 1
                if stalls > self._run_limit:
                    bland = True
            else:
                stalls = 0
                bland = False
            u = self._binv @ self._column(q)
            self._pivot(r, q, u)
        raise IterationLimit(f"dual simplex exceeded {self.max_iter} iterations")

    # -- phase one --------------------------------------------------------------------

    def _phase_one(self, warm: bool = False) -> None:
        """Drive artificials to zero, from scratch or from the current basis."""
        if warm:
            xb = self._binv @ self.b
            real_bad = (self.basis >= self.m) & (xb < -self.tol)
            warm = not real_bad.any()
        if warm:
            flip = (self.basis < self.m) & (xb < 0)
            if flip.any():
                self._art_sign[self.basis[flip]] *= -1.0
                self._assemble()
                self._factor()
        else:
            new_sign = np.where(self.b >= 0, 1.0, -1.0)
            if np.any(new_sign != self._art_sign):
                self._art_sign = new_sign
                self._assemble()
            self.basis = np.arange(self.m)
            self._refactor()
        cost1 = np.zeros(self.n_total)
        cost1[: self.m] = 1.0
        self._primal(cost1, self._enter_mask(), fixed_art=False)
        infeas = float((self._binv @ self.b)[self.basis < self.m].sum())
        if infeas > 1e-7 * max(1.0, np.abs(self.b).max()):
            raise Infeasible(f"phase one ended with infeasibility {infeas:.3e}")
        self._drive_out_artificials()

    def _drive_out_artificials(self) -> None:
        mask = self._enter_mask()
        for r in np.flatnonzero(self.basis < self.m):
            alpha = self._fullT @ self._binv[r]
            alpha[~mask] = 0.0
            alpha[self.basis] = 0.0
            j = int(np.argmax(np.abs(alpha)))
            if abs(alpha[j]) > 1e-7:
                self._pivot(r, j, self._binv @ self._column(j))
        # remaining artificials sit on redundant rows at level zero

    def _enter_mask(self) -> np.ndarray:
        mask = np.ones(self.n_total, bool)
        mask[: self.m] = False
        if self.allowed is not None:
            mask[self.m :] &= self.allowed
        return mask

    def full_cost(self) -> np.ndarray:
        cost = np.zeros(self.n_total)
        cost[self.m :] = self.c
        return cost

    # -- driver -------------------------------------------------------------------

    def solve(self) -> LPSolution:
        """Solve for the current (b, c, allowed), warm-starting when a basis exists."""
        self.iterations = 0
        self.repairs = 0
        cost = self.full_cost()
        enter = self._enter_mask()
        phase_one = "cold" if self.basis is None else None
        if phase_one is None:
            self._factor()
            xb = self._binv @ self.b
            _, d = self._reduced(cost)
            nonbasic = enter.copy()
            nonbasic[self.basis] = False
            if self._primal_violation(xb).max(initial=0.0) <= self.tol:
                pass
            elif d[nonbasic].min(initial=0.0) >= -self.tol:
                try:
                    self._dual(cost, enter)
                except _Singular:
                    self._repair()
                    phase_one = "warm"
            else:
                phase_one = "warm"
        for _ in range(self.MAX_REPAIRS + 1):
            try:
                if phase_one:
                    self._phase_one(warm=phase_one == "warm")
                self._primal(cost, enter, fixed_art=True)
                self._refactor()
            except _Singular:
                self._repair()
                phase_one = "warm"
                continue
            xb = self._binv @ self.b
            if self._primal_violation(xb).max(initial=0.0) <= 1e-7 * max(1.0, np.abs(self.b).max()):
                return self._solution(cost)
            phase_one = "warm"
        raise NumericalError("simplex failed to reach a feasible optimal basis")

    def _solution(self, cost: np.ndarray) -> LPSolution:
        xb = self._binv @ self.b
        xfull = np.zeros(self.n_total)
        xfull[self.basis] = xb
        x = np.maximum(xfull[self.m :], 0.0)
        y, d = self._reduced(cost)
        return LPSolution(
            x=x,
            objective=float(self.c @ x),
            y=y,
            reduced_costs=d[self.m :].copy(),
            basis=self.basis.copy(),
            iterations=self.iterations,
            dual_objective=float(self.b @ y),
        )
