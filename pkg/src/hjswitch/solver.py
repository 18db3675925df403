"""Monotone semi-Lagrangian scheme for the discounted switching system.

One step of the scheme is

    (T w)_i(x) = min_k  h (L_i(x, v_k) + c) + exp(-lam h) * sum_j P_ij Interp[w_j](x - h v_k)

with P = exp(-hB). It is monotone, commutes with constants up to the factor
exp(-lam h), and is an exp(-lam h)-contraction in the sup norm.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .markov import transition_matrix
from .model import ControlGrid, ProblemSpec, TorusGrid

logger = logging.getLogger(__name__)


class NonConvergence(NumericalError):
    pass


class BoundaryControl(NumericalError):
    """An optimal control sits on the edge of the control set; raise v_max."""


@dataclass(eq=False)
class GridVectorFunction:
    """Values w_i(x) for every mode i and grid node x, shape (m, n_nodes)."""

    values: np.ndarray
    grid: TorusGrid
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, float))
        if self.values.shape[1] != self.grid.n_nodes:
            raise ValidationError("values do not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("grid function has non-finite values")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    def lipschitz(self) -> np.ndarray:
        """Per-component estimate from differences between axis neighbours."""
        n, d = self.grid.n, self.grid.d
        v = self.values.reshape((self.m,) + (n,) * d)
        out = np.zeros(self.m)
        for ax in range(1, d + 1):
            diff = np.abs(np.roll(v, -1, axis=ax) - v).reshape(self.m, -1).max(axis=1)
            out = np.maximum(out, diff * n)
        return out

    def at(self, points) -> np.ndarray:
        return self.grid.interpolate(self.values, points)

    def shifted(self, a: float) -> "GridVectorFunction":
        return GridVectorFunction(self.values + a, self.grid, dict(self.meta))

    def csv_rows(self):
        for i in range(self.m):
            for k, x in enumerate(self.grid.nodes):
                yield (*x, i, self.values[i, k])


@dataclass(frozen=True, eq=False)
class DiscreteScheme:
    problem: ProblemSpec
    grid: TorusGrid
    controls: ControlGrid
    h: float
    P: np.ndarray
    lagrangian: np.ndarray  # (m, n_nodes, K)
    idx: np.ndarray  # (n_nodes, K, 2**d) stencil of x - h v
    wts: np.ndarray

    @property
    def m(self) -> int:
        return self.problem.m

    @property
    def n_nodes(self) -> int:
        return self.grid.n_nodes

    @property
    def n_controls(self) -> int:
        return self.controls.size

    @property
    def cost(self) -> np.ndarray:
        return self.h * self.lagrangian

    def beta(self, lam: float) -> float:
        return math.exp(-lam * self.h)

    def effective_rate(self, lam: float) -> float:
        """(1 - exp(-lam h)) / h, the rate for which the shift identity is exact."""
        return -math.expm1(-lam * self.h) / self.h

    def transport(self, w: np.ndarray) -> np.ndarray:
        """sum_j P_ij Interp[w_j](x - h v_k), shape (m, n_nodes, K)."""
        pw = self.P @ np.atleast_2d(w)
        return (pw[:, self.idx] * self.wts).sum(axis=-1)

    def q_values(self, w: np.ndarray, lam: float, c: float) -> np.ndarray:
        return self.h * (self.lagrangian + c) + self.beta(lam) * self.transport(w)

    def apply(self, w, lam: float, c: float) -> np.ndarray:
        return self.q_values(_vals(w), lam, c).min(axis=-1)

    def apply_with_policy(self, w, lam: float, c: float) -> tuple[np.ndarray, np.ndarray]:
        q = self.q_values(_vals(w), lam, c)
        k = q.argmin(axis=-1)  # lowest index wins ties
        return np.take_along_axis(q, k[..., None], axis=-1)[..., 0], k

    def subsolution_slack(self, w, c: float, lam: float = 0.0) -> np.ndarray:
        """h(L + c) + beta * transport(w) - w per (mode, node, control); >= 0 on subsolutions."""
        w = _vals(w)
        return self.q_values(w, lam, c) - w[..., None]


def _vals(w) -> np.ndarray:
    return w.values if isinstance(w, GridVectorFunction) else np.atleast_2d(np.asarray(w, float))


def build_scheme(problem: ProblemSpec, grid: TorusGrid, controls: ControlGrid, h: float | None = None) -> DiscreteScheme:
    if grid.d != problem.d or controls.d != problem.d:
        raise ValidationError(
            f"dimension mismatch: problem d={problem.d}, grid d={grid.d}, controls d={controls.d}"
        )
    h = grid.spacing if h is None else float(h)
    if not h > 0:
        raise ValidationError("time step must be positive")
    rates = problem.coupling.rates
    if problem.m > 1 and h * rates.max() >= 1:
        warnings.warn(f"h * max b_ii = {h * rates.max():.3g} >= 1; mode mixing per step is coarse")
    if controls.v_max * h >= 0.5:
        raise ValidationError("v_max * h must stay below half the torus")
    feet = grid.nodes[:, None, :] - h * controls.values[None, :, :]
    idx, wts = grid.stencil(feet.reshape(-1, grid.d))
    shape = (grid.n_nodes, controls.size, -1)
    return DiscreteScheme(
        problem=problem,
        grid=grid,
        controls=controls,
        h=h,
        P=transition_matrix(problem.coupling, h).entries,
        lagrangian=problem.lagrangian_table(grid.nodes, controls),
        idx=idx.reshape(shape),
        wts=wts.reshape(shape),
    )


def default_scheme(problem: ProblemSpec, n: int, controls: int = 65, h=None, v_max=None, c=None) -> DiscreteScheme:
    """Scheme with h = dx and the default control radius."""
    grid = TorusGrid(problem.d, n)
    vm = problem.default_v_max(c) if v_max is None else v_max
    return build_scheme(problem, grid, ControlGrid.uniform(problem.d, controls, vm), h)


def solve_discounted(
    scheme: DiscreteScheme,
    lam: float,
    c: float,
    tol: float = 1e-9,
    w0=None,
    max_iter: int = 2_000_000,
    check_boundary: bool = True,
) -> GridVectorFunction:
    """Fixed point of T by value iteration with McQueen-Porteus bounds.

    If T w - w lies in [lo, hi] then the fixed point lies between
    T w + k lo and T w + k hi with k = beta / (1 - beta); iteration stops once
    half that bracket is below ``tol`` and returns its midpoint. The returned
    function is therefore within ``tol`` of the fixed point, and its residual
    is at most tol * (1 - beta).
    """
    if not lam > 0:
        raise ValidationError("discount rate must be positive")
    beta = scheme.beta(lam)
    k = beta / -math.expm1(-lam * scheme.h)
    w = np.zeros((scheme.m, scheme.n_nodes)) if w0 is None else _vals(w0).copy()
    log = []
    for it in range(1, max_iter + 1):
        tw = scheme.apply(w, lam, c)
        diff = tw - w
        lo, hi = float(diff.min()), float(diff.max())
        log.append((it, max(abs(lo), abs(hi))))
        if 0.5 * k * (hi - lo) <= tol:
            u = tw + 0.5 * k * (lo + hi)
            tu, pol = scheme.apply_with_policy(u, lam, c)
            residual = float(np.abs(tu - u).max())
            if check_boundary and np.any(scheme.controls.on_boundary(pol)):
                raise BoundaryControl("an optimal control lies on |v| = v_max")
            meta = {"lam": lam, "c": c, "iterations": it, "residual": residual, "error_bound": 0.5 * k * (hi - lo), "log": log}
            return GridVectorFunction(u, scheme.grid, meta)
        floor = 64 * np.finfo(float).eps * max(1.0, float(np.abs(tw).max()))
        if hi - lo <= floor:
            raise NonConvergence(
                f"tolerance {tol:g} below round-off floor {0.5 * k * floor:.2e} at lam={lam:g}"
            )
        w = tw
    raise NonConvergence(f"no convergence in {max_iter} iterations (lam={lam:g}, h={scheme.h:g})")


def shift_identity_check(scheme, lam: float, c: float, c2: float, tol: float = 1e-9) -> float:
    """|| u^{lam,c} - u^{lam,c2} - (c - c2)/lam' ||_inf with lam' the effective rate."""
    u1 = solve_discounted(scheme, lam, c, tol)
    u2 = solve_discounted(scheme, lam, c2, tol)
    shift = (c - c2) / scheme.effective_rate(lam)
    return float(np.abs(u1.values - u2.values - shift).max())


def normalize(u: GridVectorFunction) -> GridVectorFunction:
    """u minus its global minimum over nodes and modes."""
    return GridVectorFunction(u.values - u.values.min(), u.grid, dict(u.meta))


def normalized_limit(scheme, lam: float, c: float, tol: float = 1e-9) -> GridVectorFunction:
    """u^{lam,c} shifted so that its minimum over nodes and modes is 0."""
    return normalize(solve_discounted(scheme, lam, c, tol))


def _extrapolate_to_zero(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Neville's scheme: value at 0 of the interpolating polynomial through (xs, ys)."""
    p = [np.asarray(y, float) for y in ys]
    n = len(xs)
    for level in range(1, n):
        p = [(xs[i + level] * p[i] - xs[i] * p[i + 1]) / (xs[i + level] - xs[i]) for i in range(n - level)]
    return p[0]


@dataclass
class CriticalEstimate:
    value: float
    error: float
    spread: float
    extrapolation_residual: float
    rates: list
    raw: list
    solutions: list = field(repr=False, default_factory=list)


def estimate_critical_value(scheme: DiscreteScheme, lambdas, tol: float = 1e-9) -> CriticalEstimate:
    """Critical value from the vanishing-discount limit of -lam' u^{lam,0}.

    The field -lam' u^{lam,0}(x) is extrapolated pointwise to lam' = 0
    (Richardson via the interpolating polynomial in lam'); the estimate is its
    mean, the error is its spread over nodes plus the change caused by
    dropping the largest rate.
    """
    lambdas = sorted((float(l) for l in lambdas), reverse=True)
    if len(lambdas) < 2:
        raise ValidationError("need at least two discount rates")
    rates, fields, sols = [], [], []
    w0 = None
    for lam in lambdas:
        rate = scheme.effective_rate(lam)
        if w0 is not None:
            mean = w0.mean()
            w0 = (w0 - mean) + mean * rates[-1] / rate
        u = solve_discounted(scheme, lam, 0.0, tol, w0=w0)
        rates.append(rate)
        fields.append(-rate * u.values)
        sols.append(u)
        w0 = u.values
    xs = np.array(rates)
    ext = _extrapolate_to_zero(xs, fields)
    value = float(ext.mean())
    if len(xs) > 2:
        drop = float(_extrapolate_to_zero(xs[1:], fields[1:]).mean())
    else:
        drop = float(fields[-1].mean())
    spread = float(ext.max() - ext.min())
    resid = abs(value - drop)
    return CriticalEstimate(
        value=value,
        error=spread + resid,
        spread=spread,
        extrapolation_residual=resid,
        rates=list(lambdas),
        raw=[float(f.mean()) for f in fields],
        solutions=sols,
    )
