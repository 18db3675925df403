"""Discounted costs and occupation measures along optimal switching trajectories.

The feedback is the argmin control of the scheme at a converged discounted
solution. Trajectories follow the Euler rule x <- x - h v*(nearest node, mode)
with the control decided at step starts, while the mode follows the
continuous-time chain exactly, so the running cost of a step is integrated
piecewise between jump times with x frozen at the step start. That is the
same bias as the grid scheme, which keeps MC-vs-grid comparisons about MC error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ValidationError
from .markov import PathBundle, sample_paths
from .mather import DiscreteMeasure
from .solver import BoundaryControl, DiscreteScheme, GridVectorFunction


@dataclass(eq=False)
class FeedbackPolicy:
    scheme: DiscreteScheme
    table: np.ndarray  # (m, n_nodes) control indices
    lam: float
    c: float

    def controls_at(self, x: np.ndarray, modes: np.ndarray) -> np.ndarray:
        return self.table[modes, self.scheme.grid.nearest(x)]

    def velocity(self, x: np.ndarray, modes: np.ndarray) -> np.ndarray:
        return self.scheme.controls.values[self.controls_at(x, modes)]


def synthesize_feedback(scheme: DiscreteScheme, u, lam=None, c=None) -> FeedbackPolicy:
    meta = u.meta if isinstance(u, GridVectorFunction) else {}
    lam = meta.get("lam") if lam is None else lam
    c = meta.get("c") if c is None else c
    if lam is None or c is None:
        raise ValidationError("discount rate and shift are needed (pass them or use a solver output)")
    _, k = scheme.apply_with_policy(u, lam, c)
    if np.any(scheme.controls.on_boundary(k)):
        raise BoundaryControl("feedback control on |v| = v_max; increase v_max")
    return FeedbackPolicy(scheme, k, float(lam), float(c))


def _check_args(lam, n_paths, horizon):
    if not lam > 0:
        raise ValidationError("discount rate must be positive")
    if n_paths < 100:
        raise ValidationError("need at least 100 paths")
    horizon = 8.0 / lam if horizon is None else float(horizon)
    if horizon < 8.0 / lam * (1 - 1e-12):
        raise ValidationError("horizon must be at least 8 / lambda")
    return horizon


def _rollout(scheme, policy, y, mode, lam, paths, horizon, visit=None):
    """Per-path discounted cost; ``visit(cell, weight)`` receives occupation increments."""
    h, grid = scheme.h, scheme.grid
    n = len(paths)
    rows = np.arange(n)
    bundle = PathBundle(paths)
    x = np.tile(grid.nodes[y], (n, 1))
    cost = np.zeros(n)
    n_steps = int(math.ceil(horizon / h - 1e-9))
    lag = scheme.problem.hamiltonians
    for s in range(n_steps):
        t0, t1 = s * h, min((s + 1) * h, horizon)
        modes = bundle.advance(t0)
        k = policy.controls_at(x, modes)
        v = scheme.controls.values[k]
        lvals = np.empty((scheme.m, n))
        for i, ham in enumerate(lag):
            lvals[i] = ham.lagrangian(x, v)
        nxt = bundle.next_jump()
        simple = nxt >= t1
        w = np.where(simple, _disc(lam, t0, t1), 0.0)
        cost[simple] += w[simple] * (lvals[modes[simple], rows[simple]] + policy.c)
        if visit is not None:
            node = grid.nearest(x)
            visit((modes * scheme.n_nodes + node) * scheme.n_controls + k, lam * w, simple)
        for p in np.flatnonzero(~simple):
            for a, b, md in bundle.segments(p, t0, t1):
                wt = _disc(lam, a, b)
                cost[p] += wt * (lvals[md, p] + policy.c)
                if visit is not None:
                    cell = (md * scheme.n_nodes + grid.nearest(x[p : p + 1])[0]) * scheme.n_controls + k[p]
                    visit(np.array([cell]), np.array([lam * wt]), np.array([True]), rows=np.array([p]))
        x = np.mod(x - h * v, 1.0)
    return cost


def _disc(lam, a, b):
    """integral of exp(-lam s) over [a, b]."""
    return (np.exp(-lam * a) - np.exp(-lam * b)) / lam


@dataclass
class MCResult:
    estimate: float
    stderr: float
    tail_bound: float
    n_paths: int
    seed: int
    horizon: float
    scenario: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "scenario": self.scenario,
                "seed": self.seed,
                "estimate": self.estimate,
                "stderr": self.stderr,
                "tail_bound": self.tail_bound,
                "n_paths": self.n_paths,
                "horizon": self.horizon,
            }
        )


def _pairwise_mean(values: np.ndarray) -> float:
    # numpy's sum is pairwise for contiguous float arrays
    return float(np.sum(np.ascontiguousarray(values)) / values.size)


def simulate_discounted_cost(
    scheme: DiscreteScheme,
    policy: FeedbackPolicy,
    y: int,
    mode: int,
    lam: float,
    n_paths: int,
    horizon=None,
    seed: int = 0,
    threads: int = 1,
) -> MCResult:
    """MC estimate of the discounted cost from node ``y`` in ``mode`` under the feedback."""
    horizon = _check_args(lam, n_paths, horizon)
    paths = sample_paths(scheme.problem.coupling, mode, horizon, n_paths, seed, threads)
    costs = _rollout(scheme, policy, y, mode, lam, paths, horizon)
    mean = _pairwise_mean(costs)
    std = float(np.sqrt(_pairwise_mean((costs - mean) ** 2) * n_paths / (n_paths - 1)))
    bound = float(np.abs(scheme.lagrangian + policy.c).max()) * math.exp(-lam * horizon) / lam
    return MCResult(mean, std / math.sqrt(n_paths), bound, n_paths, seed, horizon)


@dataclass(eq=False)
class OccupationEstimate:
    measure: DiscreteMeasure
    stderr: np.ndarray
    y: int
    mode: int
    lam: float
    meta: dict = field(default_factory=dict)


def estimate_occupation(
    scheme: DiscreteScheme,
    policy: FeedbackPolicy,
    y: int,
    mode: int,
    lam: float,
    n_paths: int,
    horizon=None,
    seed: int = 0,
    threads: int = 1,
    batch: int | None = None,
) -> OccupationEstimate:
    """lam-weighted discounted visitation of (nearest node, control, mode) cells, mass 1."""
    horizon = _check_args(lam, n_paths, horizon)
    shape = (scheme.m, scheme.n_nodes, scheme.n_controls)
    n_cells = int(np.prod(shape))
    paths = sample_paths(scheme.problem.coupling, mode, horizon, n_paths, seed, threads)
    if batch is None:
        batch = max(1, min(n_paths, 4_000_000 // n_cells))
    total = np.zeros(n_cells)
    total_sq = np.zeros(n_cells)
    for start in range(0, n_paths, batch):
        chunk = paths[start : start + batch]
        acc = np.zeros((len(chunk), n_cells))

        def visit(cells, weights, mask, rows=None):
            r = np.arange(len(chunk)) if rows is None else rows
            np.add.at(acc, (r[mask], cells[mask]), weights[mask])

        _rollout(scheme, policy, y, mode, lam, chunk, horizon, visit)
        acc /= acc.sum(axis=1, keepdims=True)
        total += acc.sum(axis=0)
        total_sq += (acc**2).sum(axis=0)
    mean = total / n_paths
    var = np.maximum(total_sq / n_paths - mean**2, 0.0) * n_paths / max(n_paths - 1, 1)
    mean /= mean.sum()
    return OccupationEstimate(
        DiscreteMeasure(mean.reshape(shape)),
        np.sqrt(var / n_paths).reshape(shape),
        y,
        mode,
        lam,
        {"n_paths": n_paths, "seed": seed, "horizon": horizon},
    )


def exact_occupation(scheme: DiscreteScheme, u: GridVectorFunction, mode: int, y: int, lam=None, c=None) -> DiscreteMeasure:
    """Discounted occupation of the scheme's own Markov chain under the argmin policy.

    With beta = exp(-lam h) and K the one-step kernel on (mode, node) states,
    rho = (1 - beta) delta_(mode, y) + beta K^T rho, and the measure puts
    rho(i, x) on the cell (i, x, policy(i, x)).
    """
    lam = u.meta.get("lam") if lam is None else lam
    c = u.meta.get("c") if c is None else c
    _, pol = scheme.apply_with_policy(u, lam, c)
    m, n, nk = scheme.m, scheme.n_nodes, scheme.n_controls
    beta = scheme.beta(lam)
    idx = scheme.idx[np.arange(n)[None, :], pol]  # (m, n, S)
    wts = scheme.wts[np.arange(n)[None, :], pol]
    src, dst, val = [], [], []
    for j in range(m):
        src.append(np.broadcast_to((np.arange(m)[:, None, None] * n + np.arange(n)[None, :, None]), idx.shape).ravel())
        dst.append((j * n + idx).ravel())
        val.append((scheme.P[:, j][:, None, None] * wts).ravel())
    K = sp.csr_matrix((np.concatenate(val), (np.concatenate(src), np.concatenate(dst))), shape=(m * n, m * n))
    rhs = np.zeros(m * n)
    rhs[mode * n + y] = 1.0 - beta
    rho = spla.spsolve((sp.identity(m * n, format="csc") - beta * K.T).tocsc(), rhs)
    rho = np.maximum(rho, 0.0)
    rho /= rho.sum()
    weights = np.zeros((m, n, nk))
    np.put_along_axis(weights, pol[..., None], rho.reshape(m, n, 1), axis=-1)
    return DiscreteMeasure(weights, {"lam": lam, "y": y, "mode": mode})
