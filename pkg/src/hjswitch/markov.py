"""Continuous-time Markov chain on the modes, generated by -B.

Paths are stored as jump lists so they can be evaluated exactly at any time.
Every path owns a counter-based Philox stream keyed by (seed, path index),
which makes samples independent of how the work is split across threads.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import CouplingMatrix, TorusGrid, validate_coupling


def _entries(B) -> np.ndarray:
    if isinstance(B, CouplingMatrix):
        return B.entries
    return validate_coupling(B).entries


@dataclass(frozen=True, eq=False)
class StochasticMatrix:
    entries: np.ndarray
    t: float

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def expm_taylor(a: np.ndarray, term_tol: float = 1e-14) -> np.ndarray:
    """exp(a) by scaling and squaring around a truncated Taylor series."""
    a = np.asarray(a, float)
    norm = np.abs(a).sum(axis=1).max() if a.size else 0.0
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    a = a / 2.0**s
    out = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, 60):
        term = term @ a / k
        out = out + term
        if np.abs(term).max() < term_tol:
            break
    for _ in range(s):
        out = out @ out
    return out


def transition_matrix(B, t: float) -> StochasticMatrix:
    """exp(-tB): the law of the mode at time t given the mode at time 0."""
    if t < 0:
        raise ValidationError("time must be nonnegative")
    b = _entries(B)
    if t == 0:
        return StochasticMatrix(np.eye(b.shape[0]), 0.0)
    p = expm_taylor(-t * b)
    p[p < 0] = 0.0
    return StochasticMatrix(p, float(t))


@dataclass(frozen=True, eq=False)
class SwitchingPath:
    """Right-continuous mode path: ``modes[k]`` is in force on [times[k], times[k+1])."""

    i0: int
    jump_times: np.ndarray
    modes: np.ndarray
    horizon: float

    def __post_init__(self):
        jt = np.asarray(self.jump_times, float)
        md = np.asarray(self.modes, dtype=np.int64)
        if jt.shape != md.shape:
            raise ValidationError("need one mode per jump time")
        if jt.size and (jt[0] <= 0 or np.any(np.diff(jt) <= 0) or jt[-1] > self.horizon):
            raise ValidationError("jump times must be strictly increasing in (0, horizon]")
        seq = np.concatenate([[self.i0], md])
        if np.any(seq[1:] == seq[:-1]):
            raise ValidationError("consecutive modes must differ")
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "modes", md)

    @property
    def n_jumps(self) -> int:
        return self.jump_times.size

    def mode_at(self, t):
        seq = np.concatenate([[self.i0], self.modes])
        k = np.searchsorted(self.jump_times, t, side="right")
        return seq[k] if np.ndim(t) else int(seq[k])

    def to_record(self, seed: int | None = None, index: int | None = None) -> dict:
        return {
            "seed": seed,
            "index": index,
            "i0": int(self.i0),
            "horizon": float(self.horizon),
            "jumps": [[float(t), int(j)] for t, j in zip(self.jump_times, self.modes)],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SwitchingPath":
        jumps = rec.get("jumps", [])
        return cls(
            int(rec["i0"]),
            np.array([t for t, _ in jumps], float),
            np.array([j for _, j in jumps], np.int64),
            float(rec["horizon"]),
        )


def paths_to_json(paths, seed: int | None = None) -> str:
    return json.dumps([p.to_record(seed, k) for k, p in enumerate(paths)])


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for one path: Philox keyed by the (seed, index) pair."""
    key = ((int(seed) % 2**64) << 64) | (int(index) % 2**64)
    return np.random.Generator(np.random.Philox(key=key))


def _jump_tables(b: np.ndarray):
    """Per-mode holding rates and cumulative next-mode distributions."""
    m = b.shape[0]
    rates = np.diag(b).copy()
    cum = np.zeros((m, m))
    for i in range(m):
        if rates[i] > 0:
            probs = -b[i].copy()
            probs[i] = 0.0
            cum[i] = np.cumsum(probs / rates[i])
            cum[i, -1] = 1.0
    return rates, cum


def _draw_path(rates, cum, i0: int, horizon: float, rng) -> SwitchingPath:
    m = rates.size
    times, modes = [], []
    if m > 1:
        t, i = 0.0, int(i0)
        while True:
            t += rng.exponential(1.0 / rates[i])
            if t > horizon:
                break
            # the mode itself has zero mass in cum[i], so this never returns i
            i = int(np.searchsorted(cum[i], rng.random(), side="right"))
            times.append(t)
            modes.append(i)
    return SwitchingPath(int(i0), np.array(times, float), np.array(modes, np.int64), float(horizon))


def sample_path(B, i0: int, horizon: float, rng: np.random.Generator) -> SwitchingPath:
    """Exponential holding times with rate b_ii, then jump to j with prob -b_ij/b_ii."""
    if horizon <= 0:
        raise ValidationError("horizon must be positive")
    rates, cum = _jump_tables(_entries(B))
    return _draw_path(rates, cum, i0, horizon, rng)


def sample_paths(B, i0: int, horizon: float, n_paths: int, seed: int, threads: int = 1) -> list:
    """``n_paths`` paths; path k depends only on (seed, k)."""
    if horizon <= 0:
        raise ValidationError("horizon must be positive")
    rates, cum = _jump_tables(_entries(B))

    def work(indices):
        return [_draw_path(rates, cum, i0, horizon, path_rng(seed, k)) for k in indices]

    if threads <= 1 or n_paths < 2 * threads:
        return work(range(n_paths))
    chunks = np.array_split(np.arange(n_paths), threads)
    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(work, chunks))
    return [p for part in parts for p in part]


def empirical_marginal(paths, t: float, m: int | None = None) -> np.ndarray:
    if not paths:
        raise ValidationError("no paths given")
    i0 = paths[0].i0
    if any(p.i0 != i0 for p in paths) or any(p.horizon < t for p in paths):
        raise ValidationError("paths must share i0 and reach time t")
    if m is None:
        m = 1 + max(max(p.modes.max(initial=0), p.i0) for p in paths)
    counts = np.bincount([p.mode_at(t) for p in paths], minlength=m)
    return counts / len(paths)


class PathBundle:
    """Padded array view of many paths, for stepping all of them in lockstep."""

    def __init__(self, paths):
        self.paths = paths
        n = len(paths)
        jmax = max((p.n_jumps for p in paths), default=0)
        self.times = np.full((n, jmax + 1), np.inf)
        self.seq = np.empty((n, jmax + 1), dtype=np.int64)
        for k, p in enumerate(paths):
            self.times[k, : p.n_jumps] = p.jump_times
            self.seq[k, 0] = p.i0
            self.seq[k, 1 : p.n_jumps + 1] = p.modes
            self.seq[k, p.n_jumps + 1 :] = p.modes[-1] if p.n_jumps else p.i0
        self.ptr = np.zeros(n, dtype=np.int64)
        self._rows = np.arange(n)

    def advance(self, t: float) -> np.ndarray:
        """Move every pointer past jumps at or before t; return modes in force at t."""
        while True:
            hit = self.times[self._rows, self.ptr] <= t
            if not hit.any():
                break
            self.ptr[hit] += 1
        return self.seq[self._rows, self.ptr]

    def next_jump(self) -> np.ndarray:
        return self.times[self._rows, self.ptr]

    def segments(self, k: int, t0: float, t1: float):
        """(start, end, mode) pieces of path k on [t0, t1), given its pointer is current at t0."""
        p = self.ptr[k]
        start, mode = t0, self.seq[k, p]
        out = []
        while self.times[k, p] < t1:
            tj = self.times[k, p]
            out.append((start, tj, mode))
            p += 1
            start, mode = tj, self.seq[k, p]
        out.append((start, t1, mode))
        return out


def dynkin_residual(
    g,
    grid: TorusGrid,
    B,
    paths,
    t0: float,
    t1: float,
    x0,
    velocity=None,
    dt: float = 1e-2,
):
    """Monte Carlo check of Dynkin's formula on [t0, t1].

    Along each path the curve starts at ``x0`` and moves with
    ``velocity(t, x, modes)`` (decided at step starts, so nonanticipating).
    Per path we form

        Z = g_w(t1)(x(t1)) - g_w(t0)(x(t0))
            - sum over pieces [ -(B g)_mode(x) * duration + g_mode(x_end) - g_mode(x_start) ]

    where pieces split every step at the jump times. Returns (|mean Z|, stderr).
    """
    if t1 <= t0:
        raise ValidationError("need t1 > t0")
    if any(p.horizon < t1 for p in paths):
        raise ValidationError("horizon too short for the requested window")
    b = _entries(B)
    gv = np.atleast_2d(np.asarray(g, float))
    bg = b @ gv
    n = len(paths)
    bundle = PathBundle(paths)
    x = np.tile(np.asarray(x0, float).reshape(1, grid.d), (n, 1))
    rows = np.arange(n)
    n_steps = max(1, int(math.ceil((t1 - t0) / dt - 1e-12)))
    edges = np.linspace(t0, t1, n_steps + 1)
    # move the curve from time 0 to t0 first
    pre = np.linspace(0.0, t0, max(1, int(math.ceil(t0 / dt))) + 1) if t0 > 0 else np.array([0.0])
    for a, c in zip(pre[:-1], pre[1:]):
        modes = bundle.advance(a)
        vel = np.zeros_like(x) if velocity is None else np.asarray(velocity(a, x, modes), float)
        x = x + (c - a) * vel
    modes = bundle.advance(t0)
    start_val = grid.interpolate(gv, x)[modes, rows]
    acc = np.zeros(n)
    for a, c in zip(edges[:-1], edges[1:]):
        modes = bundle.advance(a)
        vel = np.zeros_like(x) if velocity is None else np.asarray(velocity(a, x, modes), float)
        x_end = x + (c - a) * vel
        gx, gy = grid.interpolate(gv, x), grid.interpolate(gv, x_end)
        bx, by = grid.interpolate(bg, x), grid.interpolate(bg, x_end)
        acc += -0.5 * (bx[modes, rows] + by[modes, rows]) * (c - a) + gy[modes, rows] - gx[modes, rows]
        for k in np.flatnonzero(bundle.next_jump() < c):
            acc[k] -= -0.5 * (bx[modes[k], k] + by[modes[k], k]) * (c - a) + gy[modes[k], k] - gx[modes[k], k]
            for s, e, md in bundle.segments(k, a, c):
                xs = x[k] + (s - a) * vel[k]
                xe = x[k] + (e - a) * vel[k]
                gs, ge = grid.interpolate(gv[md], xs[None])[0], grid.interpolate(gv[md], xe[None])[0]
                bs, be = grid.interpolate(bg[md], xs[None])[0], grid.interpolate(bg[md], xe[None])[0]
                acc[k] += -0.5 * (bs + be) * (e - s) + ge - gs
        x = x_end
    modes = bundle.advance(t1)
    end_val = grid.interpolate(gv, x)[modes, rows]
    z = end_val - start_val - acc
    return float(abs(z.mean())), float(z.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
