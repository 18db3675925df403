"""Problem definitions: Hamiltonian catalog, Legendre transforms, coupling
matrices and the periodic grids used to discretize the torus.

All objects are immutable once built.
"""

from __future__ import annotations

import ast
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import NumericalError, ValidationError

KINDS = ("quadratic", "quadratic-drift", "power")


class RowSumViolation(ValidationError):
    pass


class SignViolation(ValidationError):
    pass


class Reducible(ValidationError):
    pass


class MaximizerOnBoundary(NumericalError):
    """Numeric Legendre search kept hitting its momentum radius."""


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on the unit torus [0,1)^d.

    Nodes are flattened in row-major order: node (i0, i1) has index i0*n + i1.
    """

    d: int
    n: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValidationError(f"dimension must be 1 or 2, got {self.d}")
        if self.n < 4:
            raise ValidationError(f"need at least 4 nodes per axis, got {self.n}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def n_nodes(self) -> int:
        return self.n**self.d

    @cached_property
    def nodes(self) -> np.ndarray:
        axes = np.indices((self.n,) * self.d).reshape(self.d, -1).T
        return axes / self.n

    def flat_index(self, ijk: np.ndarray) -> np.ndarray:
        ijk = np.mod(ijk, self.n)
        if self.d == 1:
            return ijk[..., 0]
        return ijk[..., 0] * self.n + ijk[..., 1]

    def distance(self, a, b) -> np.ndarray:
        """Wraparound Euclidean distance between point arrays of shape (..., d)."""
        diff = np.abs(np.asarray(a, float) - np.asarray(b, float)) % 1.0
        diff = np.minimum(diff, 1.0 - diff)
        return np.sqrt((diff**2).sum(axis=-1))

    def stencil(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Periodic multilinear interpolation stencil.

        Returns node indices and weights, both of shape (k, 2**d); weights are
        nonnegative and sum to one.
        """
        pts = np.atleast_2d(np.asarray(points, float)).reshape(-1, self.d)
        s = np.mod(pts, 1.0) * self.n
        snapped = np.round(s)
        s = np.where(np.abs(s - snapped) < 1e-9, snapped, s)
        base = np.floor(s)
        frac = s - base
        base = base.astype(np.int64)
        corners = list(itertools.product((0, 1), repeat=self.d))
        idx = np.empty((pts.shape[0], len(corners)), dtype=np.int64)
        wts = np.empty((pts.shape[0], len(corners)))
        for c, bits in enumerate(corners):
            bits = np.asarray(bits)
            idx[:, c] = self.flat_index(base + bits)
            wts[:, c] = np.prod(np.where(bits == 1, frac, 1.0 - frac), axis=1)
        return idx, wts

    def interpolate(self, values: np.ndarray, points) -> np.ndarray:
        """Interpolate nodal values (..., n_nodes) at points (k, d)."""
        idx, wts = self.stencil(points)
        return (np.asarray(values)[..., idx] * wts).sum(axis=-1)

    def nearest(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float)).reshape(-1, self.d)
        ijk = np.round(np.mod(pts, 1.0) * self.n).astype(np.int64)
        return self.flat_index(ijk)


@dataclass(frozen=True, eq=False)
class ControlGrid:
    """Finite symmetric set of velocities containing the zero control."""

    values: np.ndarray
    v_max: float

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.values, float))
        object.__setattr__(self, "values", vals)
        norms = np.linalg.norm(vals, axis=1)
        if np.any(norms > self.v_max * (1 + 1e-12)):
            raise ValidationError("control exceeds v_max")
        if not np.any(norms == 0.0):
            raise ValidationError("control set must contain 0")
        for v in vals:
            if not np.any(np.all(np.abs(vals + v) <= 1e-12, axis=1)):
                raise ValidationError(f"control set is not symmetric: {v} lacks its negative")

    @classmethod
    def uniform(cls, d: int, count: int, v_max: float) -> "ControlGrid":
        """`count` points per axis on [-v_max, v_max] (odd count keeps 0).

        In 2-D the square lattice is clipped to the disk of radius v_max.
        """
        if count < 1 or count % 2 == 0:
            raise ValidationError("control count per axis must be odd")
        axis = np.linspace(-v_max, v_max, count) if count > 1 else np.zeros(1)
        axis[count // 2] = 0.0
        if d == 1:
            vals = axis[:, None]
        else:
            vals = np.stack(np.meshgrid(axis, axis, indexing="ij"), -1).reshape(-1, 2)
            vals = vals[np.linalg.norm(vals, axis=1) <= v_max * (1 + 1e-12)]
        return cls(vals, float(v_max))

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @cached_property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=1)

    @property
    def zero_index(self) -> int:
        return int(np.flatnonzero(self.norms == 0.0)[0])

    @property
    def spacing(self) -> float:
        nz = self.norms[self.norms > 0]
        return float(nz.min()) if nz.size else 0.0

    def on_boundary(self, k) -> np.ndarray:
        return self.norms[k] >= self.v_max * (1 - 1e-12)


# ---------------------------------------------------------------------------
# scalar fields on the torus

_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
}
_CONSTS = {"pi": math.pi}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class Expression:
    """Closed-form field built from coordinates, + - * / **, and sin/cos/exp/sqrt/abs/tanh.

    Coordinates are named ``x`` and ``y`` (or ``x1``, ``x2``).
    """

    def __init__(self, text: str, d: int = 1):
        self.text = text.strip()
        self.d = d
        try:
            self._tree = ast.parse(self.text, mode="eval").body
        except SyntaxError as exc:
            raise ValidationError(f"cannot parse expression {text!r}: {exc.msg}") from None
        self._check(self._tree)

    def _coord(self, name):
        table = {"x": 0, "x1": 0, "y": 1, "x2": 1}
        if name not in table or table[name] >= self.d:
            return None
        return table[name]

    def _check(self, node):
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ValidationError(f"unknown function in {self.text!r}")
            if len(node.args) != 1 or node.keywords:
                raise ValidationError(f"functions take one argument in {self.text!r}")
            self._check(node.args[0])
        elif isinstance(node, ast.Name):
            if node.id not in _CONSTS and self._coord(node.id) is None:
                raise ValidationError(f"unknown name {node.id!r} in {self.text!r}")
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            pass
        else:
            raise ValidationError(f"unsupported syntax in {self.text!r}")

    def _eval(self, node, pts):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, pts), self._eval(node.right, pts))
        if isinstance(node, ast.UnaryOp):
            val = self._eval(node.operand, pts)
            return -val if isinstance(node.op, ast.USub) else val
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](self._eval(node.args[0], pts))
        if isinstance(node, ast.Name):
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            return pts[:, self._coord(node.id)]
        return float(node.value)

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float)).reshape(-1, self.d)
        out = self._eval(self._tree, pts)
        return np.broadcast_to(np.asarray(out, float), (pts.shape[0],)).copy()

    def __repr__(self):
        return f"Expression({self.text!r})"


class SampledField:
    """Field given by samples on its own uniform periodic grid, interpolated multilinearly."""

    def __init__(self, samples, d: int = 1):
        vals = np.asarray(samples, float)
        if vals.ndim == 1 and d == 2:
            side = int(round(math.sqrt(vals.size)))
            if side * side != vals.size:
                raise ValidationError("2-D samples must form a square grid")
            vals = vals.reshape(side, side)
        if vals.ndim != d or not np.all(np.isfinite(vals)):
            raise ValidationError("samples must be finite with one axis per dimension")
        self.d = d
        self.values = vals
        self._grid = TorusGrid(d, vals.shape[0])

    def __call__(self, points) -> np.ndarray:
        return self._grid.interpolate(self.values.reshape(-1), points)

    def __repr__(self):
        return f"SampledField(shape={self.values.shape})"


def field_from(spec, d: int = 1):
    """Coerce a number, expression string, array of samples, or callable into a field."""
    if isinstance(spec, (Expression, SampledField)):
        return spec
    if isinstance(spec, (int, float)):
        return Expression(repr(float(spec)), d)
    if isinstance(spec, str):
        return Expression(spec, d)
    if callable(spec):
        return spec
    return SampledField(spec, d)


def _probe_points(d: int) -> np.ndarray:
    n = 2048 if d == 1 else 96
    return TorusGrid(d, n).nodes


def field_stats(f, d: int) -> tuple[float, float, float]:
    """(min, max, finite-difference Lipschitz estimate) on a fine probe grid."""
    pts = _probe_points(d)
    n = round(pts.shape[0] ** (1.0 / d))
    vals = np.asarray(f(pts), float).reshape((n,) * d)
    if not np.all(np.isfinite(vals)):
        raise ValidationError("field takes non-finite values")
    lip = 0.0
    for ax in range(d):
        lip = max(lip, float(np.abs(np.roll(vals, -1, axis=ax) - vals).max()) * n)
    return float(vals.min()), float(vals.max()), lip


def _check_periodic(f, d: int, name: str):
    rng = np.random.default_rng(0)
    pts = rng.random((64, d))
    for ax in range(d):
        shifted = pts.copy()
        shifted[:, ax] += 1.0
        a, b = f(pts), f(shifted)
        if np.max(np.abs(a - b)) > 1e-9 * (1 + np.max(np.abs(a))):
            raise ValidationError(f"{name} is not 1-periodic along axis {ax}")


# ---------------------------------------------------------------------------
# Hamiltonians


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """One catalog Hamiltonian.

    quadratic        H = |p|^2/2 - f(x)
    quadratic-drift  H = |p|^2/2 + <b(x), p> - f(x)
    power            H = |p|^q/q - f(x),  q > 1
    """

    kind: str
    potential: object = 0.0
    drift: tuple | None = None
    exponent: float = 2.0
    mode: int = 0
    d: int = 1
    stats: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown Hamiltonian kind {self.kind!r}; choose from {KINDS}")
        pot = field_from(self.potential, self.d)
        object.__setattr__(self, "potential", pot)
        _check_periodic(pot, self.d, "potential")
        fmin, fmax, flip = field_stats(pot, self.d)
        stats = {"f_min": fmin, "f_max": fmax, "f_lip": flip, "b_max": 0.0, "b_lip": 0.0}
        if self.kind == "quadratic-drift":
            if self.drift is None:
                raise ValidationError("quadratic-drift needs a drift field")
            drift = self.drift
            if not isinstance(drift, (list, tuple)):
                drift = (drift,)
            if len(drift) != self.d:
                raise ValidationError(f"drift needs {self.d} components, got {len(drift)}")
            drift = tuple(field_from(b, self.d) for b in drift)
            object.__setattr__(self, "drift", drift)
            bmax = 0.0
            for b in drift:
                _check_periodic(b, self.d, "drift")
                lo, hi, lip = field_stats(b, self.d)
                bmax = max(bmax, abs(lo), abs(hi))
                stats["b_lip"] = max(stats["b_lip"], lip)
            stats["b_max"] = bmax * math.sqrt(self.d)
        elif self.drift is not None:
            raise ValidationError(f"kind {self.kind!r} takes no drift")
        if self.kind == "power":
            if not self.exponent > 1.0:
                raise ValidationError("power exponent must exceed 1")
        else:
            object.__setattr__(self, "exponent", 2.0)
        object.__setattr__(self, "stats", stats)

    @property
    def conjugate_exponent(self) -> float:
        q = self.exponent
        return q / (q - 1.0)

    def _drift_at(self, x: np.ndarray) -> np.ndarray:
        return np.stack([b(x) for b in self.drift], axis=-1)

    def hamiltonian(self, x, p) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float)).reshape(-1, self.d)
        p = np.atleast_2d(np.asarray(p, float)).reshape(-1, self.d)
        q = self.exponent
        norm = np.linalg.norm(p, axis=1)
        val = norm**q / q - self.potential(x)
        if self.kind == "quadratic-drift":
            val = val + np.sum(self._drift_at(x) * p, axis=1)
        return val

    def lagrangian(self, x, v) -> np.ndarray:
        """Closed-form convex conjugate in the momentum variable."""
        x = np.atleast_2d(np.asarray(x, float)).reshape(-1, self.d)
        v = np.atleast_2d(np.asarray(v, float)).reshape(-1, self.d)
        if self.kind == "quadratic-drift":
            v = v - self._drift_at(x)
        qs = self.conjugate_exponent
        return np.linalg.norm(v, axis=1) ** qs / qs + self.potential(x)

    def speed_bound(self, c: float = 0.0) -> float:
        """Default control radius: 2*(q*(osc f + |c|) + 4)**((q-1)/q) + max|b|."""
        s = self.stats
        q = self.exponent
        osc = s["f_max"] - s["f_min"] + abs(c)
        return 2.0 * (q * osc + 4.0) ** ((q - 1.0) / q) + s["b_max"]


def eval_hamiltonian(h: HamiltonianSpec, x, p) -> float:
    return float(h.hamiltonian(x, p)[0])


def _golden_max(fun, lo: float, hi: float, tol: float = 1e-11) -> float:
    """Argmax of a concave function on [lo, hi] by golden-section search."""
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def legendre_transform(h: HamiltonianSpec, x, v, numeric: bool = False, max_doublings: int = 30) -> float:
    """L(x, v) = sup_p <p, v> - H(x, p).

    Uses the catalog closed form unless ``numeric`` is set, in which case the
    supremum is found by golden-section search (nested per axis in 2-D) on a
    momentum box of radius 2(1+|v|), doubled until the maximizer is interior.
    """
    x = np.asarray(x, float).reshape(h.d)
    v = np.asarray(v, float).reshape(h.d)
    if not numeric:
        return float(h.lagrangian(x, v)[0])

    def phi(p):
        p = np.asarray(p, float)
        return float(p @ v - h.hamiltonian(x, p)[0])

    radius = 2.0 * (1.0 + float(np.linalg.norm(v)))
    for _ in range(max_doublings):
        if h.d == 1:
            p_star = np.array([_golden_max(lambda t: phi([t]), -radius, radius)])
        else:
            def inner(t):
                s = _golden_max(lambda u: phi([t, u]), -radius, radius)
                return s, phi([t, s])

            t_star = _golden_max(lambda t: inner(t)[1], -radius, radius)
            p_star = np.array([t_star, inner(t_star)[0]])
        if np.all(np.abs(p_star) < radius * (1 - 1e-6)):
            return phi(p_star)
        radius *= 2.0
    raise MaximizerOnBoundary(f"Legendre search reached momentum radius {radius}")


# ---------------------------------------------------------------------------
# coupling


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    entries: np.ndarray

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def rates(self) -> np.ndarray:
        return np.diag(self.entries).copy()


def validate_coupling(entries) -> CouplingMatrix:
    """Check sign, zero row sums and irreducibility; return an immutable copy.

    The diagonal is reset to minus the off-diagonal row sum so that B @ 1
    vanishes up to floating-point rounding of the matrix product.
    """
    b = np.array(entries, dtype=float, copy=True)
    if b.ndim != 2 or b.shape[0] != b.shape[1] or b.shape[0] < 1:
        raise ValidationError(f"coupling matrix must be square, got shape {b.shape}")
    if not np.all(np.isfinite(b)):
        raise ValidationError("coupling matrix has non-finite entries")
    m = b.shape[0]
    off = b - np.diag(np.diag(b))
    if np.any(off > 0):
        i, j = np.argwhere(off > 0)[0]
        raise SignViolation(f"b[{i},{j}] = {b[i, j]} > 0 off the diagonal")
    sums = b.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums) > 1e-12)
    if bad.size:
        raise RowSumViolation(f"row {bad[0]} sums to {sums[bad[0]]}")
    if m > 1:
        n_comp, _ = connected_components(csr_matrix(off != 0), directed=True, connection="strong")
        if n_comp > 1:
            raise Reducible("coupling matrix is reducible")
    b[np.diag_indices(m)] = -off.sum(axis=1)
    b.setflags(write=False)
    return CouplingMatrix(b)


# ---------------------------------------------------------------------------
# problem


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    hamiltonians: tuple
    coupling: CouplingMatrix
    d: int = 1
    c: float = 0.0

    def __post_init__(self):
        hs = tuple(self.hamiltonians)
        object.__setattr__(self, "hamiltonians", hs)
        if not isinstance(self.coupling, CouplingMatrix):
            object.__setattr__(self, "coupling", validate_coupling(self.coupling))
        if len(hs) != self.coupling.m:
            raise ValidationError(f"{len(hs)} Hamiltonians for a {self.coupling.m}-mode coupling")
        for h in hs:
            if h.d != self.d:
                raise ValidationError("Hamiltonian dimension differs from problem dimension")

    @property
    def m(self) -> int:
        return len(self.hamiltonians)

    def lagrangian_table(self, nodes: np.ndarray, controls: ControlGrid) -> np.ndarray:
        """L_i(x, v_k) for every mode, node and control: shape (m, n_nodes, K)."""
        n, k = nodes.shape[0], controls.size
        xs = np.repeat(nodes, k, axis=0)
        vs = np.tile(controls.values, (n, 1))
        return np.stack([h.lagrangian(xs, vs).reshape(n, k) for h in self.hamiltonians])

    def default_v_max(self, c: float | None = None) -> float:
        c = self.c if c is None else c
        return max(h.speed_bound(c) for h in self.hamiltonians)


def scalar_problem(potential="1 - cos(2*pi*x)", kind="quadratic", d=1, **kw) -> ProblemSpec:
    """Single-mode problem with B = [[0]]."""
    h = HamiltonianSpec(kind, potential, d=d, **kw)
    return ProblemSpec((h,), validate_coupling([[0.0]]), d=d)


def lifted_problem(problem: ProblemSpec, rate: float = 1.0) -> ProblemSpec:
    """Two identical copies of a scalar problem coupled by rate * [[1,-1],[-1,1]]."""
    (h,) = problem.hamiltonians
    h2 = HamiltonianSpec(h.kind, h.potential, drift=h.drift, exponent=h.exponent, mode=1, d=h.d)
    b = validate_coupling([[rate, -rate], [-rate, rate]])
    return ProblemSpec((h, h2), b, d=problem.d, c=problem.c)


def random_problem(seed: int, m: int = 2, d: int = 1) -> ProblemSpec:
    """Seeded m-mode test problem: shifted cosine wells, one drift mode, random rates in [0.5, 2]."""
    rng = np.random.default_rng(seed)
    hs = []
    for i in range(m):
        a, b = float(rng.uniform(0.0, 0.5)), float(rng.uniform(0.5, 1.5))
        shift = [float(s) for s in rng.uniform(0.0, 1.0, size=d)]
        terms = " + ".join(f"(1 - cos(2*pi*({v} - {s!r})))" for v, s in zip(("x1", "x2")[:d], shift))
        pot = f"{a!r} + {b!r} * ({terms}) / {d}"
        if i == m - 1 and m > 1:
            amp = float(rng.uniform(0.1, 0.4))
            drift = tuple(f"{amp!r} * sin(2*pi*x{k + 1})" for k in range(d))
            hs.append(HamiltonianSpec("quadratic-drift", pot, drift=drift, mode=i, d=d))
        else:
            hs.append(HamiltonianSpec("quadratic", pot, mode=i, d=d))
    rates = rng.uniform(0.5, 2.0, size=(m, m))
    b = -rates * (1 - np.eye(m))
    b[np.diag_indices(m)] = rates.sum(axis=1) - np.diag(rates)
    return ProblemSpec(tuple(hs), validate_coupling(b), d=d)
