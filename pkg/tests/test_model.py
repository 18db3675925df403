import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjswitch.errors import ValidationError
from hjswitch.model import (
    ControlGrid,
    Expression,
    HamiltonianSpec,
    MaximizerOnBoundary,
    Reducible,
    RowSumViolation,
    SignViolation,
    TorusGrid,
    eval_hamiltonian,
    field_from,
    legendre_transform,
    lifted_problem,
    random_problem,
    scalar_problem,
    validate_coupling,
)

from oracles import brute_conjugate, power_conjugate

COS = "1 - cos(2*pi*x)"


def catalog():
    return [
        HamiltonianSpec("quadratic", COS),
        HamiltonianSpec("quadratic", "0"),
        HamiltonianSpec("quadratic-drift", "0.3*sin(2*pi*x)", drift=("0.5*cos(2*pi*x)",)),
        HamiltonianSpec("power", COS, exponent=4.0),
        HamiltonianSpec("power", "0.2", exponent=1.5),
        HamiltonianSpec("quadratic", "cos(2*pi*x)*cos(2*pi*y)", d=2),
        HamiltonianSpec("quadratic-drift", "0", drift=("sin(2*pi*y)", "0.3"), d=2),
        HamiltonianSpec("power", "sin(2*pi*x)**2", exponent=3.0, d=2),
    ]


# -- coupling --------------------------------------------------------------------------


def test_coupling_examples():
    b = validate_coupling([[1, -1], [-1, 1]])
    assert b.m == 2 and np.array_equal(b.entries @ np.ones(2), np.zeros(2))
    assert validate_coupling([[0]]).m == 1
    with pytest.raises(RowSumViolation):
        validate_coupling([[1, -2], [-1, 1]])


def test_coupling_rejects():
    with pytest.raises(SignViolation):
        validate_coupling([[-1, 1], [1, -1]])
    with pytest.raises(Reducible):
        validate_coupling([[0, 0], [0, 0]])
    with pytest.raises(Reducible):
        # mode 2 absorbs: {2} has no edge leaving it
        validate_coupling([[1, 0, -1], [0, 1, -1], [0, 0, 0]])
    with pytest.raises(ValidationError):
        validate_coupling([[1, -1]])
    with pytest.raises(ValidationError):
        validate_coupling([[np.nan]])


def test_coupling_is_immutable():
    b = validate_coupling([[2, -2], [-1, 1]])
    with pytest.raises(ValueError):
        b.entries[0, 0] = 5


def _reference_valid(b):
    """B1 and B2 by brute force over all proper subsets."""
    m = b.shape[0]
    off = b - np.diag(np.diag(b))
    if np.any(off > 0) or np.any(np.abs(b.sum(axis=1)) > 1e-12):
        return False
    for mask in range(1, 2**m - 1):
        inside = [i for i in range(m) if mask >> i & 1]
        outside = [j for j in range(m) if not mask >> j & 1]
        if not any(b[i, j] != 0 for i in inside for j in outside):
            return False
    return True


@settings(max_examples=300)
@given(
    m=st.integers(1, 4),
    data=st.data(),
)
def test_coupling_accepts_exactly_b1_b2(m, data):
    off = np.array(
        data.draw(st.lists(st.sampled_from([0.0, 0.0, 0.5, 1.0, 2.5]), min_size=m * m, max_size=m * m))
    ).reshape(m, m)
    np.fill_diagonal(off, 0.0)
    b = -off
    b[np.diag_indices(m)] = off.sum(axis=1)
    if data.draw(st.booleans()):
        b[0, 0] += data.draw(st.sampled_from([0.0, 0.25, -0.5]))
    expected = _reference_valid(b)
    try:
        cm = validate_coupling(b)
    except ValidationError:
        assert not expected
    else:
        assert expected
        scale = max(1.0, float(np.abs(cm.entries).max()))
        assert np.abs(cm.entries @ np.ones(m)).max() <= 4 * m * np.finfo(float).eps * scale


# -- grids ------------------------------------------------------------------------------


def test_grid_guards():
    with pytest.raises(ValidationError):
        TorusGrid(1, 3)
    with pytest.raises(ValidationError):
        TorusGrid(3, 8)


@given(st.integers(1, 2), st.integers(4, 20), st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_stencil_weights(d, n, pt):
    g = TorusGrid(d, n)
    idx, wts = g.stencil(np.array(pt[:d]))
    assert np.all(wts >= 0) and abs(wts.sum() - 1) < 1e-12
    assert np.all((0 <= idx) & (idx < g.n_nodes))


def test_interpolation_exact_at_nodes_and_linear_between():
    g = TorusGrid(1, 8)
    vals = np.arange(8.0)
    assert np.allclose(g.interpolate(vals, g.nodes), vals)
    assert g.interpolate(vals, [[0.5 / 8 + 2 / 8]])[0] == pytest.approx(2.5)
    # wraparound: between the last node and node 0
    assert g.interpolate(vals, [[7.5 / 8]])[0] == pytest.approx(3.5)


def test_torus_distance_wraps():
    g = TorusGrid(2, 8)
    assert g.distance([0.05, 0.0], [0.95, 0.0]) == pytest.approx(0.1)
    assert g.distance([0.9, 0.9], [0.1, 0.1]) == pytest.approx(math.sqrt(0.08))


def test_control_grid():
    cg = ControlGrid.uniform(1, 5, 2.0)
    assert cg.size == 5 and cg.values[cg.zero_index, 0] == 0.0
    assert cg.spacing == pytest.approx(1.0)
    assert list(cg.on_boundary(np.arange(5))) == [True, False, False, False, True]
    cg2 = ControlGrid.uniform(2, 5, 1.0)
    assert np.all(np.linalg.norm(cg2.values, axis=1) <= 1.0 + 1e-12)
    with pytest.raises(ValidationError):
        ControlGrid.uniform(1, 4, 1.0)
    with pytest.raises(ValidationError):
        ControlGrid(np.array([[0.0], [1.0]]), 1.0)
    with pytest.raises(ValidationError):
        ControlGrid(np.array([[1.0], [-1.0]]), 1.0)


# -- fields -------------------------------------------------------------------------------


def test_expression_and_samples():
    e = Expression("1 - cos(2*pi*x)")
    assert e([[0.5]])[0] == pytest.approx(2.0)
    assert Expression("x*y", d=2)([[0.5, 0.25]])[0] == pytest.approx(0.125)
    for bad in ("__import__('os')", "x.real", "y", "open(1)", "lambda: 0"):
        with pytest.raises(ValidationError):
            Expression(bad)
    f = field_from(np.array([0.0, 1.0, 2.0, 1.0]))
    assert f([[0.125]])[0] == pytest.approx(0.5)
    assert field_from(3)([[0.3]])[0] == 3.0


def test_non_periodic_potential_rejected():
    with pytest.raises(ValidationError):
        HamiltonianSpec("quadratic", "x")


def test_catalog_guards():
    with pytest.raises(ValidationError):
        HamiltonianSpec("cubic", "0")
    with pytest.raises(ValidationError):
        HamiltonianSpec("quadratic-drift", "0")
    with pytest.raises(ValidationError):
        HamiltonianSpec("quadratic", "0", drift=("1",))
    with pytest.raises(ValidationError):
        HamiltonianSpec("power", "0", exponent=1.0)


# -- Hamiltonian and Lagrangian examples -----------------------------------------------------


def test_hamiltonian_examples():
    assert eval_hamiltonian(HamiltonianSpec("quadratic", "0"), [0.3], [0.0]) == 0.0
    assert eval_hamiltonian(HamiltonianSpec("quadratic", COS), [0.0], [2.0]) == pytest.approx(2.0, abs=1e-15)
    drift = HamiltonianSpec("quadratic-drift", "0", drift=("1",))
    assert eval_hamiltonian(drift, [0.77], [1.0]) == pytest.approx(1.5)


def test_legendre_examples():
    assert legendre_transform(HamiltonianSpec("quadratic", "0"), 0.1, 0.0) == 0.0
    assert legendre_transform(HamiltonianSpec("quadratic", COS), 0.25, 1.0) == pytest.approx(1.5)
    p4 = HamiltonianSpec("power", "0", exponent=4.0)
    assert legendre_transform(p4, 0.0, 1.0) == pytest.approx(0.75)
    assert legendre_transform(p4, 0.0, 1.0, numeric=True) == pytest.approx(0.75, abs=1e-9)
    # scipy-based brute force over p
    assert brute_conjugate(lambda p: np.abs(p) ** 4 / 4, 1.0) == pytest.approx(0.75, abs=1e-9)
    for v in (0.3, -1.7, 2.5):
        assert legendre_transform(p4, 0.0, v) == pytest.approx(power_conjugate(v, 4.0), rel=1e-12)


def test_numeric_search_radius_limit():
    p4 = HamiltonianSpec("power", "0", exponent=1.05)
    with pytest.raises(MaximizerOnBoundary):
        legendre_transform(p4, 0.0, 1.5, numeric=True, max_doublings=2)


@settings(max_examples=200)
@given(x=st.floats(0, 1), v=st.floats(-3, 3))
def test_numeric_legendre_matches_closed_form_1d(x, v):
    for h in catalog()[:5]:
        closed = legendre_transform(h, x, v)
        assert legendre_transform(h, x, v, numeric=True) == pytest.approx(closed, abs=1e-9)


@settings(max_examples=20)
@given(x=st.lists(st.floats(0, 1), min_size=2, max_size=2), v=st.lists(st.floats(-2, 2), min_size=2, max_size=2))
def test_numeric_legendre_matches_closed_form_2d(x, v):
    for h in catalog()[5:]:
        closed = legendre_transform(h, x, v)
        assert legendre_transform(h, x, v, numeric=True) == pytest.approx(closed, abs=1e-8)


@settings(max_examples=1000)
@given(
    which=st.integers(0, 7),
    x=st.lists(st.floats(0, 1), min_size=2, max_size=2),
    p=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    v=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
)
def test_fenchel_inequality(which, x, p, v):
    h = catalog()[which]
    x, p, v = (np.array(a[: h.d]) for a in (x, p, v))
    assert h.hamiltonian(x, p)[0] + h.lagrangian(x, v)[0] - p @ v >= -1e-9


@settings(max_examples=300)
@given(
    which=st.integers(0, 7),
    x=st.lists(st.floats(0, 1), min_size=2, max_size=2),
    p1=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    p2=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    t=st.floats(0, 1),
)
def test_convex_in_p(which, x, p1, p2, t):
    h = catalog()[which]
    x, p1, p2 = (np.array(a[: h.d]) for a in (x, p1, p2))
    mid = h.hamiltonian(x, t * p1 + (1 - t) * p2)[0]
    assert mid <= t * h.hamiltonian(x, p1)[0] + (1 - t) * h.hamiltonian(x, p2)[0] + 1e-12 * (1 + abs(mid))


# -- problems ------------------------------------------------------------------------------


def test_problems():
    p = scalar_problem()
    assert p.m == 1 and p.coupling.entries.tolist() == [[0.0]]
    lp = lifted_problem(p)
    assert lp.m == 2 and lp.hamiltonians[1].mode == 1
    r = random_problem(3)
    assert r.m == 2 and r.hamiltonians[-1].kind == "quadratic-drift"
    assert random_problem(3).coupling.entries.tolist() == r.coupling.entries.tolist()
    tab = p.lagrangian_table(TorusGrid(1, 4).nodes, ControlGrid.uniform(1, 3, 1.0))
    assert tab.shape == (1, 4, 3)
    assert tab[0, 1, 0] == pytest.approx(0.5 + 1.0)  # x = 0.25, v = -1
