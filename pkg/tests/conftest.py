import functools
import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion -> (ok, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@functools.lru_cache(maxsize=None)
def scalar_scheme(n=128, controls=65):
    from hjswitch import default_scheme, scalar_problem

    return default_scheme(scalar_problem(), n, controls)


@functools.lru_cache(maxsize=None)
def lifted_scheme(n=128, controls=65):
    from hjswitch import default_scheme, lifted_problem, scalar_problem

    return default_scheme(lifted_problem(scalar_problem()), n, controls)


@functools.lru_cache(maxsize=None)
def selection(kind="scalar", n=128):
    """(SelectionProblem, MatherSolution, u0) cached per session."""
    from hjswitch.selection import compute_u0, selection_problem

    sc = scalar_scheme(n) if kind == "scalar" else lifted_scheme(n)
    sel, sol = selection_problem(sc)
    return sel, sol, compute_u0(sel)


@pytest.fixture
def acceptance():
    return ACCEPTANCE
