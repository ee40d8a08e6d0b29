"""Shared fixtures: the oracle gate, cached solves and the acceptance summary."""

from __future__ import annotations

import numpy as np
import pytest

from bellman2d import make_grid, sample, solve_policy_iteration
from bellman2d.grid import ScalarField2D, hessian_components
from bellman2d.manufactured import catalog, glued_cubic, oracle_check, tilted_cubic

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session", autouse=True)
def oracle_gate():
    """Every catalog entry must pass its oracle before anything else runs."""
    worst = 0.0
    try:
        for sol in catalog():
            worst = max(worst, oracle_check(sol).worst)
    except AssertionError as exc:
        ACCEPTANCE[10] = (False, str(exc))
        pytest.exit(f"manufactured oracle failed: {exc}", returncode=1)
    ACCEPTANCE.setdefault(10, (True, f"{len(catalog())} catalog entries, worst defect {worst:.1e}"))
    return worst


_SOLVES: dict = {}


def solved(kind: str, m: float, angle_deg: float, n: int, b: float = 1.0):
    """Policy-iteration solve of manufactured data, cached across the session.

    Returns ``(sol, grid, outcome, u)`` with ``u`` the discrete two-phase field
    ``d.D^2_h v.d`` for the solution's ``u_direction``.
    """
    key = (kind, m, angle_deg, n, b)
    if key not in _SOLVES:
        if kind == "glued":
            sol = glued_cubic(m, b, np.deg2rad(angle_deg))
        else:
            sol = tilted_cubic(m, b, np.deg2rad(angle_deg))
        g = make_grid((0.0, 0.0), 1.0, n)
        out = solve_policy_iteration(sol.problem, sample(sol, g))
        d11, d12, d22 = hessian_components(out.v)
        d = sol.u_direction
        u = ScalarField2D(g, d[0] ** 2 * d11 + 2 * d[0] * d[1] * d12 + d[1] ** 2 * d22)
        _SOLVES[key] = (sol, g, out, u)
    return _SOLVES[key]


@pytest.fixture(scope="session")
def solve_cache():
    return solved


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)``; printed in the terminal summary."""

    def record(k: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[k] = (bool(passed), detail)

    return record


_acceptance_selected = False


def pytest_collection_modifyitems(items):
    global _acceptance_selected
    _acceptance_selected = any("test_acceptance" in it.nodeid for it in items)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_selected:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, 11):
        if k in ACCEPTANCE:
            ok, detail = ACCEPTANCE[k]
            line = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        else:
            line = f"criterion {k:>2}: NOT RUN"
        terminalreporter.write_line(line)
