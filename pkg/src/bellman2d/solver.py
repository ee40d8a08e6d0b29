"""Dirichlet solvers for Min{L1 v, L2 v} = 0.

The main route is Howard policy iteration over node-wise operator choices,
with each linear subproblem solved by a sparse direct factorization. The
smoothed operator ``v11 + h_eps(v22)`` gives an independent second route.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid2D, ScalarField2D, second_difference
from .operators import (
    BellmanProblem,
    EllipticOperator,
    SmoothedNonlinearity,
    apply_operator,
    bellman_residual,
    smoothed_residual,
)

logger = logging.getLogger(__name__)

BOUNDARY = 0  # policy sentinel on the boundary ring


class SolverError(RuntimeError):
    """A solve failed to reach its tolerance within the iteration cap."""


@dataclass(frozen=True)
class PolicyField:
    grid: Grid2D
    choice: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        c = np.array(self.choice, dtype=np.int8)
        if c.shape != (self.grid.n, self.grid.n):
            raise ValueError("policy shape does not match grid")
        if not np.all(np.isin(c[1:-1, 1:-1], (1, 2))):
            raise ValueError("interior policy entries must be 1 or 2")
        c.setflags(write=False)
        object.__setattr__(self, "choice", c)

    @classmethod
    def constant(cls, grid: Grid2D, which: int) -> PolicyField:
        c = np.full((grid.n, grid.n), BOUNDARY, dtype=np.int8)
        c[1:-1, 1:-1] = which
        return cls(grid, c)


@dataclass(frozen=True)
class SolveOutcome:
    v: ScalarField2D
    policy: PolicyField
    residual_max: float
    policy_updates: int
    linear_iterations: int
    history: tuple[ScalarField2D, ...] = field(default=(), repr=False)


def _interior_index(n: int) -> np.ndarray:
    idx = -np.ones((n, n), dtype=np.int64)
    idx[1:-1, 1:-1] = np.arange((n - 2) ** 2).reshape(n - 2, n - 2)
    return idx


def _assemble(
    weights: dict[tuple[int, int], np.ndarray], boundary: ScalarField2D
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse system for node-wise stencil weights (arrays over interior nodes).

    Boundary-ring neighbors are moved to the right-hand side.
    """
    g = boundary.grid
    n = g.n
    idx = _interior_index(n)
    rows_all = idx[1:-1, 1:-1]
    rows, cols, data = [rows_all.ravel()], [rows_all.ravel()], [weights[(0, 0)].ravel()]
    rhs = np.zeros((n - 2, n - 2))
    gv = boundary.values
    for (di, dj), w in weights.items():
        if (di, dj) == (0, 0):
            continue
        nb = idx[1 + di : n - 1 + di, 1 + dj : n - 1 + dj]
        inner = nb >= 0
        rows.append(rows_all[inner])
        cols.append(nb[inner])
        data.append(w[inner])
        gb = gv[1 + di : n - 1 + di, 1 + dj : n - 1 + dj]
        rhs -= np.where(inner, 0.0, w * gb)
    N = (n - 2) ** 2
    A = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )
    A.sum_duplicates()
    return A, rhs.ravel()


def _policy_weights(
    problem: BellmanProblem, policy: PolicyField
) -> dict[tuple[int, int], np.ndarray]:
    w1 = problem.op1.stencil()
    w2 = problem.op2.stencil()
    sel = policy.choice[1:-1, 1:-1] == 1
    return {k: np.where(sel, w1[k], w2[k]) for k in w1}


def _mixed_apply(problem: BellmanProblem, policy: PolicyField, v: ScalarField2D) -> np.ndarray:
    l1 = apply_operator(problem.op1, v).values
    l2 = apply_operator(problem.op2, v).values
    return np.where(policy.choice == 1, l1, l2)


def linear_solve(
    op: EllipticOperator | tuple[BellmanProblem, PolicyField],
    boundary: ScalarField2D,
    tol_lin: float = 1e-9,
) -> ScalarField2D:
    """Solve ``L v = 0`` with the boundary ring of ``boundary`` as Dirichlet data.

    ``op`` is a single operator or a ``(problem, policy)`` pair selecting the
    operator node by node.
    """
    if tol_lin <= 0:
        raise ValueError("tol_lin must be positive")
    g = boundary.grid
    if isinstance(op, EllipticOperator):
        problem = BellmanProblem(op, op)
        policy = PolicyField.constant(g, 1)
    else:
        problem, policy = op
    weights = _policy_weights(problem, policy)
    A, rhs = _assemble(weights, boundary)
    lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A")
    sol = lu.solve(rhs)
    # one step of iterative refinement
    sol += lu.solve(rhs - A @ sol)
    vals = np.array(boundary.values, dtype=float)
    vals[1:-1, 1:-1] = sol.reshape(g.n - 2, g.n - 2)
    v = ScalarField2D(g, vals)
    res = np.nanmax(np.abs(_mixed_apply(problem, policy, v)[1:-1, 1:-1]))
    if not res <= max(tol_lin, roundoff_floor(problem, boundary)):
        raise SolverError(f"linear residual {res:.3e} above tol_lin={tol_lin:.3e}")
    return v


def roundoff_floor(problem: BellmanProblem, boundary: ScalarField2D) -> float:
    """Residual size that floating point cannot resolve below: one ulp of
    ``max|boundary|`` times the stencil's absolute weight sum."""
    g = boundary.grid
    wsum = max(sum(abs(w) for w in op.stencil().values()) for op in problem.ops())
    return np.finfo(float).eps * wsum / g.h**2 * float(np.nanmax(np.abs(boundary.values)))


def solve_policy_iteration(
    problem: BellmanProblem,
    boundary: ScalarField2D,
    tol: float = 1e-8,
    max_policy_updates: int = 50,
    keep_history: bool = False,
) -> SolveOutcome:
    """Howard iteration starting from the all-``L1`` policy.

    A node switches operator only when the other one is lower by more than
    ``tol / 2``; near-ties keep the previous choice.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    problem.op1.stencil()
    problem.op2.stencil()
    g = boundary.grid
    policy = PolicyField.constant(g, 1)
    tol_lin = tol / 10
    history = []
    updates = 0
    solves = 0
    while True:
        v = linear_solve((problem, policy), boundary, tol_lin)
        solves += 1
        if keep_history:
            history.append(v)
        l1 = apply_operator(problem.op1, v).values[1:-1, 1:-1]
        l2 = apply_operator(problem.op2, v).values[1:-1, 1:-1]
        residual_max = float(np.max(np.abs(np.minimum(l1, l2))))
        cur = policy.choice[1:-1, 1:-1]
        lcur = np.where(cur == 1, l1, l2)
        lother = np.where(cur == 1, l2, l1)
        switch = lother < lcur - tol / 2
        logger.debug(
            "policy solve %d: residual %.3e, %d switches", solves, residual_max, switch.sum()
        )
        if residual_max <= tol or not switch.any():
            break
        if updates >= max_policy_updates:
            raise SolverError(
                f"policy iteration did not converge in {max_policy_updates} updates "
                f"(residual {residual_max:.3e})"
            )
        new = np.array(policy.choice)
        new[1:-1, 1:-1] = np.where(switch, 3 - cur, cur)
        policy = PolicyField(g, new)
        updates += 1
    if residual_max > tol:
        raise SolverError(
            f"stable policy but residual {residual_max:.3e} > tol {tol:.3e} "
            f"(round-off floor {roundoff_floor(problem, boundary):.1e})"
        )
    return SolveOutcome(v, policy, residual_max, updates, solves, tuple(history))


def _difference_matrix(n: int, direction: str, h: float) -> sp.csr_matrix:
    """Interior-only 3-point second difference matrix (boundary columns dropped)."""
    m = n - 2
    T = sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) / h**2
    I = sp.identity(m)
    # interior unknowns are ordered with x2 (second index) fastest
    return sp.kron(T, I).tocsr() if direction == "e1" else sp.kron(I, T).tocsr()


def _relax_smoothed(
    nl: SmoothedNonlinearity,
    v: np.ndarray,
    h: float,
    tol: float,
    max_sweeps: int,
    omega: float,
) -> np.ndarray:
    """Red-black nonlinear SOR; each node update solves its scalar equation exactly."""
    n = v.shape[0]
    m, e = nl.m, nl.eps
    I, J = np.meshgrid(np.arange(1, n - 1), np.arange(1, n - 1), indexing="ij")
    colors = [((I + J) % 2 == k) for k in (0, 1)]
    h2 = h * h
    for sweep in range(max_sweeps):
        for mask in colors:
            s1 = v[2:, 1:-1] + v[:-2, 1:-1]
            s2 = v[1:-1, 2:] + v[1:-1, :-2]
            c = (s1 - s2) / h2
            # D22 value y at the updated node solves k(y) = y + h_eps(y) = -c,
            # k increasing with k(eps) = 2 eps and k(-eps) = -(1 + m) eps
            rhs = -c
            qa = -(m - 1) / (4 * e)
            qb = 1 + (m + 1) / 2
            qc = -m * e + (m + 1) / 2 * e + (m - 1) * e / 4 - rhs
            disc = np.sqrt(np.maximum(qb * qb - 4 * qa * qc, 0.0))
            y = np.where(
                rhs >= 2 * e,
                rhs / 2,
                np.where(rhs <= -(1 + m) * e, rhs / (1 + m), -2 * qc / (qb + disc)),
            )
            target = (s2 - h2 * y) / 2
            inner = v[1:-1, 1:-1]
            inner[mask] = (1 - omega) * inner[mask] + omega * target[mask]
        if sweep % 20 == 19:
            res = np.max(np.abs(_smoothed_interior(nl, v, h)))
            if res <= tol:
                return v
    res = np.max(np.abs(_smoothed_interior(nl, v, h)))
    if res > tol:
        raise SolverError(f"relaxation stalled at residual {res:.3e} after {max_sweeps} sweeps")
    return v


def _smoothed_interior(nl: SmoothedNonlinearity, v: np.ndarray, h: float) -> np.ndarray:
    c = v[1:-1, 1:-1]
    d11 = (v[2:, 1:-1] + v[:-2, 1:-1] - 2 * c) / h**2
    d22 = (v[1:-1, 2:] + v[1:-1, :-2] - 2 * c) / h**2
    return d11 + nl.h(d22)


def solve_smoothed(
    nl: SmoothedNonlinearity,
    boundary: ScalarField2D,
    tol: float = 1e-8,
    initial: ScalarField2D | None = None,
    method: str = "newton",
    max_iter: int = 200,
) -> ScalarField2D:
    """Solve ``D11 v + h_eps(D22 v) = 0`` with Dirichlet data from ``boundary``.

    ``method="newton"`` runs damped Newton with a backtracking line search on
    the max-norm residual; ``method="relaxation"`` runs red-black nonlinear SOR
    with exact scalar node solves (practical only on coarse grids).
    """
    g = boundary.grid
    h = g.h
    v = np.array(boundary.values if initial is None else initial.values, dtype=float)
    v[0, :], v[-1, :] = boundary.values[0, :], boundary.values[-1, :]
    v[:, 0], v[:, -1] = boundary.values[:, 0], boundary.values[:, -1]
    if method == "relaxation":
        omega = 2.0 / (1.0 + np.sin(np.pi / (g.n - 1)))
        v = _relax_smoothed(nl, v, h, tol, max_iter * 1000, omega)
        return ScalarField2D(g, v)
    if method != "newton":
        raise ValueError(f"unknown method {method!r}")
    n = g.n
    D11 = _difference_matrix(n, "e1", h)
    D22 = _difference_matrix(n, "e2", h)
    F = _smoothed_interior(nl, v, h)
    res = np.max(np.abs(F))
    for it in range(max_iter):
        if res <= tol:
            break
        d22 = (v[1:-1, 2:] + v[1:-1, :-2] - 2 * v[1:-1, 1:-1]) / h**2
        J = D11 + sp.diags(nl.dh(d22).ravel()) @ D22
        step = spla.spsolve(J.tocsc(), -F.ravel()).reshape(n - 2, n - 2)
        t = 1.0
        while True:
            trial = v.copy()
            trial[1:-1, 1:-1] += t * step
            Ft = _smoothed_interior(nl, trial, h)
            rt = np.max(np.abs(Ft))
            if rt < res or t < 1e-4:
                break
            t /= 2
        v, F, res = trial, Ft, rt
        logger.debug("newton iter %d: residual %.3e (step %.3g)", it, res, t)
    if res > tol:
        raise SolverError(f"smoothed Newton residual {res:.3e} > tol {tol:.3e}")
    return ScalarField2D(g, v)


def second_derivative_field(v: ScalarField2D) -> ScalarField2D:
    """u = D22 v, the two-phase state variable of the reduced problem."""
    return second_difference(v, "e2")


def residual_max(problem: BellmanProblem, v: ScalarField2D) -> float:
    return float(np.max(np.abs(bellman_residual(problem, v).interior)))


def smoothed_residual_max(nl: SmoothedNonlinearity, v: ScalarField2D) -> float:
    return float(np.max(np.abs(smoothed_residual(nl, v).interior)))
