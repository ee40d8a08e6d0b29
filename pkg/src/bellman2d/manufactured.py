"""Closed-form solutions of Min{L1 v, L2 v} = 0 and their self-check.

Every entry is a piecewise polynomial of degree <= 3 split along a straight
interface ``{(x - x0) . nu = 0}``. Polynomials are stored through their
Taylor data at the origin, ``c + g.x + x.H.x/2 + T[x,x,x]/6``, which makes
rotations and exact derivatives one-liners.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .operators import BellmanProblem

ORACLE_TOL = 1e-12


class OracleError(AssertionError):
    """A catalog entry failed its symbolic self-check."""


@dataclass(frozen=True)
class CubicPiece:
    c: float = 0.0
    g: np.ndarray = field(default_factory=lambda: np.zeros(2))
    H: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    T: np.ndarray = field(default_factory=lambda: np.zeros((2, 2, 2)))

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lin = x @ self.g
        quad = 0.5 * np.einsum("...i,ij,...j->...", x, self.H, x)
        cub = np.einsum("ijk,...i,...j,...k->...", self.T, x, x, x) / 6.0
        return self.c + lin + quad + cub

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.g + x @ self.H + 0.5 * np.einsum("ijk,...j,...k->...i", self.T, x, x)

    def hess(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.H + np.einsum("ijk,...k->...ij", self.T, x)

    def third(self) -> np.ndarray:
        return self.T

    def rotated(self, R: np.ndarray) -> CubicPiece:
        """Piece of ``x -> self(R^T x)``."""
        return CubicPiece(
            self.c,
            R @ self.g,
            R @ self.H @ R.T,
            np.einsum("ai,bj,ck,ijk->abc", R, R, R, self.T),
        )

    def __add__(self, other: CubicPiece) -> CubicPiece:
        return CubicPiece(self.c + other.c, self.g + other.g, self.H + other.H, self.T + other.T)


def _outer3(nu: np.ndarray) -> np.ndarray:
    return np.einsum("i,j,k->ijk", nu, nu, nu)


def _sym_third(t111: float, t112: float, t122: float, t222: float) -> np.ndarray:
    T = np.zeros((2, 2, 2))
    T[0, 0, 0] = t111
    T[0, 0, 1] = T[0, 1, 0] = T[1, 0, 0] = t112
    T[0, 1, 1] = T[1, 0, 1] = T[1, 1, 0] = t122
    T[1, 1, 1] = t222
    return T


def _rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class ExactSolution:
    """Piecewise cubic: ``plus`` where ``(x - x0).nu >= 0``, ``minus`` elsewhere.

    ``u_direction`` is the unit vector ``d`` for which ``u = d.D^2v.d`` is the
    two-phase variable (``e2`` for the reduced operator pair).
    """

    kind: str
    params: dict[str, Any]
    problem: BellmanProblem
    plus: CubicPiece
    minus: CubicPiece
    nu: np.ndarray
    x0: np.ndarray = field(default_factory=lambda: np.zeros(2))
    u_direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    has_interface: bool = True

    def _side(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.x0) @ self.nu >= 0

    def value(self, x: np.ndarray) -> np.ndarray:
        side = self._side(x)
        return np.where(side, self.plus.value(x), self.minus.value(x))

    def __call__(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        return self.value(np.stack(np.broadcast_arrays(x1, x2), axis=-1))

    def grad(self, x: np.ndarray) -> np.ndarray:
        side = self._side(x)[..., None]
        return np.where(side, self.plus.grad(x), self.minus.grad(x))

    def hess(self, x: np.ndarray) -> np.ndarray:
        side = self._side(x)[..., None, None]
        return np.where(side, self.plus.hess(x), self.minus.hess(x))

    def u(self, x: np.ndarray) -> np.ndarray:
        """Two-phase variable ``d.D^2v.d`` in closed form."""
        d = self.u_direction
        return np.einsum("i,...ij,j->...", d, self.hess(x), d)

    def u_field(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        return self.u(np.stack(np.broadcast_arrays(x1, x2), axis=-1))

    @property
    def jump_slopes(self) -> tuple[float, float]:
        """Inward normal slopes (a, b) of u on the two sides of the interface."""
        d = self.u_direction
        a = float(np.einsum("i,j,ijk,k->", d, d, self.plus.T, self.nu))
        b = float(np.einsum("i,j,ijk,k->", d, d, self.minus.T, self.nu))
        return a, b

    def describe(self) -> dict[str, Any]:
        return {"kind": self.kind, **self.params}


def exact_eval(sol: ExactSolution, x: np.ndarray, derivative: str = "value"):
    """Closed-form value, gradient, Hessian or third derivatives at ``x``.

    ``derivative="third"`` returns the constant tensor of the side containing
    ``x``; on the interface it returns the pair ``(plus, minus)``.
    """
    x = np.asarray(x, dtype=float)
    if derivative == "value":
        return sol.value(x)
    if derivative == "grad":
        return sol.grad(x)
    if derivative == "hess":
        return sol.hess(x)
    if derivative == "third":
        s = float((x - sol.x0) @ sol.nu)
        if sol.has_interface and abs(s) <= 1e-14:
            return sol.plus.T, sol.minus.T
        return sol.plus.T if s >= 0 else sol.minus.T
    raise ValueError(f"unknown derivative {derivative!r}")


def glued_cubic(m: float = 2.0, b: float = 1.0, rotation: float = 0.0) -> ExactSolution:
    """``(bm/6)(x2^3 - 3 x1^2 x2)`` above ``x2 = 0``, ``b(x2^3/6 - m x1^2 x2 / 2)`` below.

    A nonzero ``rotation`` (radians) rotates the solution and both operators.
    """
    minus = CubicPiece(T=_sym_third(0.0, -m * b, 0.0, b))
    plus = CubicPiece(T=_sym_third(0.0, -m * b, 0.0, m * b))
    problem = BellmanProblem.reduced(m)
    e2 = np.array([0.0, 1.0])
    if rotation:
        R = _rotation(rotation)
        plus, minus = plus.rotated(R), minus.rotated(R)
        problem = problem.rotated(rotation)
        e2 = R @ e2
    return ExactSolution(
        "glued_cubic",
        {"m": float(m), "b": float(b), "rotation_deg": round(float(np.rad2deg(rotation)), 10)},
        problem,
        plus,
        minus,
        nu=e2,
        u_direction=e2,
    )


def tilted_cubic(m: float = 2.0, b: float = 1.0, angle: float = 0.0) -> ExactSolution:
    """Reduced operators with a straight free boundary of normal ``(-sin, cos)(angle)``.

    Below the line ``v`` is the cubic with ``v22 = b s`` and ``v11 + m v22 = 0``;
    above it adds ``(m - 1) b s^3 / 6``, so ``u = v22`` has slopes
    ``a = (1 + (m - 1) nu2^2) b`` and ``b``.
    """
    nu = np.array([-np.sin(angle), np.cos(angle)])
    minus = CubicPiece(T=_sym_third(-m * b * nu[0], -m * b * nu[1], b * nu[0], b * nu[1]))
    plus = minus + CubicPiece(T=(m - 1) * b * _outer3(nu))
    return ExactSolution(
        "tilted_cubic",
        {"m": float(m), "b": float(b), "angle_deg": round(float(np.rad2deg(angle)), 10)},
        BellmanProblem.reduced(m),
        plus,
        minus,
        nu=nu,
    )


def quadratic_saddle(m: float = 2.0) -> ExactSolution:
    piece = CubicPiece(H=np.diag([-2.0, 2.0]))
    return ExactSolution(
        "quadratic_saddle",
        {"m": float(m)},
        BellmanProblem.reduced(m),
        piece,
        piece,
        nu=np.array([0.0, 1.0]),
        has_interface=False,
    )


def bilinear(m: float = 2.0) -> ExactSolution:
    piece = CubicPiece(H=np.array([[0.0, 1.0], [1.0, 0.0]]))
    return ExactSolution(
        "bilinear",
        {"m": float(m)},
        BellmanProblem.reduced(m),
        piece,
        piece,
        nu=np.array([0.0, 1.0]),
        has_interface=False,
    )


def custom_polynomial(
    problem: BellmanProblem,
    c: float = 0.0,
    g: Any = (0.0, 0.0),
    H: Any = ((0.0, 0.0), (0.0, 0.0)),
    T: Any = (0.0, 0.0, 0.0, 0.0),
) -> ExactSolution:
    """Single cubic with third derivatives ``T = (v111, v112, v122, v222)``."""
    piece = CubicPiece(float(c), np.asarray(g, float), np.asarray(H, float), _sym_third(*T))
    return ExactSolution(
        "custom_polynomial",
        {"c": c, "g": list(g), "H": [list(r) for r in H], "T": list(T)},
        problem,
        piece,
        piece,
        nu=np.array([0.0, 1.0]),
        has_interface=False,
    )


@dataclass(frozen=True)
class OracleReport:
    residual: float
    value_defect: float
    grad_defect: float
    hess_defect: float
    samples: int

    @property
    def worst(self) -> float:
        return max(self.residual, self.value_defect, self.grad_defect, self.hess_defect)


def _oracle_points(count: int) -> np.ndarray:
    k = int(np.ceil(np.sqrt(count)))
    t = -1.0 + (2.0 * np.arange(k) + 1.0) / k
    X, Y = np.meshgrid(t, t, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=-1)


def oracle_check(
    sol: ExactSolution,
    problem: BellmanProblem | None = None,
    sample_count: int = 10_000,
    tol: float = ORACLE_TOL,
) -> OracleReport:
    """Substitute closed-form Hessians into both operators and check C^2 gluing.

    Raises :class:`OracleError` when any defect exceeds ``tol``.
    """
    problem = sol.problem if problem is None else problem
    pts = _oracle_points(sample_count)
    if sol.has_interface:
        tau = np.array([-sol.nu[1], sol.nu[0]])
        t = np.linspace(-1.0, 1.0, 201)
        line = sol.x0 + t[:, None] * tau
        pts = np.concatenate([pts, line])
    else:
        line = np.zeros((0, 2))
    H = sol.hess(pts)
    l1 = np.einsum("ij,nij->n", problem.op1.matrix, H)
    l2 = np.einsum("ij,nij->n", problem.op2.matrix, H)
    residual = float(np.max(np.abs(np.minimum(l1, l2))))
    if line.size:
        dv = float(np.max(np.abs(sol.plus.value(line) - sol.minus.value(line))))
        dg = float(np.max(np.abs(sol.plus.grad(line) - sol.minus.grad(line))))
        dh = float(np.max(np.abs(sol.plus.hess(line) - sol.minus.hess(line))))
    else:
        dv = dg = dh = 0.0
    rep = OracleReport(residual, dv, dg, dh, len(pts))
    if rep.worst > tol:
        raise OracleError(f"{sol.describe()} failed oracle check: {rep}")
    return rep


def catalog() -> list[ExactSolution]:
    """Catalog entries used by the test suite and the ``manufactured list`` command."""
    return [
        glued_cubic(2.0, 1.0),
        glued_cubic(1.5, 1.0),
        glued_cubic(4.0, 1.0),
        glued_cubic(3.0, 0.5, np.deg2rad(15.0)),
        tilted_cubic(1.5, 1.0, np.deg2rad(15.0)),
        tilted_cubic(2.0, 1.0, np.deg2rad(15.0)),
        tilted_cubic(4.0, 1.0, np.deg2rad(15.0)),
        quadratic_saddle(2.0),
        quadratic_saddle(1.0),
        bilinear(2.0),
    ]


def from_config(cfg: dict[str, Any]) -> ExactSolution:
    """Build a catalog entry from a boundary config such as
    ``{"kind": "manufactured_cubic", "m": 2, "b": 1, "angle_deg": 15}``."""
    kind = cfg["kind"]
    m = float(cfg.get("m", 2.0))
    if kind in ("manufactured_cubic", "tilted_cubic"):
        angle = np.deg2rad(float(cfg.get("angle_deg", 0.0)))
        return tilted_cubic(m, float(cfg.get("b", 1.0)), angle)
    if kind == "glued_cubic":
        rot = np.deg2rad(float(cfg.get("rotation_deg", 0.0)))
        return glued_cubic(m, float(cfg.get("b", 1.0)), rot)
    if kind == "quadratic_saddle":
        return quadratic_saddle(m)
    if kind == "bilinear":
        return bilinear(m)
    raise ValueError(f"not a manufactured kind: {kind!r}")
