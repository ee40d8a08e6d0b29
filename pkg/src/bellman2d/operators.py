"""Constant-coefficient operators tr(A D^2), the Bellman residual and its smoothing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .grid import ScalarField2D, second_difference

# neighbor offsets of the 9-point stencil, excluding the center
OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1))


class StencilError(ValueError):
    """Coefficient matrix cannot be discretized with a monotone 9-point stencil."""


@dataclass(frozen=True)
class EllipticOperator:
    A: tuple[tuple[float, float], tuple[float, float]]
    lam: float | None = None
    Lam: float | None = None

    def __post_init__(self) -> None:
        a = np.asarray(self.A, dtype=float)
        if a.shape != (2, 2) or not np.isclose(a[0, 1], a[1, 0], rtol=0, atol=1e-14):
            raise ValueError(f"A must be a symmetric 2x2 matrix, got {self.A}")
        object.__setattr__(self, "A", ((a[0, 0], a[0, 1]), (a[0, 1], a[1, 1])))
        eig = np.linalg.eigvalsh(self.matrix)
        lam = eig[0] if self.lam is None else self.lam
        Lam = eig[1] if self.Lam is None else self.Lam
        if lam <= 0:
            raise ValueError(f"operator is not uniformly elliptic (eigenvalues {eig})")
        if eig[0] < lam * (1 - 1e-12) or eig[1] > Lam * (1 + 1e-12):
            raise ValueError(f"eigenvalues {eig} outside [{lam}, {Lam}]")
        object.__setattr__(self, "lam", float(lam))
        object.__setattr__(self, "Lam", float(Lam))

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.A, dtype=float)

    @property
    def a11(self) -> float:
        return self.A[0][0]

    @property
    def a12(self) -> float:
        return self.A[0][1]

    @property
    def a22(self) -> float:
        return self.A[1][1]

    @property
    def admissible(self) -> bool:
        c = abs(self.a12)
        return self.a11 >= c and self.a22 >= c

    def stencil(self) -> dict[tuple[int, int], float]:
        """Neighbor weights (times h**2) and the center weight under key (0, 0).

        The mixed term uses the diagonal matching the sign of a12, so every
        neighbor weight is nonnegative.
        """
        if not self.admissible:
            raise StencilError(
                f"a11={self.a11}, a22={self.a22} must both dominate |a12|={abs(self.a12)} "
                "for a monotone stencil"
            )
        c = abs(self.a12)
        w = {off: 0.0 for off in OFFSETS}
        w[(1, 0)] = w[(-1, 0)] = self.a11 - c
        w[(0, 1)] = w[(0, -1)] = self.a22 - c
        if self.a12 >= 0:
            w[(1, 1)] = w[(-1, -1)] = c
        else:
            w[(1, -1)] = w[(-1, 1)] = c
        w[(0, 0)] = -sum(w.values())
        return w

    @classmethod
    def identity(cls) -> EllipticOperator:
        return cls(((1.0, 0.0), (0.0, 1.0)))

    @classmethod
    def diagonal(cls, d1: float, d2: float) -> EllipticOperator:
        return cls(((d1, 0.0), (0.0, d2)))

    def rotated(self, theta: float) -> EllipticOperator:
        """Operator R A R^T for the counterclockwise rotation R by ``theta``."""
        c, s = np.cos(theta), np.sin(theta)
        R = np.array([[c, -s], [s, c]])
        a = R @ self.matrix @ R.T
        a = 0.5 * (a + a.T)
        return EllipticOperator(((a[0, 0], a[0, 1]), (a[1, 0], a[1, 1])))


@dataclass(frozen=True)
class BellmanProblem:
    op1: EllipticOperator
    op2: EllipticOperator
    m: float | None = None

    @classmethod
    def reduced(cls, m: float) -> BellmanProblem:
        if m < 1:
            raise ValueError(f"reduced form needs m >= 1, got {m}")
        return cls(EllipticOperator.identity(), EllipticOperator.diagonal(1.0, m), float(m))

    @property
    def lam(self) -> float:
        return min(self.op1.lam, self.op2.lam)

    @property
    def Lam(self) -> float:
        return max(self.op1.Lam, self.op2.Lam)

    def ops(self) -> tuple[EllipticOperator, EllipticOperator]:
        return self.op1, self.op2

    def rotated(self, theta: float) -> BellmanProblem:
        return BellmanProblem(self.op1.rotated(theta), self.op2.rotated(theta), self.m)

    @classmethod
    def from_config(cls, cfg: dict[str, Any]) -> BellmanProblem:
        """``{"m": value}`` or ``{"A1": [[..],[..]], "A2": [[..],[..]]}``.

        Each of ``A1``/``A2`` may also be given as ``{"A": [[..],[..]]}``.
        """
        if "m" in cfg:
            if "A1" in cfg or "A2" in cfg:
                raise ValueError("give either 'm' or 'A1'/'A2', not both")
            return cls.reduced(float(cfg["m"]))
        if "A1" not in cfg or "A2" not in cfg:
            raise ValueError("operator config needs 'm' or both 'A1' and 'A2'")
        mats = []
        for key in ("A1", "A2"):
            spec = cfg[key]
            if isinstance(spec, dict):
                spec = spec["A"]
            mats.append(EllipticOperator(tuple(tuple(float(x) for x in row) for row in spec)))
        return cls(mats[0], mats[1])

    def to_config(self) -> dict[str, Any]:
        if self.m is not None:
            return {"m": self.m}
        return {"A1": [list(r) for r in self.op1.A], "A2": [list(r) for r in self.op2.A]}


def apply_operator(op: EllipticOperator, f: ScalarField2D) -> ScalarField2D:
    """Monotone 9-point discretization of tr(A D^2 f); NaN on the boundary ring."""
    w = op.stencil()
    v = f.values
    n = f.grid.n
    acc = w[(0, 0)] * v[1:-1, 1:-1]
    for (di, dj), wk in w.items():
        if (di, dj) == (0, 0) or wk == 0.0:
            continue
        acc = acc + wk * v[1 + di : n - 1 + di, 1 + dj : n - 1 + dj]
    out = np.full_like(v, np.nan)
    out[1:-1, 1:-1] = acc / f.grid.h**2
    return ScalarField2D(f.grid, out)


def bellman_residual(problem: BellmanProblem, v: ScalarField2D) -> ScalarField2D:
    l1 = apply_operator(problem.op1, v)
    l2 = apply_operator(problem.op2, v)
    return l1.minimum(l2)


@dataclass(frozen=True)
class SmoothedNonlinearity:
    """Concave C^{1,1} smoothing of ``s+ - m s-`` on ``[-eps, eps]``.

    The derivative interpolates linearly from ``m`` at ``-eps`` to ``1`` at ``eps``.
    """

    m: float
    eps: float

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    def h(self, s: np.ndarray | float) -> np.ndarray | float:
        m, e = self.m, self.eps
        s_arr = np.asarray(s, dtype=float)
        sc = np.clip(s_arr, -e, e)
        # integral of the interpolated slope from -eps to sc
        mid = -m * e + (m + 1) / 2 * (sc + e) - (m - 1) / (4 * e) * (sc**2 - e**2)
        out = np.where(s_arr >= e, s_arr, np.where(s_arr <= -e, m * s_arr, mid))
        return float(out) if np.ndim(s) == 0 else out

    def dh(self, s: np.ndarray | float) -> np.ndarray | float:
        m, e = self.m, self.eps
        s_arr = np.asarray(s, dtype=float)
        sc = np.clip(s_arr, -e, e)
        out = (m + 1) / 2 - (m - 1) / (2 * e) * sc
        return float(out) if np.ndim(s) == 0 else out

    def h0(self, s: np.ndarray | float) -> np.ndarray | float:
        s_arr = np.asarray(s, dtype=float)
        out = np.maximum(s_arr, 0) - self.m * np.maximum(-s_arr, 0)
        return float(out) if np.ndim(s) == 0 else out


def h_eval(nl: SmoothedNonlinearity, s: float, order: int = 0) -> float:
    if order == 0:
        return nl.h(s)
    if order == 1:
        return nl.dh(s)
    raise ValueError(f"order must be 0 or 1, got {order}")


def smoothed_residual(nl: SmoothedNonlinearity, v: ScalarField2D) -> ScalarField2D:
    d11 = second_difference(v, "e1").values
    d22 = second_difference(v, "e2").values
    out = np.full_like(d11, np.nan)
    out[1:-1, 1:-1] = d11[1:-1, 1:-1] + nl.h(d22[1:-1, 1:-1])
    return ScalarField2D(v.grid, out)
