"""Uniform square grids, sampled fields and finite-difference primitives.

Index convention: ``values[i, j]`` lives at ``center + ((i - c) h, (j - c) h)``
with ``c = (n - 1) / 2``, i.e. the first axis is x1 and the second is x2
(``meshgrid(..., indexing="ij")``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

MIN_NODES = 17

DIRECTIONS = ("e1", "e2", "diag+", "diag-")
_OFFSETS = {"e1": (1, 0), "e2": (0, 1), "diag+": (1, 1), "diag-": (1, -1)}


class GridError(ValueError):
    """Invalid grid construction or out-of-domain access."""


@dataclass(frozen=True)
class Grid2D:
    center: tuple[float, float]
    half_width: float
    n: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n % 2 == 0:
            raise GridError(f"n must be an odd integer, got {self.n}")
        if self.n < MIN_NODES:
            raise GridError(f"n must be >= {MIN_NODES}, got {self.n}")
        if not self.half_width > 0:
            raise GridError(f"half_width must be positive, got {self.half_width}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.n - 1)

    @property
    def mid(self) -> int:
        return (self.n - 1) // 2

    @property
    def x1(self) -> np.ndarray:
        return self.center[0] + (np.arange(self.n) - self.mid) * self.h

    @property
    def x2(self) -> np.ndarray:
        return self.center[1] + (np.arange(self.n) - self.mid) * self.h

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    def node(self, i: int, j: int) -> np.ndarray:
        return np.array(
            [
                self.center[0] + (i - self.mid) * self.h,
                self.center[1] + (j - self.mid) * self.h,
            ]
        )

    def nearest_node(self, x: Sequence[float]) -> tuple[int, int]:
        i = int(round((x[0] - self.center[0]) / self.h)) + self.mid
        j = int(round((x[1] - self.center[1]) / self.h)) + self.mid
        return i, j

    def contains(self, x: np.ndarray, slack: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lim = self.half_width * (1.0 + slack)
        return (np.abs(x[..., 0] - self.center[0]) <= lim) & (
            np.abs(x[..., 1] - self.center[1]) <= lim
        )

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros((self.n, self.n), dtype=bool)
        mask[1:-1, 1:-1] = True
        return mask

    def ball_mask(self, x0: Sequence[float], radius: float) -> np.ndarray:
        X, Y = self.mesh()
        return (X - x0[0]) ** 2 + (Y - x0[1]) ** 2 <= radius**2 * (1 + 1e-12)


def make_grid(center: Sequence[float], half_width: float, n: int) -> Grid2D:
    return Grid2D((center[0], center[1]), half_width, n)


@dataclass(frozen=True)
class ScalarField2D:
    """Node values on a :class:`Grid2D`.

    Fields produced by difference operators carry ``NaN`` on the boundary
    ring, which marks those nodes as undefined.
    """

    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.n, self.grid.n):
            raise GridError(f"values shape {vals.shape} does not match grid n={self.grid.n}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def interior(self) -> np.ndarray:
        return self.values[1:-1, 1:-1]

    def __add__(self, other: ScalarField2D | float) -> ScalarField2D:
        if isinstance(other, ScalarField2D):
            _same_grid(self, other)
            return ScalarField2D(self.grid, self.values + other.values)
        return ScalarField2D(self.grid, self.values + other)

    def __sub__(self, other: ScalarField2D | float) -> ScalarField2D:
        if isinstance(other, ScalarField2D):
            _same_grid(self, other)
            return ScalarField2D(self.grid, self.values - other.values)
        return ScalarField2D(self.grid, self.values - other)

    def __mul__(self, t: float) -> ScalarField2D:
        return ScalarField2D(self.grid, self.values * t)

    __rmul__ = __mul__

    def __neg__(self) -> ScalarField2D:
        return ScalarField2D(self.grid, -self.values)

    def minimum(self, other: ScalarField2D) -> ScalarField2D:
        _same_grid(self, other)
        return ScalarField2D(self.grid, np.minimum(self.values, other.values))

    def max_abs(self, mask: np.ndarray | None = None) -> float:
        vals = self.values if mask is None else self.values[mask]
        return float(np.nanmax(np.abs(vals))) if vals.size else 0.0


def _same_grid(a: ScalarField2D, b: ScalarField2D) -> None:
    if a.grid != b.grid:
        raise GridError("fields live on different grids")


def sample(f: Callable[[np.ndarray, np.ndarray], np.ndarray], g: Grid2D) -> ScalarField2D:
    """Evaluate ``f(x1, x2)`` (vectorized over arrays) at every node."""
    X, Y = g.mesh()
    vals = np.broadcast_to(np.asarray(f(X, Y), dtype=float), X.shape)
    if not np.all(np.isfinite(vals)):
        raise GridError("sampled function produced non-finite values")
    return ScalarField2D(g, vals)


def second_difference(f: ScalarField2D, direction: str) -> ScalarField2D:
    """Centered second difference along a lattice direction.

    Diagonal directions are divided by the squared diagonal step ``2 h**2``.
    The boundary ring is ``NaN``.
    """
    if direction not in _OFFSETS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    g = f.grid
    di, dj = _OFFSETS[direction]
    step2 = g.h**2 * (di * di + dj * dj)
    v = f.values
    out = np.full_like(v, np.nan)
    n = g.n
    c = v[1:-1, 1:-1]
    plus = v[1 + di : n - 1 + di, 1 + dj : n - 1 + dj]
    minus = v[1 - di : n - 1 - di, 1 - dj : n - 1 - dj]
    out[1:-1, 1:-1] = (plus + minus - 2.0 * c) / step2
    return ScalarField2D(g, out)


def mixed_difference(f: ScalarField2D) -> ScalarField2D:
    """Centered approximation of the mixed derivative from the two diagonals."""
    dp = second_difference(f, "diag+").values
    dm = second_difference(f, "diag-").values
    return ScalarField2D(f.grid, 0.5 * (dp - dm))


def hessian_components(f: ScalarField2D) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(D11, D12, D22) arrays with NaN on the boundary ring."""
    return (
        second_difference(f, "e1").values,
        mixed_difference(f).values,
        second_difference(f, "e2").values,
    )


def gradient(f: ScalarField2D) -> tuple[np.ndarray, np.ndarray]:
    """Centered first differences; NaN on the boundary ring."""
    v = f.values
    h = f.grid.h
    g1 = np.full_like(v, np.nan)
    g2 = np.full_like(v, np.nan)
    g1[1:-1, 1:-1] = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * h)
    g2[1:-1, 1:-1] = (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * h)
    return g1, g2


def interpolate(f: ScalarField2D, x: Sequence[float] | np.ndarray) -> float | np.ndarray:
    """Bilinear interpolation at one point or an array of points (shape ``(..., 2)``)."""
    g = f.grid
    pts = np.asarray(x, dtype=float)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if not np.all(g.contains(pts)):
        raise GridError("interpolation point outside the grid square")
    s = (pts[..., 0] - g.center[0]) / g.h + g.mid
    t = (pts[..., 1] - g.center[1]) / g.h + g.mid
    i = np.clip(np.floor(s).astype(int), 0, g.n - 2)
    j = np.clip(np.floor(t).astype(int), 0, g.n - 2)
    fs = np.clip(s - i, 0.0, 1.0)
    ft = np.clip(t - j, 0.0, 1.0)
    v = f.values
    out = (
        v[i, j] * (1 - fs) * (1 - ft)
        + v[i + 1, j] * fs * (1 - ft)
        + v[i, j + 1] * (1 - fs) * ft
        + v[i + 1, j + 1] * fs * ft
    )
    return float(out[0]) if scalar else out


def write_field_csv(f: ScalarField2D, path: str | Path) -> None:
    """Row-major ``x,y,value`` snapshot with 17 significant digits."""
    X, Y = f.grid.mesh()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for xv, yv, val in zip(X.ravel(), Y.ravel(), f.values.ravel()):
            w.writerow([f"{xv:.17g}", f"{yv:.17g}", f"{val:.17g}"])


def read_field_csv(path: str | Path, grid: Grid2D) -> ScalarField2D:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    if data.shape[0] != grid.n * grid.n:
        raise GridError("snapshot size does not match grid")
    return ScalarField2D(grid, data[:, 2].reshape(grid.n, grid.n))
