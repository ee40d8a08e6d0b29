"""Free boundary extraction from ``u`` and one-sided flux measurements across it."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage.measure import find_contours

from .grid import ScalarField2D, gradient, interpolate
from .twophase import FluxLaw

PLUS, MINUS = "plus", "minus"


class FreeBoundaryError(ValueError):
    pass


@dataclass(frozen=True)
class FreeBoundary:
    """Zero contour of ``u`` as polylines in physical coordinates.

    ``normals[k][i]`` is the unit normal at ``segments[k][i]`` pointing into
    ``{u > 0}``. ``one_phase`` is set when ``u`` does not change sign.
    """

    segments: list[np.ndarray]
    normals: list[np.ndarray]
    one_phase: bool = False
    degenerate_cells: int = 0
    h: float = 0.0

    @property
    def empty(self) -> bool:
        return not self.segments

    def vertices(self) -> np.ndarray:
        if self.empty:
            return np.zeros((0, 2))
        return np.concatenate(self.segments)

    def all_normals(self) -> np.ndarray:
        if self.empty:
            return np.zeros((0, 2))
        return np.concatenate(self.normals)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["segment_id", "x", "y", "nu_x", "nu_y"])
            for k, (seg, nrm) in enumerate(zip(self.segments, self.normals)):
                for (x, y), (nx, ny) in zip(seg, nrm):
                    w.writerow([k, f"{x:.17g}", f"{y:.17g}", f"{nx:.17g}", f"{ny:.17g}"])


def _flat_cells(u: np.ndarray, band_tol: float) -> np.ndarray:
    small = np.abs(u) < band_tol
    return small[:-1, :-1] & small[1:, :-1] & small[:-1, 1:] & small[1:, 1:]


def _refine_crossing(vals: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Move edge crossings to the mean of the two one-sided linear extrapolations.

    Plain linear interpolation along a cell edge is off by O(h) when ``u``
    has a kink at its zero, as a two-phase field does. Extrapolating each
    phase from its own two nodes is exact for piecewise-linear data. Next to
    the grid edge the one available extrapolation is used; the linear
    crossing is kept wherever the extrapolations are inconsistent.
    """
    out = c.copy()
    n0, n1 = vals.shape
    for idx, (r, s) in enumerate(c):
        if abs(r - round(r)) < 1e-12:
            line, t, lim = vals[int(round(r)), :], s, n1
        elif abs(s - round(s)) < 1e-12:
            line, t, lim = vals[:, int(round(s))], r, n0
        else:
            continue
        k = int(np.floor(t))
        if k < 0 or k + 1 >= lim:
            continue
        u0, u1 = line[k], line[k + 1]
        sc = u1 - u0
        zs = []
        if k >= 1 and (line[k] - line[k - 1]) * sc > 0:
            zs.append(k - u0 / (u0 - line[k - 1]))
        if k + 2 < lim and (line[k + 2] - u1) * sc > 0:
            zs.append(k + 1 - u1 / (line[k + 2] - u1))
        zs = [z for z in zs if k <= z <= k + 1]
        if not zs or (len(zs) == 1 and 1 <= k and k + 2 < lim):
            continue
        z = float(np.mean(zs))
        if abs(r - round(r)) < 1e-12:
            out[idx, 1] = z
        else:
            out[idx, 0] = z
    return out


def extract_gamma(
    u: ScalarField2D, band_tol: float = 0.0, subcell: str = "extrapolate"
) -> FreeBoundary:
    """Marching-squares zero contour of ``u``.

    ``subcell="linear"`` keeps the plain edge interpolation;
    ``"extrapolate"`` refines each crossing (see ``_refine_crossing``).

    Boundary-ring NaNs are filled by the adjacent interior value so the
    contour covers the whole interior. Cells whose four corners satisfy
    ``|u| < band_tol`` are counted and left out of the contour. A field
    without values beyond ``band_tol`` of both signs is one-phase.
    """
    g = u.grid
    vals = np.array(u.values, dtype=float)
    if np.isnan(vals).any():
        vals[0, :], vals[-1, :] = vals[1, :], vals[-2, :]
        vals[:, 0], vals[:, -1] = vals[:, 1], vals[:, -2]
    if np.isnan(vals).any():
        raise FreeBoundaryError("field has undefined interior values")
    if not ((vals > band_tol).any() and (vals < -band_tol).any()):
        return FreeBoundary([], [], one_phase=True, h=g.h)
    flat = _flat_cells(vals, band_tol) if band_tol > 0 else np.zeros((g.n - 1, g.n - 1), bool)
    mask = None
    if flat.any():
        # a node is masked out only if every cell touching it is flat
        node_ok = np.ones_like(vals, dtype=bool)
        touch = np.zeros_like(vals, dtype=int)
        for di in (0, 1):
            for dj in (0, 1):
                touch[di : g.n - 1 + di, dj : g.n - 1 + dj] += ~flat
        node_ok = touch > 0
        mask = node_ok
    contours = find_contours(vals, 0.0, mask=mask)
    segments = []
    normals = []
    if subcell not in ("linear", "extrapolate"):
        raise ValueError(f"unknown subcell mode {subcell!r}")
    for c in contours:
        if np.allclose(c[0], c[-1]) and len(c) > 2:
            c = c[:-1]
        if subcell == "extrapolate":
            c = _refine_crossing(vals, c)
        pts = np.empty_like(c)
        pts[:, 0] = g.center[0] + (c[:, 0] - g.mid) * g.h
        pts[:, 1] = g.center[1] + (c[:, 1] - g.mid) * g.h
        if flat.any():
            ci = np.clip(np.floor(c).astype(int), 0, g.n - 2)
            keep = ~flat[ci[:, 0], ci[:, 1]]
            pts = pts[keep]
        if len(pts) < 2:
            continue
        segments.append(pts)
    fb = FreeBoundary(segments, [], degenerate_cells=int(flat.sum()), h=g.h)
    for k in range(len(segments)):
        normals.append(
            np.array([normal_estimate(fb, u, (k, i), band_tol) for i in range(len(segments[k]))])
        )
    return FreeBoundary(segments, normals, degenerate_cells=int(flat.sum()), h=g.h)


def _gradient_at(u: ScalarField2D, x: np.ndarray) -> np.ndarray:
    g1, g2 = gradient(u)
    # the ring is NaN; copy neighbors so interpolation near the edge stays defined
    for arr in (g1, g2):
        arr[0, :], arr[-1, :] = arr[1, :], arr[-2, :]
        arr[:, 0], arr[:, -1] = arr[:, 1], arr[:, -2]
    grid = u.grid
    return np.array(
        [
            interpolate(ScalarField2D(grid, np.nan_to_num(g1)), x),
            interpolate(ScalarField2D(grid, np.nan_to_num(g2)), x),
        ]
    )


def normal_estimate(
    fb: FreeBoundary,
    u: ScalarField2D,
    vertex: tuple[int, int],
    band_tol: float = 0.0,
    method: str = "polyline",
    reach: float = 4.0,
) -> np.ndarray:
    """Unit normal toward ``{u > 0}`` at ``fb.segments[k][i]``.

    ``method="polyline"`` fits a line through the polyline vertices within
    ``reach * h`` and uses the interpolated gradient of ``u`` only for the
    orientation. ``method="gradient"`` uses the interpolated centered gradient
    itself; it is biased at vertices whose stencils straddle an oblique
    interface. Both fall back to the neighboring edges when the gradient is
    shorter than ``band_tol``.
    """
    k, i = vertex
    try:
        seg = fb.segments[k]
        x = seg[i]
    except IndexError as exc:
        raise FreeBoundaryError(f"dangling vertex {vertex}") from exc
    grad = _gradient_at(u, x)
    norm = float(np.hypot(*grad))
    if method == "gradient" and norm > max(band_tol, 1e-300):
        return grad / norm
    if method not in ("gradient", "polyline"):
        raise ValueError(f"unknown normal method {method!r}")
    near = seg[np.hypot(*(seg - x).T) <= reach * fb.h]
    if len(near) < 2:
        if len(seg) < 2:
            raise FreeBoundaryError(f"dangling vertex {vertex}")
        near = seg[max(i - 1, 0) : i + 2]
    centered = near - near.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    t = vt[0]
    nrm = np.array([-t[1], t[0]])
    if norm > max(band_tol, 1e-300):
        if nrm @ grad < 0:
            nrm = -nrm
    else:
        probe = x + 2 * fb.h * nrm
        if u.grid.contains(probe) and interpolate(u, probe) < 0:
            nrm = -nrm
    return nrm / np.hypot(*nrm)


def one_sided_derivative(
    u: ScalarField2D,
    point: np.ndarray,
    nu: np.ndarray,
    side: str,
    t_min: float = 2.0,
    t_max: float = 8.0,
) -> float:
    """Inward slope of ``|u|`` along ``+nu`` (plus) or ``-nu`` (minus).

    Samples ``u(point +- t nu)`` for ``t = t_min h, ..., t_max h`` by bilinear
    interpolation, keeps samples of the side's sign (``u = 0`` counts for
    both) and returns the least-squares slope. Needs at least four samples.
    """
    h = u.grid.h
    ts = np.arange(t_min, t_max + 0.5) * h
    sgn = 1.0 if side == PLUS else -1.0
    if side not in (PLUS, MINUS):
        raise ValueError(f"side must be 'plus' or 'minus', got {side!r}")
    pts = np.asarray(point, float)[None, :] + sgn * ts[:, None] * np.asarray(nu, float)[None, :]
    inside = u.grid.contains(pts) & (np.abs(pts - u.grid.center).max(axis=1) <= u.grid.half_width - h)
    pts, ts = pts[inside], ts[inside]
    if len(ts) < 4:
        raise FreeBoundaryError("fewer than 4 samples inside the grid")
    vals = interpolate(u, pts)
    ok = sgn * vals >= 0
    if ok.sum() < 4:
        raise FreeBoundaryError(f"fewer than 4 samples with the {side} sign")
    slope = np.polyfit(ts[ok], sgn * vals[ok], 1)[0]
    return float(max(slope, 0.0))


@dataclass(frozen=True)
class JumpMeasurement:
    point: np.ndarray
    nu: np.ndarray
    u_plus: float
    u_minus: float
    predicted_plus: float
    relative_error: float
    constrained: bool = True

    @property
    def ratio(self) -> float:
        return self.u_plus / self.u_minus if self.u_minus > 0 else float("nan")


@dataclass(frozen=True)
class JumpSurvey:
    measurements: list[JumpMeasurement]
    skipped: int
    unconstrained: int = 0

    @property
    def constrained(self) -> list[JumpMeasurement]:
        return [jm for jm in self.measurements if jm.constrained]

    @property
    def median_relative_error(self) -> float:
        errs = [jm.relative_error for jm in self.constrained]
        return float(np.median(errs)) if errs else float("nan")

    @property
    def p90_relative_error(self) -> float:
        errs = [jm.relative_error for jm in self.constrained]
        return float(np.percentile(errs, 90)) if errs else float("nan")

    @property
    def median_ratio(self) -> float:
        rs = [jm.ratio for jm in self.constrained]
        return float(np.median(rs)) if rs else float("nan")

    def summary(self) -> dict[str, float]:
        return {
            "vertices_measured": len(self.constrained),
            "vertices_unconstrained": self.unconstrained,
            "vertices_skipped": self.skipped,
            "median_relative_error": self.median_relative_error,
            "p90_relative_error": self.p90_relative_error,
            "median_ratio": self.median_ratio,
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["x", "y", "nu_x", "nu_y", "u_plus", "u_minus", "predicted_plus",
                 "relative_error", "constrained"]
            )
            for jm in self.measurements:
                w.writerow(
                    [f"{v:.17g}" for v in (*jm.point, *jm.nu, jm.u_plus, jm.u_minus,
                                           jm.predicted_plus, jm.relative_error)]
                    + [int(jm.constrained)]
                )


def jump_condition_survey(
    u: ScalarField2D,
    fb: FreeBoundary,
    law: FluxLaw,
    floor: float = 1e-12,
    noise_floor: float = 0.0,
    window: float | None = None,
) -> JumpSurvey:
    """Measure ``u_nu^+`` against ``G(u_nu^-, nu)`` at every admissible vertex.

    Vertices whose rays leave the grid, or hit the wrong sign too early, are
    skipped. Vertices with ``u_minus <= noise_floor`` are recorded as
    unconstrained. ``window`` restricts the survey to vertices within that
    sup-distance of the grid center.
    """
    if fb.empty:
        raise FreeBoundaryError("free boundary is empty")
    out: list[JumpMeasurement] = []
    skipped = 0
    unconstrained = 0
    c = np.asarray(u.grid.center)
    for seg, nrm in zip(fb.segments, fb.normals):
        for x, nu in zip(seg, nrm):
            if window is not None and np.abs(x - c).max() > window:
                continue
            try:
                up = one_sided_derivative(u, x, nu, PLUS)
                um = one_sided_derivative(u, x, nu, MINUS)
            except FreeBoundaryError:
                skipped += 1
                continue
            pred = law.G(um, nu)
            rel = abs(up - pred) / max(up, pred, floor)
            constrained = um > noise_floor
            unconstrained += not constrained
            out.append(JumpMeasurement(x, nu, up, um, pred, rel, constrained))
    if not out:
        raise FreeBoundaryError("every vertex was skipped")
    return JumpSurvey(out, skipped, unconstrained)
