"""Estimators for the regularity statements: seminorms, blow-ups, expansions, decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .grid import ScalarField2D, gradient, hessian_components
from .operators import BellmanProblem
from .twophase import FluxLaw, TwoPlaneSolution, two_plane_eval

RESOLUTION_FLOOR = 8  # smallest admissible radius in units of h


class RegularityError(ValueError):
    pass


def _ball(v: ScalarField2D, x0: Sequence[float], radius: float) -> np.ndarray:
    return v.grid.ball_mask(x0, radius)


def _check_radius(v: ScalarField2D, radius: float, x0: Sequence[float]) -> None:
    g = v.grid
    reach = max(abs(x0[0] - g.center[0]), abs(x0[1] - g.center[1])) + radius
    if reach > g.half_width - 2 * g.h:
        raise RegularityError(f"ball of radius {radius} around {tuple(x0)} leaves the grid")


# --- seminorms ------------------------------------------------------------


@dataclass(frozen=True)
class SeminormReport:
    lipschitz_u: float
    c21_v: float
    grid_h: float
    radius: float


def lipschitz_seminorm(
    u: ScalarField2D, radius: float, center: Sequence[float] | None = None
) -> float:
    """Max of the centered-difference gradient magnitude over the centered ball."""
    g = u.grid
    center = g.center if center is None else center
    if radius > g.half_width / 2 * (1 + 1e-12):
        raise RegularityError("radius must not exceed half the grid half-width")
    g1, g2 = gradient(u)
    mag = np.hypot(g1, g2)
    vals = mag[_ball(u, center, radius)]
    vals = vals[np.isfinite(vals)]
    return float(vals.max()) if vals.size else 0.0


def c21_seminorm(
    v: ScalarField2D,
    radius: float,
    center: Sequence[float] | None = None,
    min_separation: float = 4.0,
    full_pairs_max_n: int = 129,
    target_nodes: int = 1600,
) -> float:
    """Max over node pairs of ``|D^2_h v(x) - D^2_h v(y)|_inf / |x - y|``.

    Pairs closer than ``min_separation * h`` are ignored. Above
    ``full_pairs_max_n`` nodes per side a fixed-stride subset of about
    ``target_nodes`` ball nodes is used (more than 10**5 pairs).
    """
    g = v.grid
    center = g.center if center is None else center
    if radius > g.half_width / 2 * (1 + 1e-12):
        raise RegularityError("radius must not exceed half the grid half-width")
    d11, d12, d22 = hessian_components(v)
    mask = _ball(v, center, radius) & np.isfinite(d11)
    X, Y = g.mesh()
    pts = np.stack([X[mask], Y[mask]], -1)
    hess = np.stack([d11[mask], d12[mask], d22[mask]], -1)
    if g.n > full_pairs_max_n and len(pts) > target_nodes:
        keep = np.unique(np.linspace(0, len(pts) - 1, target_nodes).round().astype(int))
        pts, hess = pts[keep], hess[keep]
    sep2 = (min_separation * g.h) ** 2 * (1 - 1e-12)
    best = 0.0
    for k in range(len(pts) - 1):
        dx = pts[k + 1 :] - pts[k]
        dist2 = np.einsum("ij,ij->i", dx, dx)
        ok = dist2 >= sep2
        if not ok.any():
            continue
        dh = np.abs(hess[k + 1 :][ok] - hess[k]).max(axis=1)
        q = dh / np.sqrt(dist2[ok])
        best = max(best, float(q.max()))
    return best


# --- blow-ups ---------------------------------------------------------------


@dataclass(frozen=True)
class BlowupFit:
    radius: float
    nu: np.ndarray
    a: float
    b: float
    residual: float  # rms misfit relative to rms of the rescaled field
    residual_abs: float
    negative_max: float  # max of the negative part, relative to max |rescaled|
    nodes: int


@dataclass(frozen=True)
class BlowupClassification:
    x0: np.ndarray
    radii: list[float]
    fits: list[BlowupFit]
    verdict: str
    two_plane: TwoPlaneSolution | None = None

    @property
    def residuals(self) -> list[float]:
        return [f.residual for f in self.fits]

    def summary(self) -> dict:
        out = {
            "x0": list(map(float, self.x0)),
            "verdict": self.verdict,
            "radii": [float(r) for r in self.radii],
            "residuals": [float(r) for r in self.residuals],
        }
        if self.two_plane is not None:
            out.update(
                a=self.two_plane.a, b=self.two_plane.b, nu=list(map(float, self.two_plane.nu))
            )
        return out


def _two_plane_ls(y: np.ndarray, w: np.ndarray, theta: np.ndarray):
    """Nonnegative least-squares slopes for each angle; returns (a, b, sse)."""
    nu = np.stack([np.cos(theta), np.sin(theta)], -1)
    s = nu @ y.T  # (angles, points)
    sp_ = np.maximum(s, 0.0)
    sm = np.maximum(-s, 0.0)
    dp = np.einsum("ij,ij->i", sp_, sp_)
    dm = np.einsum("ij,ij->i", sm, sm)
    a = np.where(dp > 0, sp_ @ w / np.where(dp > 0, dp, 1.0), 0.0)
    b = np.where(dm > 0, -(sm @ w) / np.where(dm > 0, dm, 1.0), 0.0)
    a = np.maximum(a, 0.0)
    b = np.maximum(b, 0.0)
    fit = a[:, None] * sp_ - b[:, None] * sm
    sse = np.sum((w[None, :] - fit) ** 2, axis=1)
    return a, b, sse


def _rescaled(u: ScalarField2D, x0: Sequence[float], r: float):
    mask = _ball(u, x0, r) & np.isfinite(u.values)
    X, Y = u.grid.mesh()
    y = np.stack([(X[mask] - x0[0]) / r, (Y[mask] - x0[1]) / r], -1)
    return y, u.values[mask] / r


def fit_two_plane(
    u: ScalarField2D, x0: Sequence[float], r: float, n_angles: int = 720
) -> BlowupFit:
    """Best ``a (y.nu)+ - b (y.nu)-`` fit to ``u(x0 + r y) / r`` on the unit ball."""
    y, w = _rescaled(u, x0, r)
    th = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    _, _, sse = _two_plane_ls(y, w, th)
    k = int(np.argmin(sse))
    step = 2 * np.pi / n_angles
    res = minimize_scalar(
        lambda t: float(_two_plane_ls(y, w, np.array([t]))[2][0]),
        bracket=(th[k] - step, th[k], th[k] + step),
        method="golden",
        tol=1e-10,
    )
    t = res.x if res.fun <= sse[k] else th[k]
    a, b, s2 = _two_plane_ls(y, w, np.array([t]))
    rms_w = float(np.sqrt(np.mean(w**2)))
    rms = float(np.sqrt(s2[0] / len(w)))
    wmax = float(np.abs(w).max())
    return BlowupFit(
        radius=r,
        nu=np.array([np.cos(t), np.sin(t)]),
        a=float(a[0]),
        b=float(b[0]),
        residual=rms / rms_w if rms_w > 0 else float("inf"),
        residual_abs=rms,
        negative_max=float(np.maximum(-w, 0).max()) / wmax if wmax > 0 else 0.0,
        nodes=int(len(w)),
    )


def recenter_on_gamma(
    u: ScalarField2D, x0: Sequence[float], r: float, reach: float = 1.5
) -> np.ndarray:
    """Move ``x0`` along the fitted normal by at most ``reach * h`` to where the
    two-plane misfit on ``B_r`` is smallest.

    Zero-contour vertices of a kinked field sit O(h) off the true interface
    when it is oblique to the grid; left alone, that offset dominates the
    blow-up misfit at radii of a few ``h``.
    """
    x0 = np.asarray(x0, float)
    first = fit_two_plane(u, x0, r)
    if first.residual < 1e-12:
        return x0
    nu = first.nu
    th = np.array([np.arctan2(nu[1], nu[0])])
    h = u.grid.h

    def misfit(t: float) -> float:
        y, w = _rescaled(u, x0 + t * nu, r)
        return float(_two_plane_ls(y, w, th)[2][0]) / len(w)

    res = minimize_scalar(
        misfit, bounds=(-reach * h, reach * h), method="bounded", options={"xatol": 1e-6 * h}
    )
    return x0 + res.x * nu if res.fun < misfit(0.0) else x0


def _near_gamma(u: ScalarField2D, x0: Sequence[float]) -> bool:
    g = u.grid
    near = _ball(u, x0, 1.5 * g.h) & np.isfinite(u.values)
    vals = u.values[near]
    return bool(vals.size and vals.min() <= 0.0 <= vals.max())


def blowup_classify(
    u: ScalarField2D,
    x0: Sequence[float],
    law: FluxLaw,
    radii: Sequence[float],
    fit_tol: float = 0.05,
    b_floor: float = 0.02,
    flux_tol: float = 0.1,
    recenter: bool = True,
) -> BlowupClassification:
    """Fit rescalings ``u(x0 + r y)/r`` to the two-plane family for each radius.

    The verdict uses the smallest radius: ``two_plane`` when the relative
    misfit is at most ``fit_tol``, ``b >= b_floor * max(a, b)`` and
    ``a`` matches ``G(b, nu)`` within ``flux_tol``; ``one_phase`` when ``b``
    is below the floor and the negative part is at most ``fit_tol`` of the
    rescaled maximum; ``unresolved`` otherwise. With ``recenter`` the center
    is first moved onto the fitted interface (see ``recenter_on_gamma``) and
    the result's ``x0`` is the moved center.
    """
    g = u.grid
    x0 = np.asarray(x0, dtype=float)
    if not _near_gamma(u, x0):
        raise RegularityError(f"point {tuple(x0)} is not within h of the free boundary")
    radii = sorted((float(r) for r in radii), reverse=True)
    if not radii:
        raise RegularityError("no radii given")
    if radii[-1] < RESOLUTION_FLOOR * g.h * (1 - 1e-9):
        raise RegularityError(f"radius {radii[-1]} below the {RESOLUTION_FLOOR}h floor")
    for r in radii:
        _check_radius(u, r, x0)
    if recenter:
        x0 = recenter_on_gamma(u, x0, radii[-1])
    fits = [fit_two_plane(u, x0, r) for r in radii]
    last = fits[-1]
    scale = max(last.a, last.b)
    verdict = "unresolved"
    tp = None
    if scale > 0:
        if last.b >= b_floor * scale:
            pred = law.G(last.b, last.nu)
            flux_ok = abs(last.a - pred) <= flux_tol * max(last.a, pred)
            if last.residual <= fit_tol and flux_ok:
                verdict = "two_plane"
                tp = TwoPlaneSolution(x0, last.nu, last.a, last.b)
        elif last.negative_max <= fit_tol:
            verdict = "one_phase"
    return BlowupClassification(x0, radii, fits, verdict, tp)


# --- cubic expansion --------------------------------------------------------

CUBIC_MONOMIALS = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3))


@dataclass(frozen=True)
class ExpansionFit:
    x0: np.ndarray
    nu: np.ndarray
    Q: np.ndarray  # coefficients of CUBIC_MONOMIALS in (x - x0)
    gamma: float
    radii: list[float]
    remainder_norms: list[float]
    alpha_est: float
    operator_values: dict[str, float] = field(default_factory=dict)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        d = np.asarray(x, float) - self.x0
        out = sum(c * d[..., 0] ** p * d[..., 1] ** q for c, (p, q) in zip(self.Q, CUBIC_MONOMIALS))
        s = d @ self.nu
        return out + self.gamma * np.maximum(s, 0.0) ** 3

    def summary(self) -> dict:
        return {
            "x0": list(map(float, self.x0)),
            "nu": list(map(float, self.nu)),
            "Q": list(map(float, self.Q)),
            "gamma": self.gamma,
            "radii": self.radii,
            "remainder_norms": self.remainder_norms,
            "alpha_est": self.alpha_est,
            "operator_values": self.operator_values,
        }


def _expansion_design(d: np.ndarray, nu: np.ndarray, scale: float) -> np.ndarray:
    z = d / scale
    cols = [z[:, 0] ** p * z[:, 1] ** q for p, q in CUBIC_MONOMIALS]
    cols.append(np.maximum(z @ nu, 0.0) ** 3)
    return np.stack(cols, -1)


def _expansion_lstsq(d: np.ndarray, vals: np.ndarray, nu: np.ndarray, scale: float):
    A = _expansion_design(d, nu, scale)
    coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
    res = vals - A @ coef
    return coef, float(res @ res)


def fit_cubic_expansion(
    v: ScalarField2D,
    x0: Sequence[float],
    nu: Sequence[float],
    radii: Sequence[float],
    problem: BellmanProblem | None = None,
    angle_window: float = np.deg2rad(5.0),
) -> ExpansionFit:
    """Least-squares ``Q + gamma ((x - x0).nu)+^3`` on the smallest ball.

    ``nu`` is refined by a bounded scalar search within ``angle_window``.
    Remainders use the one fitted expansion on every ball; ``alpha_est`` is
    the log-log slope of the remainders minus 3, clipped to [0, 1].
    """
    g = v.grid
    x0 = np.asarray(x0, float)
    nu = np.asarray(nu, float) / np.hypot(*nu)
    radii = sorted((float(r) for r in radii), reverse=True)
    for r in radii:
        _check_radius(v, r, x0)
    rmin = radii[-1]
    mask = _ball(v, x0, rmin)
    if mask.sum() < 40:
        raise RegularityError(f"only {mask.sum()} nodes in the smallest ball (need 40)")
    X, Y = g.mesh()
    d = np.stack([X[mask] - x0[0], Y[mask] - x0[1]], -1)
    vals = v.values[mask]
    th0 = float(np.arctan2(nu[1], nu[0]))

    def sse(t: float) -> float:
        return _expansion_lstsq(d, vals, np.array([np.cos(t), np.sin(t)]), rmin)[1]

    res = minimize_scalar(
        sse, bounds=(th0 - angle_window, th0 + angle_window), method="bounded",
        options={"xatol": 1e-9},
    )
    t = res.x if res.fun <= sse(th0) else th0
    nu_f = np.array([np.cos(t), np.sin(t)])
    coef, _ = _expansion_lstsq(d, vals, nu_f, rmin)
    powers = np.array([p + q for p, q in CUBIC_MONOMIALS] + [3])
    coef = coef / rmin**powers
    fit = ExpansionFit(x0, nu_f, coef[:10], float(coef[10]), radii, [], 0.0)
    norms = []
    for r in radii:
        m = _ball(v, x0, r)
        pts = np.stack([X[m], Y[m]], -1)
        norms.append(float(np.max(np.abs(v.values[m] - fit.evaluate(pts)))))
    pos = np.array(norms) > 0
    if pos.sum() >= 2:
        slope = np.polyfit(np.log(np.array(radii)[pos]), np.log(np.array(norms)[pos]), 1)[0]
        alpha = float(np.clip(slope - 3.0, 0.0, 1.0))
    else:
        alpha = 0.0
    opvals = {}
    if problem is not None:
        hq = np.array([[2 * coef[3], coef[4]], [coef[4], 2 * coef[5]]])
        opvals = {
            "L1Q": float(np.sum(problem.op1.matrix * hq)),
            "L2Q": float(np.sum(problem.op2.matrix * hq)),
        }
    return ExpansionFit(x0, nu_f, coef[:10], float(coef[10]), radii, norms, alpha, opvals)


# --- dyadic decay -----------------------------------------------------------


@dataclass(frozen=True)
class DecayCheck:
    radii: list[float]
    sup_diff: list[float]
    ratios: list[float]
    alpha_probe: float
    bounded: bool
    growth_slope: float

    def rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.radii, self.sup_diff, self.ratios))


def dyadic_decay_check(
    u: ScalarField2D,
    x0: Sequence[float],
    p: TwoPlaneSolution | None,
    radii: Sequence[float],
    alpha_probe: float = 0.5,
    noise_floor: float = 0.0,
    slope_tol: float = 0.1,
) -> DecayCheck:
    """``sup_{B_r(x0)} |u - p|`` and its ratio to ``r^(1 + alpha_probe)``.

    ``p = None`` compares with zero. Differences up to ``noise_floor`` count
    as zero. The ratios are declared unbounded when they grow like a power of
    ``1/r``: the log-log slope of the positive ratios against ``r`` is below
    ``-slope_tol``.
    """
    g = u.grid
    x0 = np.asarray(x0, float)
    radii = sorted((float(r) for r in radii), reverse=True)
    if radii[-1] < RESOLUTION_FLOOR * g.h * (1 - 1e-9):
        raise RegularityError(f"radius {radii[-1]} below the {RESOLUTION_FLOOR}h floor")
    X, Y = g.mesh()
    pts = np.stack([X, Y], -1)
    pv = np.zeros_like(u.values) if p is None else two_plane_eval(p, pts)
    diff = np.abs(u.values - pv)
    sups, ratios = [], []
    for r in radii:
        m = _ball(u, x0, r) & np.isfinite(diff)
        s = float(diff[m].max())
        sups.append(s)
        ratios.append(max(s - noise_floor, 0.0) / r ** (1 + alpha_probe))
    rr = np.array(ratios)
    pos = rr > 0
    if pos.sum() >= 2:
        slope = float(np.polyfit(np.log(np.array(radii)[pos]), np.log(rr[pos]), 1)[0])
    else:
        slope = 0.0
    return DecayCheck(radii, sups, ratios, alpha_probe, slope >= -slope_tol, slope)


def dyadic_radii(r_max: float, h: float, count: int | None = None) -> list[float]:
    """``r_max, r_max/2, ...`` down to the ``8h`` floor (or ``count`` terms)."""
    out = []
    r = r_max
    while r >= RESOLUTION_FLOOR * h * (1 - 1e-9) and (count is None or len(out) < count):
        out.append(r)
        r /= 2
    return out


# --- linearized transmission condition -------------------------------------


def transmission_residual(
    v_plus: ScalarField2D,
    v_minus: ScalarField2D,
    interface_normal: Sequence[float],
    law: FluxLaw,
    b: float,
    interface_point: Sequence[float] | None = None,
) -> np.ndarray:
    """``G v+_nu - G_1 b v-_nu - v_tau G_nu`` along a grid-aligned interface.

    ``v+_nu`` and ``v-_nu`` are second-order one-sided derivatives along
    ``+nu`` taken from the respective sides; ``v_tau`` is the centered
    tangential derivative of the average of the two fields on the line.
    """
    g = v_plus.grid
    if v_minus.grid != g:
        raise RegularityError("fields live on different grids")
    nu = np.asarray(interface_normal, float)
    axis = int(np.argmax(np.abs(nu)))
    if abs(abs(nu[axis]) - 1.0) > 1e-12 or abs(nu[1 - axis]) > 1e-12:
        raise RegularityError(f"interface normal {nu} is not aligned with a grid axis")
    sgn = int(np.sign(nu[axis]))
    pt = g.center if interface_point is None else interface_point
    k = g.nearest_node(pt)[axis]
    if abs(g.node(*((k, 0) if axis == 0 else (0, k)))[axis] - pt[axis]) > 1e-9 * g.h:
        raise RegularityError("interface does not pass through a node line")
    if not (2 <= k <= g.n - 3):
        raise RegularityError("interface too close to the grid boundary")
    P = v_plus.values if axis == 0 else v_plus.values.T
    M = v_minus.values if axis == 0 else v_minus.values.T
    h = g.h
    dp = sgn * (-3 * P[k] + 4 * P[k + sgn] - P[k + 2 * sgn]) / (2 * h)
    dm = sgn * (3 * M[k] - 4 * M[k - sgn] + M[k - 2 * sgn]) / (2 * h)
    avg = 0.5 * (P[k] + M[k])
    tau = np.array([-nu[1], nu[0]])
    # tangential index runs along the other axis; tau is +-e of that axis
    dt = (avg[2:] - avg[:-2]) / (2 * h) * tau[1 - axis]
    G = law.G(b, nu)
    G1 = law.dG_db(b, nu)
    Gt = law.dG_dtheta(b, nu)
    return G * dp[1:-1] - G1 * b * dm[1:-1] - dt * Gt
