"""Flux laws, two-plane solutions and the comparison families used around them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .grid import Grid2D, ScalarField2D, gradient, sample
from .operators import BellmanProblem, SmoothedNonlinearity, apply_operator

_UNIT_TOL = 1e-9


class FluxLawError(ValueError):
    pass


def _check_unit(nu: Sequence[float]) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (2,) or abs(np.hypot(*nu) - 1.0) > _UNIT_TOL:
        raise FluxLawError(f"normal must be a unit 2-vector, got {nu}")
    return nu


@dataclass(frozen=True)
class FluxLaw:
    """Free-boundary law ``u_nu^+ = G(u_nu^-, nu)``.

    ``bellman_reduced(m)`` is ``G(b, nu) = (1 + (m - 1) nu2^2) b`` with floor
    ``omega(b) = b``. Custom laws supply ``G`` and ``omega``; derivatives fall
    back to central differences.
    """

    kind: str
    m: float | None = None
    G_fn: Callable[[float, np.ndarray], float] | None = field(default=None, repr=False)
    omega_fn: Callable[[float], float] | None = field(default=None, repr=False)

    @classmethod
    def bellman_reduced(cls, m: float) -> FluxLaw:
        if m < 1:
            raise FluxLawError(f"m must be >= 1, got {m}")
        return cls("bellman_reduced", m=float(m))

    @classmethod
    def custom(
        cls, G: Callable[[float, np.ndarray], float], omega: Callable[[float], float]
    ) -> FluxLaw:
        return cls("custom", G_fn=G, omega_fn=omega)

    def G(self, b: float, nu: Sequence[float]) -> float:
        nu = _check_unit(nu)
        if self.kind == "bellman_reduced":
            return (1.0 + (self.m - 1.0) * nu[1] ** 2) * b
        return float(self.G_fn(b, nu))

    def omega(self, b: float) -> float:
        if self.kind == "bellman_reduced":
            return b
        return float(self.omega_fn(b))

    def dG_db(self, b: float, nu: Sequence[float]) -> float:
        nu = _check_unit(nu)
        if self.kind == "bellman_reduced":
            return 1.0 + (self.m - 1.0) * nu[1] ** 2
        d = 1e-6 * max(1.0, abs(b))
        return (self.G(b + d, nu) - self.G(max(b - d, 0.0), nu)) / (b + d - max(b - d, 0.0))

    def dG_dtheta(self, b: float, nu: Sequence[float]) -> float:
        """Derivative of ``G(b, nu)`` as ``nu`` turns counterclockwise, i.e. ``G_nu . tau``."""
        nu = _check_unit(nu)
        tau = np.array([-nu[1], nu[0]])
        if self.kind == "bellman_reduced":
            return 2.0 * (self.m - 1.0) * b * nu[1] * tau[1]
        d = 1e-6
        c, s = np.cos(d), np.sin(d)
        rp = np.array([c * nu[0] - s * nu[1], s * nu[0] + c * nu[1]])
        rm = np.array([c * nu[0] + s * nu[1], -s * nu[0] + c * nu[1]])
        return (self.G(b, rp) - self.G(b, rm)) / (2 * d)

    def inverse(self, a: float, nu: Sequence[float]) -> float | None:
        """The ``b >= 0`` with ``G(b, nu) = a``, or ``None`` if ``a <= G(0, nu)``."""
        nu = _check_unit(nu)
        g0 = self.G(0.0, nu)
        if a <= g0:
            return None
        if self.kind == "bellman_reduced":
            return a / (1.0 + (self.m - 1.0) * nu[1] ** 2)
        hi = 1.0
        while self.G(hi, nu) < a:
            hi *= 2.0
            if hi > 1e12:
                raise FluxLawError("flux law inverse did not bracket")
        return brentq(lambda b: self.G(b, nu) - a, 0.0, hi, xtol=1e-14, rtol=1e-14)

    def certify(self, b_max: float = 10.0, nb: int = 1024, ndir: int = 64) -> dict[str, float]:
        """Sampled strict monotonicity in ``b`` and the floor ``G >= omega``.

        Returns the minimal increment and floor margin; raises when either fails.
        """
        bs = np.linspace(0.0, b_max, nb)
        th = np.linspace(0.0, 2 * np.pi, ndir, endpoint=False)
        min_inc = np.inf
        min_floor = np.inf
        for t in th:
            nu = np.array([np.cos(t), np.sin(t)])
            gv = np.array([self.G(b, nu) for b in bs])
            min_inc = min(min_inc, float(np.min(np.diff(gv))))
            om = np.array([self.omega(b) for b in bs])
            min_floor = min(min_floor, float(np.min(gv - om)))
        if not min_inc > 0:
            raise FluxLawError(f"G is not strictly increasing in b (min increment {min_inc})")
        if min_floor < -1e-12:
            raise FluxLawError(f"G drops below omega (margin {min_floor})")
        om = np.array([self.omega(b) for b in bs])
        if np.any(np.diff(om) < -1e-12):
            raise FluxLawError("omega is not nondecreasing")
        return {"min_increment": min_inc, "min_floor_margin": min_floor}


def flux_eval(law: FluxLaw, b: float, nu: Sequence[float]) -> float:
    if b < 0:
        raise FluxLawError(f"b must be nonnegative, got {b}")
    return law.G(b, nu)


@dataclass(frozen=True)
class TwoPlaneSolution:
    x0: np.ndarray
    nu: np.ndarray
    a: float
    b: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "nu", _check_unit(self.nu))

    @classmethod
    def from_law(
        cls, law: FluxLaw, b: float, nu: Sequence[float], x0: Sequence[float] = (0.0, 0.0)
    ) -> TwoPlaneSolution:
        return cls(np.asarray(x0, float), np.asarray(nu, float), law.G(b, nu), b)

    def satisfies(self, law: FluxLaw, rtol: float = 1e-9) -> bool:
        return self.a > 0 and self.b > 0 and abs(self.a - law.G(self.b, self.nu)) <= rtol * self.a

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return two_plane_eval(self, x)

    def field(self, grid: Grid2D) -> ScalarField2D:
        return sample(lambda x1, x2: two_plane_eval(self, np.stack([x1, x2], -1)), grid)

    def shifted(self, t: float) -> TwoPlaneSolution:
        """``x -> p(x + t nu)``, increasing in ``t``."""
        return TwoPlaneSolution(self.x0 - t * self.nu, self.nu, self.a, self.b)


def two_plane_eval(p: TwoPlaneSolution, x: np.ndarray) -> np.ndarray:
    s = (np.asarray(x, dtype=float) - p.x0) @ p.nu
    return p.a * np.maximum(s, 0.0) - p.b * np.maximum(-s, 0.0)


def tangent_two_plane(
    u: ScalarField2D, y: tuple[int, int], law: FluxLaw
) -> TwoPlaneSolution | None:
    """Two-plane solution matching ``u`` and its centered gradient at node ``y``.

    Returns ``None`` in the degenerate cases: ``u(y) = 0``, zero gradient, or a
    positive-phase slope not exceeding ``G(0, nu)``.
    """
    i, j = y
    n = u.grid.n
    if not (0 < i < n - 1 and 0 < j < n - 1):
        raise ValueError(f"node {y} is on the boundary ring")
    g1, g2 = gradient(u)
    grad = np.array([g1[i, j], g2[i, j]])
    val = float(u.values[i, j])
    slope = float(np.hypot(*grad))
    if slope == 0.0 or val == 0.0:
        return None
    nu = grad / slope
    nu = nu / np.hypot(*nu)
    node = u.grid.node(i, j)
    if val > 0:
        b = law.inverse(slope, nu)
        if b is None or b <= 0:
            return None
        return TwoPlaneSolution(node - (val / slope) * nu, nu, slope, b)
    a = law.G(slope, nu)
    return TwoPlaneSolution(node - (val / slope) * nu, nu, a, slope)


# --- comparison families -------------------------------------------------


@dataclass(frozen=True)
class ComparisonFunction:
    """``phi_parabolic``: ``q + C q^2`` with ``q = x2 - x1^2``;
    ``psi_twophase``: ``a phi+ - gamma phi-`` built on ``phi_parabolic(C)``;
    ``line_family``: ``(1 + s) x2 - 2 s``."""

    kind: str
    C: float = 0.0
    gamma: float = 0.0
    a: float = 0.0
    s: float = 0.0

    @classmethod
    def phi_parabolic(cls, C: float) -> ComparisonFunction:
        return cls("phi_parabolic", C=C)

    @classmethod
    def psi_twophase(cls, C: float, gamma: float, law: FluxLaw) -> ComparisonFunction:
        return cls("psi_twophase", C=C, gamma=gamma, a=law.omega(gamma))

    @classmethod
    def line_family(cls, s: float) -> ComparisonFunction:
        if s <= 0:
            raise ValueError("line family needs s > 0")
        return cls("line_family", s=s)


def comparison_eval(c: ComparisonFunction, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    if c.kind == "line_family":
        return (1 + c.s) * x2 - 2 * c.s
    q = x2 - x1**2
    phi = q + c.C * q**2
    if c.kind == "phi_parabolic":
        return phi
    if c.kind == "psi_twophase":
        return c.a * np.maximum(phi, 0.0) - c.gamma * np.maximum(-phi, 0.0)
    raise ValueError(f"unknown comparison kind {c.kind!r}")


def sufficient_parabolic_constant(problem: BellmanProblem) -> float:
    """A C making ``q + C q^2`` a subsolution of both operators where ``|q| <= 1/(4C)``.

    With ``D^2 phi = (1 + 2Cq) diag(-2, 0) + 2C grad q grad q^T`` and
    ``|grad q| >= 1``, ``L phi >= -3 a11 + 2 C lambda_min``.
    """
    return max(1.5 * op.a11 / op.lam for op in problem.ops())


def parabolic_window_radius(C: float) -> float:
    """Largest r with ``|x2 - x1^2| <= 1/(4C)`` on the ball of radius r."""
    t = 1.0 / (4.0 * C)
    return (-1.0 + np.sqrt(1.0 + 4.0 * t)) / 2.0


@dataclass(frozen=True)
class SubsolutionReport:
    margins: dict[str, float]
    slope_margin: float | None
    nodes: int

    @property
    def passed(self) -> bool:
        ok = all(v >= 0 for v in self.margins.values())
        return ok and (self.slope_margin is None or self.slope_margin >= 0)

    @property
    def min_margin(self) -> float:
        vals = list(self.margins.values())
        if self.slope_margin is not None:
            vals.append(self.slope_margin)
        return min(vals)


def subsolution_check(
    c: ComparisonFunction,
    problem: BellmanProblem,
    grid: Grid2D,
    window: np.ndarray,
    law: FluxLaw | None = None,
) -> SubsolutionReport:
    """Discrete ``L_i phi >= 0`` on the window nodes for both operators.

    For ``psi_twophase`` the operators are checked on the smooth function
    ``phi`` and the slope condition ``a <= G(gamma, nu)`` at the origin
    crossing (``nu = grad phi(0) = e2``) is reported as ``slope_margin``.
    """
    window = np.asarray(window, dtype=bool)
    if window.shape != (grid.n, grid.n):
        raise ValueError("window mask shape does not match grid")
    if window[0, :].any() or window[-1, :].any() or window[:, 0].any() or window[:, -1].any():
        raise ValueError("window touches the grid boundary")
    base = c if c.kind != "psi_twophase" else ComparisonFunction.phi_parabolic(c.C)
    f = sample(lambda x1, x2: comparison_eval(base, np.stack([x1, x2], -1)), grid)
    margins = {}
    for k, op in enumerate(problem.ops(), start=1):
        lv = apply_operator(op, f).values
        margins[f"L{k}"] = float(np.min(lv[window]))
    slope = None
    if c.kind == "psi_twophase":
        if law is None:
            raise ValueError("psi_twophase check needs a flux law")
        slope = law.G(c.gamma, np.array([0.0, 1.0])) - c.a
    return SubsolutionReport(margins, slope, int(window.sum()))


# --- one-dimensional profiles of the smoothed problem -------------------


@dataclass(frozen=True)
class GProfile:
    t: np.ndarray
    g: np.ndarray
    m: float
    nu2sq: float
    delta: float
    eps: float

    def slopes(self, inner: float = 0.05, outer: float = 0.25) -> tuple[float, float]:
        """Least-squares slopes on ``[inner, outer]`` and ``[-outer, -inner]``."""
        right = (self.t >= inner) & (self.t <= outer)
        left = (self.t <= -inner) & (self.t >= -outer)
        sr = np.polyfit(self.t[right], self.g[right], 1)[0]
        sl = np.polyfit(self.t[left], self.g[left], 1)[0]
        return float(sr), float(sl)

    def slope_ratio(self, inner: float = 0.05, outer: float = 0.25) -> float:
        sr, sl = self.slopes(inner, outer)
        return sr / sl

    def second_differences(self) -> np.ndarray:
        dt = self.t[1] - self.t[0]
        return (self.g[2:] - 2 * self.g[1:-1] + self.g[:-2]) / dt**2


def g_profile_solve(
    m: float,
    nu2sq: float,
    delta: float,
    eps: float,
    t_range: tuple[float, float] = (-1.0, 1.0),
    steps: int = 20_000,
) -> GProfile:
    """Integrate ``[nu1^2 + (nu2^2 + delta) h_eps'(g)] g' = 1 + delta t`` from ``g(0) = 0``.

    Fixed-step RK4 outward from 0 in both directions; ``steps`` is the count
    over the whole range (at least 10**4).
    """
    if delta < 0 or eps <= 0:
        raise ValueError("need delta >= 0 and eps > 0")
    if not 0 <= nu2sq <= 1:
        raise ValueError("nu2sq must lie in [0, 1]")
    t0, t1 = t_range
    if not t0 < 0 < t1:
        raise ValueError("t_range must contain 0 in its interior")
    if delta > 0 and t0 <= -1.0 / delta:
        raise ValueError("t_range must keep 1 + delta t > 0")
    steps = max(int(steps), 10_000)
    dt = (t1 - t0) / steps
    if dt <= 1e-14:
        raise ValueError("step underflow")
    nl = SmoothedNonlinearity(m, eps)
    nu1sq = 1.0 - nu2sq

    def rhs(t: float, g: float) -> float:
        return (1.0 + delta * t) / (nu1sq + (nu2sq + delta) * nl.dh(g))

    def march(t_end: float) -> tuple[np.ndarray, np.ndarray]:
        k = int(round(abs(t_end) / dt))
        step = np.sign(t_end) * abs(t_end) / k
        ts = np.arange(k + 1) * step
        gs = np.zeros(k + 1)
        g = 0.0
        for i in range(k):
            t = ts[i]
            k1 = rhs(t, g)
            k2 = rhs(t + step / 2, g + step * k1 / 2)
            k3 = rhs(t + step / 2, g + step * k2 / 2)
            k4 = rhs(t + step, g + step * k3)
            g += step * (k1 + 2 * k2 + 2 * k3 + k4) / 6
            gs[i + 1] = g
        return ts, gs

    tl, gl = march(t0)
    tr, gr = march(t1)
    t = np.concatenate([tl[::-1], tr[1:]])
    g = np.concatenate([gl[::-1], gr[1:]])
    return GProfile(t, g, m, nu2sq, delta, eps)


# --- discrete maximum principle against two-plane solutions ------------


@dataclass(frozen=True)
class MaxPrincipleResult:
    holds: bool
    boundary_dominated: bool
    worst_violation: float
    first_violation: tuple[int, int] | None


def region_boundary(region: np.ndarray) -> np.ndarray:
    """Nodes of ``region`` with a 4-neighbor outside it (or on the grid ring)."""
    r = np.asarray(region, dtype=bool)
    pad = np.pad(r, 1, constant_values=False)
    inner = pad[2:, 1:-1] & pad[:-2, 1:-1] & pad[1:-1, 2:] & pad[1:-1, :-2]
    return r & ~inner


def maximum_principle_check(
    u: ScalarField2D,
    p: TwoPlaneSolution,
    region: np.ndarray,
    tol_comparison: float,
    direction: str = "below",
) -> MaxPrincipleResult:
    """If ``u <= p`` on the discrete boundary of ``region`` then ``u <= p + tol`` inside.

    ``direction="above"`` checks the reverse ordering. When the boundary
    hypothesis fails the implication holds vacuously.
    """
    region = np.asarray(region, dtype=bool)
    X, Y = u.grid.mesh()
    pv = two_plane_eval(p, np.stack([X, Y], -1))
    diff = u.values - pv if direction == "below" else pv - u.values
    bnd = region_boundary(region)
    inside = region & ~bnd
    dominated = bool(np.all(diff[bnd] <= 0.0))
    if not dominated or not inside.any():
        return MaxPrincipleResult(True, dominated, 0.0, None)
    d = np.where(inside, diff, -np.inf)
    worst = float(d.max())
    if worst <= tol_comparison:
        return MaxPrincipleResult(True, True, worst, None)
    bad = np.argwhere(d > tol_comparison)
    i, j = bad[0]
    return MaxPrincipleResult(False, True, worst, (int(i), int(j)))


def dominating_shift(
    u: ScalarField2D, p: TwoPlaneSolution, region: np.ndarray, direction: str = "below"
) -> TwoPlaneSolution:
    """Smallest translate ``p(x + t nu)`` ordered against ``u`` on the region boundary."""
    bnd = region_boundary(region)
    X, Y = u.grid.mesh()
    pts = np.stack([X[bnd], Y[bnd]], -1)
    uv = u.values[bnd]
    sign = 1.0 if direction == "below" else -1.0

    def gap(t: float) -> float:
        return float(np.max(sign * (uv - two_plane_eval(p.shifted(t), pts))))

    lo, hi = -1.0, 1.0
    while gap(hi * sign) > 0:
        hi *= 2
    while gap(lo * sign) <= 0:
        lo *= 2
        if abs(lo) > 1e6:
            return p.shifted(lo * sign)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if gap(mid * sign) > 0:
            lo = mid
        else:
            hi = mid
    return p.shifted(hi * sign)
