"""Acceptance criteria 1-10; each test records one PASS/FAIL line for the summary."""

import time

import numpy as np
import pytest

from bellman2d import make_grid, sample, solve_policy_iteration
from bellman2d.experiment import ExperimentConfig, comparison_suite, maximum_principle_suite, run
from bellman2d.freeboundary import PLUS, MINUS, extract_gamma, jump_condition_survey, one_sided_derivative
from bellman2d.grid import gradient
from bellman2d.manufactured import bilinear, catalog, glued_cubic, oracle_check, quadratic_saddle, tilted_cubic
from bellman2d.operators import BellmanProblem, SmoothedNonlinearity
from bellman2d.regularity import (
    blowup_classify,
    c21_seminorm,
    dyadic_decay_check,
    dyadic_radii,
    lipschitz_seminorm,
)
from bellman2d.solver import second_derivative_field, solve_smoothed
from bellman2d.twophase import FluxLaw, TwoPlaneSolution

MS = (1.5, 2.0, 4.0)
RUNS = [("glued", m, 0.0) for m in MS] + [("tilted", m, 15.0) for m in MS]


def _near_center(fb, window, count):
    V = fb.vertices()
    idx = np.flatnonzero(np.abs(V).max(axis=1) <= window)
    pick = np.linspace(0, len(idx) - 1, min(count, len(idx))).round().astype(int)
    return V[idx[pick]]


def _gamma(out, u):
    return extract_gamma(u, band_tol=10 * out.residual_max)


def test_oracle_integrity(oracle_gate, acceptance):
    """Criterion 10 (gated before any other test by the session fixture)."""
    reps = [oracle_check(sol) for sol in catalog()]
    worst = max(r.residual for r in reps)
    ok = worst <= 1e-12 and all(r.worst <= 1e-12 for r in reps)
    acceptance(10, ok, f"{len(reps)} catalog entries, max operator residual {worst:.1e}")
    assert ok


def test_manufactured_convergence(acceptance):
    sol = glued_cubic(2.0, 1.0)
    t0 = time.perf_counter()
    errs = []
    for n in (65, 129, 257):
        g = make_grid((0.0, 0.0), 1.0, n)
        out = solve_policy_iteration(sol.problem, sample(sol, g))
        errs.append(float(np.max(np.abs(out.v.values - sample(sol, g).values))))
    elapsed = time.perf_counter() - t0
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    ok = orders.min() >= 1.9 and elapsed <= 120
    acceptance(1, ok, f"errors {', '.join(f'{e:.2e}' for e in errs)}; orders {np.round(orders, 3).tolist()}; "
                      f"{elapsed:.1f}s")
    assert ok


def test_flux_condition(acceptance, solve_cache):
    lines, ok = [], True
    for kind, m, ang in RUNS:
        sol, g, out, u = solve_cache(kind, m, ang, 257)
        sv = jump_condition_survey(u, _gamma(out, u), FluxLaw.bellman_reduced(m), window=0.5)
        pred = 1 + (m - 1) * sol.nu[1] ** 2
        ratio_err = abs(sv.median_ratio - pred) / pred
        good = sv.median_relative_error <= 0.05 and ratio_err <= 0.05 and len(sv.constrained) > 0
        ok &= good
        lines.append(f"{kind} m={m}: err {sv.median_relative_error:.1e} ratio {sv.median_ratio:.4f}/{pred:.4f}")
    acceptance(2, ok, "; ".join(lines))
    assert ok


def _quartic_suite(seed=0, count=12):
    rng = np.random.default_rng(seed)
    terms = [(p, d - p) for d in range(5) for p in range(d + 1)]
    out = []
    for k in range(count):
        c = rng.standard_normal(len(terms))
        f = lambda x, y, c=c: sum(ci * x**p * y**q for ci, (p, q) in zip(c, terms))
        out.append((f"quartic{k}", BellmanProblem.reduced(MS[k % 3]), f))
    return out


def test_lipschitz_bound(acceptance):
    data = [(sol.kind + str(sol.describe().get("m")), sol.problem, sol) for sol in
            [glued_cubic(m, 1.0) for m in MS] + [tilted_cubic(m, 1.0, np.deg2rad(15)) for m in MS]
            + [quadratic_saddle(2.0), bilinear(3.0)]]
    data += _quartic_suite()
    assert len(data) == 20
    worst_drift, worst_ratio, ok = 0.0, 0.0, True
    for name, problem, f in data:
        L = {}
        for n in (129, 257):
            g = make_grid((0.0, 0.0), 1.0, n)
            bd = sample(f, g)
            u = second_derivative_field(solve_policy_iteration(problem, bd).v)
            L[n] = lipschitz_seminorm(u, 0.5)
        g1, g2 = gradient(bd)
        scale = float(np.nanmax(np.hypot(g1, g2)))
        # constant u (saddle, bilinear): both values are round-off
        flat = max(L.values()) <= 1e-6 * scale
        drift = 0.0 if flat else abs(L[257] - L[129]) / L[129]
        worst_drift = max(worst_drift, drift)
        worst_ratio = max(worst_ratio, L[257] / scale)
        ok &= drift <= 0.10 and L[257] <= 10 * scale
    acceptance(3, ok, f"20 data sets; max drift {worst_drift:.2%}; max L/scale {worst_ratio:.2f}")
    assert ok


def test_c21_optimality(acceptance, solve_cache):
    m = 2.0
    c21 = {}
    for n in (129, 257):
        sol, g, out, u = solve_cache("glued", m, 0.0, n)
        c21[n] = c21_seminorm(out.v, 0.5)
    drift = abs(c21[257] - c21[129]) / c21[129]
    sol, g, out, u = solve_cache("glued", m, 0.0, 257)
    e2 = np.array([0.0, 1.0])
    ratios = []
    for x in _near_center(_gamma(out, u), 0.5, 12):
        up = one_sided_derivative(u, x, e2, PLUS)
        lo = one_sided_derivative(u, x, e2, MINUS)
        ratios.append(up / lo)
    ratio = float(np.median(ratios))
    ok = np.isfinite(c21[257]) and drift <= 0.10 and abs(ratio - m) <= 0.05 * m
    acceptance(4, ok, f"c21 {c21[129]:.4f} -> {c21[257]:.4f} (drift {drift:.2%}); "
                      f"v222 ratio {ratio:.4f} vs m={m}")
    assert ok


def test_blowup_dichotomy(acceptance, solve_cache, tmp_path):
    two_plane, total, monotone, notes, ok = 0, 0, True, [], True
    for kind, m, ang in RUNS:
        sol, g, out, u = solve_cache(kind, m, ang, 257)
        law = FluxLaw.bellman_reduced(m)
        a, b = sol.jump_slopes
        inc = 0
        for x in _near_center(_gamma(out, u), 0.25, 12):
            bc = blowup_classify(u, x, law, dyadic_radii(0.25, g.h))
            total += 1
            good = bc.verdict == "two_plane" and (bc.two_plane.a, bc.two_plane.b) == pytest.approx((a, b), rel=0.02)
            two_plane += good
            # residual shrinks as r decreases toward the 8h floor
            shrinking = all(np.diff(bc.residuals) <= 0)
            if kind == "glued":
                monotone &= shrinking
            inc += not shrinking
        if kind == "tilted":
            notes.append(f"tilted m={m}: {inc} non-shrinking (O(h) floor)")
    ok &= two_plane == total >= 10 and monotone

    cfg = ExperimentConfig.from_dict({"n": 129, "m": 2.0, "boundary": {"kind": "quadratic_saddle"},
                                      "analyses": {"blowup": True}})
    rep = run(cfg, tmp_path).to_dict()
    saddle = rep["free_boundary"]["one_phase"] and rep["blowup"]["verdict"] == "one_phase"

    g = make_grid((0.0, 0.0), 1.0, 129)
    law = FluxLaw.bellman_reduced(2.0)
    bad = TwoPlaneSolution((0, 0), (0, 1), 2 * law.G(1.0, (0, 1)), 1.0).field(g)
    synthetic = blowup_classify(bad, (0.0, 0.0), law, [0.25, 0.125]).verdict == "unresolved"
    ok &= saddle and synthetic
    acceptance(5, ok, f"{two_plane}/{total} two_plane; aligned residuals monotone: {monotone}; "
                      f"saddle one_phase: {saddle}; violation unresolved: {synthetic}; {'; '.join(notes)}")
    assert ok


def test_decay(acceptance, solve_cache):
    ok, nr = True, []
    for kind, m, ang in RUNS:
        sol, g, out, u = solve_cache(kind, m, ang, 257)
        law = FluxLaw.bellman_reduced(m)
        noise = float(np.nanmax(np.abs(u.values - sol.u_field(*g.mesh()))))
        radii = dyadic_radii(0.5, g.h)
        nr.append(len(radii))
        for x in _near_center(_gamma(out, u), 0.25, 4):
            bc = blowup_classify(u, x, law, dyadic_radii(0.25, g.h))
            d = dyadic_decay_check(u, bc.x0, bc.two_plane, radii, alpha_probe=0.5, noise_floor=noise)
            ok &= d.bounded and len(d.radii) >= 4
    g = make_grid((0.0, 0.0), 1.0, 257)
    p = TwoPlaneSolution((0, 0), (0, 1), 2.0, 1.0)
    syn = p.field(g) + sample(lambda x, y: np.hypot(x, y) ** 2.2, g)
    d05 = dyadic_decay_check(syn, (0, 0), p, dyadic_radii(0.5, g.h), alpha_probe=0.5)
    d15 = dyadic_decay_check(syn, (0, 0), p, dyadic_radii(0.5, g.h), alpha_probe=1.5)
    ok &= d05.bounded and not d15.bounded
    acceptance(6, ok, f"{len(RUNS)} runs x 4 points bounded over {min(nr)} radii; synthetic slopes "
                      f"{d05.growth_slope:.2f} (probe 0.5), {d15.growth_slope:.2f} (probe 1.5)")
    assert ok


def test_smoothed_agreement(acceptance):
    tol = 1e-9
    excess = {}
    for m in MS:
        sol = glued_cubic(m, 1.0)
        for n in (65, 129):
            g = make_grid((0.0, 0.0), 1.0, n)
            bd = sample(sol, g)
            v_pi = solve_policy_iteration(sol.problem, bd, tol=tol).v
            for eps in (1e-1, 1e-2, 1e-3):
                v = solve_smoothed(SmoothedNonlinearity(m, eps), bd, tol=tol)
                dist = float(np.max(np.abs(v.values - v_pi.values)))
                excess[m, n, eps] = max(dist - (m - 1) * eps - 10 * tol, 0.0) / g.h**2
    # C fitted once, on m = 2, then applied to every m
    C = max(e for (m, _, _), e in excess.items() if m == 2.0)
    ok = all(e <= C * (1 + 1e-9) + 1e-12 for e in excess.values())
    acceptance(7, ok, f"C = {C:.2e} (fitted on m=2); max excess/h^2 over all m {max(excess.values()):.2e}")
    assert ok


def test_comparison_suite(acceptance):
    rep = comparison_suite({"m": 2.0, "n": 129, "trials": 1, "mp_n": 33})
    fams = rep["families"]
    phi_ok = fams["phi_parabolic"]["passed"] and not fams["phi_parabolic_C0"]["passed"]
    slopes = [p for p in rep["g_profiles"] if "relative_error" in p]
    convex = [p for p in rep["g_profiles"] if "min_second_difference" in p]
    slope_ok = bool(slopes) and max(p["relative_error"] for p in slopes) <= 0.01
    convex_ok = bool(convex) and min(p["min_second_difference"] for p in convex) > 0
    ok = phi_ok and slope_ok and convex_ok
    acceptance(8, ok, f"phi(C={rep['C']:.3g}) passes and C=0 fails: {phi_ok}; "
                      f"max slope-ratio error {max(p['relative_error'] for p in slopes):.1e}; "
                      f"min convexity margin {min(p['min_second_difference'] for p in convex):.1e}")
    assert ok


def test_maximum_principle(acceptance):
    rep = maximum_principle_suite(2.0, trials=100, seed=0)
    ok = rep["trials"] == 100 and rep["violations"] == 0 and rep["not_dominated"] == 0
    acceptance(9, ok, f"{rep['trials']} trials, {rep['violations']} violations, "
                      f"worst/tol {rep['worst_over_tol']:.2f}")
    assert ok
