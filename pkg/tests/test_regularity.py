import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bellman2d.grid import ScalarField2D, make_grid, sample
from bellman2d.manufactured import glued_cubic
from bellman2d.regularity import (
    RegularityError,
    blowup_classify,
    c21_seminorm,
    dyadic_decay_check,
    dyadic_radii,
    fit_cubic_expansion,
    fit_two_plane,
    lipschitz_seminorm,
    transmission_residual,
)
from bellman2d.twophase import FluxLaw, TwoPlaneSolution


@pytest.fixture(scope="module")
def g129():
    return make_grid((0.0, 0.0), 1.0, 129)


def _kink(g, a=2.0, b=1.0):
    return sample(lambda x, y: a * np.maximum(y, 0) - b * np.maximum(-y, 0), g)


# --- seminorms -------------------------------------------------------------


def test_lipschitz_examples(g129, solve_cache):
    assert lipschitz_seminorm(_kink(g129), 0.5) == pytest.approx(2.0)
    assert lipschitz_seminorm(sample(lambda x, y: 0 * x + 4.0, g129), 0.5) == 0.0
    sol, g, out, u = solve_cache("glued", 2.0, 0.0, 129)
    assert lipschitz_seminorm(u, 0.5) == pytest.approx(2.0, abs=2 * g.h)
    with pytest.raises(RegularityError):
        lipschitz_seminorm(u, 0.6)


def test_c21_examples(g129):
    q = sample(lambda x, y: 3 * x**2 - x * y + 0.5 * y**2, g129)
    assert c21_seminorm(q, 0.25) <= 1e-8
    # exact v*: the Hessian components are piecewise linear with largest slope b m = 2
    v = sample(glued_cubic(2.0, 1.0), g129)
    assert c21_seminorm(v, 0.5) == pytest.approx(2.0, rel=1e-6)


def test_c21_quartic_grows_with_radius(g129):
    """For x2^4 the best pair quotient is 12 (y1 + y2) with y1 - y2 = 4h."""
    v = sample(lambda x, y: y**4, g129)
    h = g129.h
    vals = {r: c21_seminorm(v, r) for r in (0.125, 0.25, 0.5)}
    for r, q in vals.items():
        assert q == pytest.approx(24 * r - 48 * h, rel=1e-6)
    assert (vals[0.5] - vals[0.25]) / 0.25 == pytest.approx(24.0, rel=1e-6)


def test_c21_subsampled_above_129():
    g = make_grid((0.0, 0.0), 1.0, 257)
    v = sample(glued_cubic(2.0, 1.0), g)
    assert c21_seminorm(v, 0.5) == pytest.approx(2.0, rel=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.floats(-5, 5), st.integers(0, 2**31 - 1))
def test_seminorms_homogeneous(t, seed):
    g = make_grid((0.0, 0.0), 1.0, 33)
    c = np.random.default_rng(seed).standard_normal(4)
    f = sample(lambda x, y: c[0] * x**3 + c[1] * np.sin(2 * y) * x + c[2] * y**4 + c[3] * np.abs(y) ** 3, g)
    for est in (lipschitz_seminorm, c21_seminorm):
        assert est(t * f, 0.5) == pytest.approx(abs(t) * est(f, 0.5), rel=1e-9, abs=1e-9)


def test_seminorms_refinement_consistent(solve_cache):
    vals = {}
    for n in (129, 257):
        sol, g, out, u = solve_cache("glued", 2.0, 0.0, n)
        vals[n] = (lipschitz_seminorm(u, 0.5), c21_seminorm(out.v, 0.5))
    h = 2.0 / 128
    for k in range(2):
        assert abs(vals[129][k] - vals[257][k]) <= 2 * h * vals[257][k]


# --- blow-ups ---------------------------------------------------------------


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(0.3, 2), st.floats(1, 5))
def test_blowup_recovers_two_plane(th, b, m):
    g = make_grid((0.0, 0.0), 1.0, 65)
    law = FluxLaw.bellman_reduced(m)
    nu = np.array([np.cos(th), np.sin(th)])
    p = TwoPlaneSolution.from_law(law, b, nu)
    bc = blowup_classify(p.field(g), (0.0, 0.0), law, [0.5, 0.25])
    assert bc.verdict == "two_plane"
    assert max(bc.residuals) <= 1e-9
    tp = bc.two_plane
    assert tp.a == pytest.approx(p.a, rel=1e-8) and tp.b == pytest.approx(b, rel=1e-8)
    np.testing.assert_allclose(tp.nu, nu, atol=1e-8)


def test_blowup_on_solution(solve_cache):
    sol, g, out, u = solve_cache("glued", 2.0, 0.0, 257)
    law = FluxLaw.bellman_reduced(2.0)
    bc = blowup_classify(u, (0.1, 0.0), law, dyadic_radii(0.25, g.h))
    assert bc.verdict == "two_plane"
    assert bc.two_plane.a == pytest.approx(2 * bc.two_plane.b, rel=0.02)
    np.testing.assert_allclose(bc.two_plane.nu, [0, 1], atol=0.01)
    # the rescalings approach the two-plane blow-up as r shrinks to the floor
    assert all(np.diff(bc.residuals) <= 0)


@pytest.mark.parametrize("m", [1.5, 4.0])
def test_blowup_oblique_solution(solve_cache, m):
    """Oblique interface: classified correctly, misfit at the O(h) floor."""
    sol, g, out, u = solve_cache("tilted", m, 15.0, 257)
    law = FluxLaw.bellman_reduced(m)
    x0 = 0.05 * np.array([sol.nu[1], -sol.nu[0]])
    bc = blowup_classify(u, x0, law, dyadic_radii(0.25, g.h))
    assert bc.verdict == "two_plane"
    a, b = sol.jump_slopes
    assert (bc.two_plane.a, bc.two_plane.b) == pytest.approx((a, b), rel=0.01)
    assert max(bc.residuals) <= 10 * g.h


def test_blowup_one_phase(g129):
    u = sample(lambda x, y: np.maximum(y, 0) * (1 + x / 4), g129)
    bc = blowup_classify(u, (0.0, 0.0), FluxLaw.bellman_reduced(2.0), [0.25, 0.125])
    assert bc.verdict == "one_phase" and bc.two_plane is None


def test_blowup_flux_violation_unresolved(g129):
    law = FluxLaw.bellman_reduced(2.0)
    u = TwoPlaneSolution((0, 0), (0, 1), 2 * law.G(1.0, (0, 1)), 1.0).field(g129)
    bc = blowup_classify(u, (0.0, 0.0), law, [0.25, 0.125])
    assert bc.verdict == "unresolved"
    assert max(bc.residuals) <= 1e-9


def test_blowup_preconditions(g129):
    law = FluxLaw.bellman_reduced(2.0)
    u = _kink(g129)
    with pytest.raises(RegularityError):
        blowup_classify(u, (0.0, 0.3), law, [0.25])
    with pytest.raises(RegularityError):
        blowup_classify(u, (0.0, 0.0), law, [4 * g129.h])
    with pytest.raises(RegularityError):
        blowup_classify(u, (0.9, 0.0), law, [0.25])


def test_fit_two_plane_recenter_not_needed_on_axis(g129):
    f = fit_two_plane(_kink(g129), (0.0, 0.0), 0.25)
    assert (f.a, f.b) == pytest.approx((2.0, 1.0)) and f.residual <= 1e-12


# --- cubic expansion ----------------------------------------------------------


def test_expansion_of_glued_cubic(g129):
    sol = glued_cubic(2.0, 1.0)
    v = sample(sol, g129)
    fit = fit_cubic_expansion(v, (0.0, 0.0), (0.0, 1.0), [0.5, 0.25, 0.125])
    assert fit.gamma == pytest.approx(1 / 6, abs=1e-10)
    assert max(fit.remainder_norms) <= 1e-12
    np.testing.assert_allclose(fit.nu, [0, 1], atol=1e-6)
    # Q carries the lower cubic b (x2^3 / 6 - m x1^2 x2 / 2)
    np.testing.assert_allclose(fit.Q[6:], [0.0, -1.0, 0.0, 1 / 6], atol=1e-10)
    np.testing.assert_allclose(fit.evaluate(np.array([[0.1, 0.2]])), sol.value(np.array([[0.1, 0.2]])), atol=1e-13)


def test_expansion_without_kink(g129):
    v = sample(lambda x, y: 1 + x - 2 * y + x * y + x**3 - 0.5 * x * y**2, g129)
    fit = fit_cubic_expansion(v, (0.0, 0.0), (0.0, 1.0), [0.25, 0.125])
    assert abs(fit.gamma) <= 1e-10 and max(fit.remainder_norms) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=10, max_size=10))
def test_expansion_absorbs_cubics(c):
    g = make_grid((0.0, 0.0), 1.0, 65)
    sol = glued_cubic(2.0, 1.0)
    bump = sample(lambda x, y: np.exp(x) * np.cos(2 * y) * 0.01, g)
    base = sample(sol, g) + bump
    cub = sample(lambda x, y: c[0] + c[1] * x + c[2] * y + c[3] * x**2 + c[4] * x * y + c[5] * y**2
                 + c[6] * x**3 + c[7] * x**2 * y + c[8] * x * y**2 + c[9] * y**3, g)
    a = fit_cubic_expansion(base, (0.0, 0.0), (0.0, 1.0), [0.5, 0.25])
    b = fit_cubic_expansion(base + cub, (0.0, 0.0), (0.0, 1.0), [0.5, 0.25])
    # equal up to round-off of the least-squares solve on values of size ~10
    assert b.remainder_norms[-1] == pytest.approx(a.remainder_norms[-1], rel=1e-6, abs=1e-10)
    assert b.gamma == pytest.approx(a.gamma, rel=1e-6, abs=1e-10)


def test_expansion_remainder_decay():
    """v* plus c |x|^3.5 leaves remainders bounded by C r^3.5 on every dyadic ball.

    The smallest ball is the fitting set, so its remainder is an in-sample
    residual and the log-log slope overshoots; alpha_est is then clipped.
    """
    g = make_grid((0.0, 0.0), 1.0, 257)
    sol = glued_cubic(2.0, 1.0)
    v = sample(lambda x, y: sol(x, y) + 0.5 * np.hypot(x, y) ** 3.5, g)
    fit = fit_cubic_expansion(v, (0.0, 0.0), (0.0, 1.0), dyadic_radii(0.5, g.h))
    q = np.array(fit.remainder_norms) / np.array(fit.radii) ** 3.5
    assert np.all(np.diff(q) <= 0) and q[0] <= 1.0
    assert 0.5 <= fit.alpha_est <= 1.0
    exact = fit_cubic_expansion(sample(sol, g), (0.0, 0.0), (0.0, 1.0), dyadic_radii(0.5, g.h))
    assert 0.0 <= exact.alpha_est <= 1.0 and max(exact.remainder_norms) <= 1e-12


def test_expansion_operator_values(g129):
    sol = glued_cubic(2.0, 1.0)
    v = sample(lambda x, y: sol(x, y) + y**2 - x**2, g129)
    fit = fit_cubic_expansion(v, (0.0, 0.0), (0.0, 1.0), [0.25], problem=sol.problem)
    assert fit.operator_values["L1Q"] == pytest.approx(0.0, abs=1e-9)
    assert fit.operator_values["L2Q"] == pytest.approx(2.0, abs=1e-9)


def test_expansion_too_few_nodes():
    g = make_grid((0.0, 0.0), 1.0, 17)
    with pytest.raises(RegularityError):
        fit_cubic_expansion(sample(lambda x, y: x, g), (0.0, 0.0), (0.0, 1.0), [0.2])


# --- dyadic decay ------------------------------------------------------------


def test_decay_exact(g129):
    p = TwoPlaneSolution((0, 0), (0, 1), 2.0, 1.0)
    d = dyadic_decay_check(p.field(g129), (0, 0), p, dyadic_radii(0.5, g129.h))
    assert d.bounded and max(d.ratios) == 0.0
    assert len(d.rows()) == len(d.radii) == 3


@pytest.mark.parametrize("probe,bounded", [(0.5, True), (0.3, True), (1.5, False)])
def test_decay_synthetic_exponent(probe, bounded):
    """|u - p| = |x|^(1 + 1.2): bounded below the exponent, unbounded above it."""
    g = make_grid((0.0, 0.0), 1.0, 257)
    p = TwoPlaneSolution((0, 0), (0, 1), 2.0, 1.0)
    u = p.field(g) + sample(lambda x, y: np.hypot(x, y) ** 2.2, g)
    d = dyadic_decay_check(u, (0, 0), p, dyadic_radii(0.5, g.h), alpha_probe=probe)
    assert d.bounded is bounded
    assert d.growth_slope == pytest.approx(1.2 - probe, abs=0.05)


def test_decay_on_solution(solve_cache):
    sol, g, out, u = solve_cache("glued", 2.0, 0.0, 257)
    p = TwoPlaneSolution((0, 0), (0, 1), 2.0, 1.0)
    noise = float(np.nanmax(np.abs(u.values - sol.u_field(*g.mesh()))))
    d = dyadic_decay_check(u, (0, 0), p, dyadic_radii(0.5, g.h), noise_floor=noise)
    assert len(d.radii) >= 4 and d.bounded


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_decay_translation_covariant(seed):
    g = make_grid((0.0, 0.0), 1.0, 65)
    rng = np.random.default_rng(seed)
    p = TwoPlaneSolution((0, 0), (0, 1), 2.0, 1.0)
    u = p.field(g) + ScalarField2D(g, 0.01 * rng.standard_normal((65, 65)))
    a = dyadic_decay_check(u, (0, 0), p, [0.5, 0.25])
    b = dyadic_decay_check(u - p.field(g), (0, 0), None, [0.5, 0.25])
    np.testing.assert_allclose(a.sup_diff, b.sup_diff, atol=1e-15)
    np.testing.assert_allclose(a.ratios, b.ratios, atol=1e-13)


def test_decay_floor():
    g = make_grid((0.0, 0.0), 1.0, 33)
    with pytest.raises(RegularityError):
        dyadic_decay_check(_kink(g), (0, 0), None, [2 * g.h])


def test_dyadic_radii():
    assert dyadic_radii(0.5, 1 / 128) == [0.5, 0.25, 0.125, 0.0625]
    assert dyadic_radii(0.5, 1 / 128, count=2) == [0.5, 0.25]


# --- transmission ----------------------------------------------------------


def test_transmission_examples(g129):
    law = FluxLaw.bellman_reduced(3.0)
    e2 = (0.0, 1.0)
    lin = sample(lambda x, y: 0.7 * y, g129)
    np.testing.assert_allclose(transmission_residual(lin, lin, e2, law, 1.0), 0.0, atol=1e-12)
    zero = sample(lambda x, y: 0 * x, g129)
    np.testing.assert_allclose(transmission_residual(zero, zero, e2, law, 1.0), 0.0)
    dbl = sample(lambda x, y: 1.4 * y, g129)
    np.testing.assert_allclose(transmission_residual(dbl, lin, e2, law, 1.0), law.G(1.0, e2) * 0.7, atol=1e-12)


def test_transmission_tangential_term():
    """Off the axis G_nu is nonzero; a tangential slope enters through it."""
    g = make_grid((0.0, 0.0), 1.0, 65)
    law = FluxLaw.bellman_reduced(2.0)
    f = sample(lambda x, y: 0.3 * x, g)
    r = transmission_residual(f, f, (1.0, 0.0), law, 1.0)
    assert law.dG_dtheta(1.0, (1.0, 0.0)) == 0.0
    np.testing.assert_allclose(r, 0.0, atol=1e-12)
    r = transmission_residual(f, f, (0.0, 1.0), law, 1.0)
    np.testing.assert_allclose(r, -0.3 * law.dG_dtheta(1.0, (0.0, 1.0)), atol=1e-12)


def test_transmission_preconditions(g129):
    law = FluxLaw.bellman_reduced(2.0)
    f = sample(lambda x, y: y, g129)
    r = 1 / np.sqrt(2)
    with pytest.raises(RegularityError):
        transmission_residual(f, f, (r, r), law, 1.0)
    with pytest.raises(RegularityError):
        transmission_residual(f, f, (0.0, 1.0), law, 1.0, interface_point=(0.0, 0.5 * g129.h))
    with pytest.raises(RegularityError):
        transmission_residual(f, sample(lambda x, y: y, make_grid((0, 0), 1.0, 65)), (0.0, 1.0), law, 1.0)
