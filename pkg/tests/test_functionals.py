import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad, quad

from carnotheat import functionals as fx
from carnotheat import regions as rg
from carnotheat.groups import group_from_preset
from carnotheat.heat import build_engine
from carnotheat.semigroup import grid_from_callable, horizontal_gradient, l1_norm

H1 = group_from_preset("heisenberg:1")
E1 = group_from_preset("euclidean:1")
E2 = group_from_preset("euclidean:2")
QUAD = build_engine(H1, "quadrature")
CF1 = build_engine(E1, "closed-form")
CF2 = build_engine(E2, "closed-form")

PHI_GAUSS = (4.0 * math.pi) ** -0.5  # first-layer marginal of a unit-mass kernel

# mollified ball: 1 inside rho <= R - eps, quintic ramp down to 0 at R + eps
BALL_R, BALL_EPS = 0.75, 0.25


def ball_profile(rho):
    s = np.clip((rho - (BALL_R - BALL_EPS)) / (2.0 * BALL_EPS), 0.0, 1.0)
    return 1.0 - s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


def ball_dprofile(rho):
    s = np.clip((rho - (BALL_R - BALL_EPS)) / (2.0 * BALL_EPS), 0.0, 1.0)
    return -s * s * (30.0 + s * (-60.0 + 30.0 * s)) / (2.0 * BALL_EPS)


def mollified_ball(box=((-1.6, 1.6),) * 3, shape=(48,) * 3):
    return grid_from_callable(box, shape,
                              lambda p: ball_profile(np.sqrt((p * p).sum(-1))))


def h1_ball_perimeter(R):
    # P_G(B_R) = R^2 int sin^2(th) sqrt(1 + R^2 cos^2(th)/4) dth dph
    val, _ = quad(lambda th: np.sin(th) ** 2
                  * np.sqrt(1 + R * R * np.cos(th) ** 2 / 4), 0, np.pi)
    return 2 * np.pi * R * R * val


def h1_radial_grad_l1(dprofile, rmax):
    """|D_G f| for f = profile(|x|) on heisenberg:1 by polar quadrature:
    X_i rho carries the horizontal weight (w/rho) sqrt(1 + z^2/4)."""
    with warnings.catch_warnings():
        # the |profile'| kink trips quadpack's roundoff heuristic; the
        # returned error estimate is checked below regardless
        warnings.simplefilter("ignore")
        val, err = dblquad(
            lambda z, w: 2 * math.pi * w * abs(dprofile(math.hypot(w, z)))
            * (w / math.hypot(w, z)) * math.sqrt(1 + z * z / 4),
            0, rmax, lambda w: -rmax, lambda w: rmax, epsabs=1e-10)
    assert err < 1e-6
    return val


# ---------------------------------------------------------------------------
# Richardson extrapolation
# ---------------------------------------------------------------------------

def test_richardson_exact_on_sqrt_polynomial():
    t = np.array([0.5, 0.3, 0.18, 0.1, 0.05])
    vals = 3.0 + 2.0 * np.sqrt(t) + 5.0 * t
    lim, err = fx.richardson_limit(t, vals, order=2)
    assert abs(lim - 3.0) < 1e-10
    # data inside the model: the next-order refinement agrees, tiny bar
    assert err < 1e-8


def test_richardson_order_one_sees_curvature():
    t = np.array([0.4, 0.2, 0.1, 0.05])
    vals = 1.0 + 4.0 * t  # pure t term looks curved to an affine fit
    lim1, err1 = fx.richardson_limit(t, vals, order=1)
    lim2, err2 = fx.richardson_limit(t, vals, order=2)
    assert abs(lim2 - 1.0) < 1e-10
    assert abs(lim1 - 1.0) > 1e-3
    assert err1 > err2


@given(st.floats(-10, 10), st.floats(-10, 10))
@settings(max_examples=25, deadline=None)
def test_richardson_recovers_affine_in_sqrt_t(a, b):
    t = np.array([0.8, 0.4, 0.2, 0.1])
    lim, _ = fx.richardson_limit(t, a + b * np.sqrt(t), order=1)
    assert abs(lim - a) < 1e-8 * max(1.0, abs(a), abs(b))


def test_richardson_order_clipped_to_data():
    lim, _ = fx.richardson_limit([0.4, 0.1], [1.2, 1.1], order=5)
    # order falls back to 1: exact affine extrapolation through two points
    assert abs(lim - (1.1 - (1.2 - 1.1) / (math.sqrt(0.4) - math.sqrt(0.1))
                      * math.sqrt(0.1))) < 1e-12


def test_richardson_validation():
    with pytest.raises(ValueError):
        fx.richardson_limit([0.1], [1.0])
    with pytest.raises(ValueError):
        fx.richardson_limit([0.2, 0.1], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        fx.richardson_limit([0.2, -0.1], [1.0, 2.0])


def test_variation_report_validates_and_serializes():
    rep = fx.VariationReport(label="x", t_grid=(0.2, 0.1), values=(1.0, 0.9),
                             errors=(0.0, 0.0), limit=0.8, limit_error=0.01)
    d = rep.as_dict()
    assert d["label"] == "x" and d["limit"] == 0.8
    with pytest.raises(ValueError):
        fx.VariationReport(label="x", t_grid=(0.2, 0.1), values=(1.0,),
                           errors=(0.0, 0.0), limit=0.8, limit_error=0.01)
    with pytest.raises(ValueError):
        fx.VariationReport(label="x", t_grid=(0.2, 0.1), values=(1.0, -0.9),
                           errors=(0.0, 0.0), limit=0.8, limit_error=0.01)


def test_sweep_report_collects_errors_and_ratio():
    t = (0.4, 0.2, 0.1)

    def fn(tt):
        return 2.0 + math.sqrt(tt), 0.05

    rep = fx.sweep_report("s", t, fn, reference=2.0)
    assert rep.errors == (0.05, 0.05, 0.05)
    assert rep.limit_error >= 0.05  # per-point bars feed the limit bar
    assert abs(rep.limit - 2.0) < 1e-9
    assert abs(rep.ratio - 1.0) < 1e-9


# ---------------------------------------------------------------------------
# anisotropy profile phi_G and the gradient constant c_G
# ---------------------------------------------------------------------------

def test_phi_equals_gaussian_marginal_on_heisenberg():
    val = fx.phi_g(H1, (1.0, 0.0), QUAD)
    assert abs(val - PHI_GAUSS) < 1e-5 * PHI_GAUSS


def test_phi_constant_over_normals():
    angles = np.linspace(0.0, 2 * math.pi, 8, endpoint=False)
    vals = [fx.phi_g(H1, (math.cos(a), math.sin(a)), QUAD) for a in angles]
    assert (max(vals) - min(vals)) <= 1e-9 * max(vals)


def test_phi_euclidean_closed_form():
    assert fx.phi_g(E2, (0.6, 0.8), CF2) == pytest.approx(PHI_GAUSS, rel=1e-12)
    assert fx.phi_g(E1, (1.0,), CF1) == pytest.approx(PHI_GAUSS, rel=1e-12)


def test_phi_rejects_bad_normal():
    with pytest.raises(ValueError):
        fx.phi_g(H1, (1.0, 0.0, 0.0), QUAD)


def test_grad_l1_constant_euclidean_gamma_ratio():
    # E[|<grad h_1, e>|]-type constant: Gamma((n+1)/2) / Gamma(n/2)
    assert fx.grad_l1_constant(E1, CF1) == pytest.approx(1 / math.sqrt(math.pi),
                                                         rel=1e-12)
    assert fx.grad_l1_constant(E2, CF2) == pytest.approx(math.sqrt(math.pi) / 2,
                                                         rel=1e-12)


def test_grad_l1_constant_heisenberg_frozen():
    assert fx.grad_l1_constant(H1, QUAD) == pytest.approx(1.3243812741250716,
                                                          rel=1e-6)


def test_grad_l1_constant_dominates_phi():
    # phi_G is the directional marginal, c_G the full-gradient mass
    assert fx.grad_l1_constant(H1, QUAD) > fx.phi_g(H1, (1, 0), QUAD)


# ---------------------------------------------------------------------------
# de Giorgi functional
# ---------------------------------------------------------------------------

def test_de_giorgi_gaussian_bump_limit_matches_gradient_mass():
    # f = exp(-|x|^2 / (2 sigma^2)) on R^2: int |grad f| = pi^(3/2) sigma sqrt(2)
    sigma = 0.5
    f = grid_from_callable(((-3.0, 3.0),) * 2, (260, 260),
                           lambda p: np.exp(-(p * p).sum(-1) / (2 * sigma**2)))
    ref = math.pi ** 1.5 * sigma * math.sqrt(2.0)
    # the deficit is analytic in t (no sqrt term), so keep t small enough
    # that the sqrt-basis extrapolation is not fitting curvature
    ts = [0.012 * 0.65 ** k for k in range(6)]
    rep = fx.sweep_report("dg", ts,
                          lambda t: fx.de_giorgi_functional(E2, f, t, CF2),
                          reference=ref)
    assert abs(rep.limit - ref) <= 0.02 * ref
    # smoothing only removes gradient mass
    assert all(v <= ref * 1.005 for v in rep.values)


def test_de_giorgi_routes_agree():
    f = mollified_ball()
    kern = fx.de_giorgi_functional(H1, f, 0.05, QUAD, route="kernel")
    sten = fx.de_giorgi_functional(H1, f, 0.05, QUAD, route="stencil")
    assert kern > 0
    assert abs(kern - sten) <= 2e-2 * kern
    with pytest.raises(ValueError):
        fx.de_giorgi_functional(H1, f, 0.05, QUAD, route="midpoint")


# ---------------------------------------------------------------------------
# half-heat functional
# ---------------------------------------------------------------------------

def test_half_heat_halfspace_is_scale_free():
    # E = {x >= 0} in R^1: the functional equals phi at EVERY t, not just in
    # the limit, because the halfspace is invariant under parabolic scaling.
    chi = grid_from_callable(((-8.0, 8.0),), (2001,),
                             lambda p: (p[..., 0] >= 0.0).astype(float))
    for t in (0.1, 0.5, 1.0):
        val = fx.half_heat_functional(E1, chi, t, CF1)
        assert val == pytest.approx(PHI_GAUSS, rel=2e-3)


def test_half_heat_ball_limit_euclidean():
    ball = rg.EuclideanBall(center=(0.0, 0.0), radius=0.8)
    ref = PHI_GAUSS * 2 * math.pi * 0.8
    ts = [0.02 * 0.7 ** k for k in range(6)]
    rep = fx.sweep_report(
        "hh", ts,
        lambda t: fx.half_heat_functional(E2, ball, t, CF2,
                                          ((-2.0, 2.0),) * 2, (360, 360)),
        reference=ref)
    assert abs(rep.limit - ref) <= 0.02 * ref


def test_half_heat_full_box_region_vanishes():
    chi = grid_from_callable(((-1.0, 1.0),) * 2, (40, 40), lambda p: np.ones(p.shape[:-1]))
    assert fx.half_heat_functional(E2, chi, 0.3, CF2) == 0.0


def test_exchange_identity_gap_small_when_box_fits_the_kernel():
    ball = rg.EuclideanBall(center=(0.0, 0.0, 0.0), radius=0.9)
    half, absf, gap = fx.half_heat_identity_gap(
        H1, ball, 0.04, QUAD, ((-1.8, 1.8),) * 3, (48,) * 3)
    assert half > 0 and absf > 0
    assert gap <= 1e-3  # measured 3.6e-5; box margin >= kernel reach at this t


# ---------------------------------------------------------------------------
# Ledoux functional
# ---------------------------------------------------------------------------

def test_ledoux_rule_has_unit_mass_and_even_angles():
    nodes, wts = fx.ledoux_rule(H1, QUAD)
    assert abs(wts.sum() - 1.0) <= 5e-4
    assert np.all(np.isfinite(nodes))
    with pytest.raises(ValueError):
        fx.ledoux_rule(H1, QUAD, nang=7)


def test_ledoux_rule_euclidean_mass():
    nodes, wts = fx.ledoux_rule(E2, CF2)
    assert abs(wts.sum() - 1.0) <= 5e-4


def test_ledoux_zero_function_vanishes():
    # note a nonzero constant on a finite box would NOT vanish: the grid
    # represents c * chi_box, whose variation lives on the box walls
    f = grid_from_callable(((-2.0, 2.0),) * 2, (30, 30),
                           lambda p: np.zeros(p.shape[:-1]))
    assert fx.ledoux_functional(E2, f, 0.2, CF2) == 0.0


def test_ledoux_bump_limit_on_the_line():
    # f = exp(-x^2): int |f'| = 2, limit should be phi * 2
    f = grid_from_callable(((-7.0, 7.0),), (1401,),
                           lambda p: np.exp(-p[..., 0] ** 2))
    rule = fx.ledoux_rule(E1, CF1)
    ts = [0.2 * 0.6 ** k for k in range(6)]
    rep = fx.sweep_report(
        "led", ts, lambda t: fx.ledoux_functional(E1, f, t, CF1, rule=rule),
        reference=2.0 * PHI_GAUSS)
    assert abs(rep.limit - 2.0 * PHI_GAUSS) <= 0.03 * 2.0 * PHI_GAUSS


def test_ledoux_indicator_route_matches_half_heat():
    # For a sharp indicator both functionals collapse to the same exchange
    # form; the residual difference is the kernel's discrete mass defect.
    ball = rg.EuclideanBall(center=(0.0, 0.0, 0.0), radius=0.9)
    box, shape = ((-1.8, 1.8),) * 3, (48,) * 3
    chi = rg.indicator_grid(H1, ball, box, shape)
    t = 0.04
    led = fx.ledoux_functional(H1, chi, t, QUAD)
    half = fx.half_heat_functional(H1, ball, t, QUAD, box, shape)
    assert abs(led - half) <= 1e-3 * half


def test_ledoux_general_route_consistent_with_indicator_route():
    # near-sharp ramp: quadrature-shift path vs exchange path within a few %
    ball = rg.EuclideanBall(center=(0.0, 0.0, 0.0), radius=0.9)
    box, shape = ((-1.8, 1.8),) * 3, (36,) * 3
    chi = rg.indicator_grid(H1, ball, box, shape)
    soft = chi.like(np.clip(chi.values + 1e-9, 0.0, 1.0))  # not {0,1}-valued
    rule = fx.ledoux_rule(H1, QUAD, nr=10, nz=8, nang=8)
    t = 0.05
    led_soft = fx.ledoux_functional(H1, soft, t, QUAD, rule=rule)
    led_sharp = fx.ledoux_functional(H1, chi, t, QUAD)
    assert abs(led_soft - led_sharp) <= 0.05 * led_sharp


def test_ledoux_monte_carlo_route():
    mc = build_engine(E1, "monte-carlo", seed=11, samples=20_000, substeps=1)
    f = grid_from_callable(((-7.0, 7.0),), (1401,),
                           lambda p: np.exp(-p[..., 0] ** 2))
    got = fx.ledoux_functional(E1, f, 0.2, mc, samples=20_000)
    want = fx.ledoux_functional(E1, f, 0.2, CF1, rule=fx.ledoux_rule(E1, CF1))
    assert abs(got - want) <= 0.05 * want


def test_ledoux_rejects_nonpositive_time():
    f = grid_from_callable(((-1.0, 1.0),), (11,), lambda p: p[..., 0] * 0)
    with pytest.raises(ValueError):
        fx.ledoux_functional(E1, f, 0.0, CF1)


# ---------------------------------------------------------------------------
# uniform perimeter bound
# ---------------------------------------------------------------------------

def test_marc_bound_euclidean_interval():
    region = rg.EuclideanBall(center=(0.0,), radius=1.0)
    ts = [0.05 * 0.7 ** k for k in range(8)]
    rep = fx.marc_bound_check(E1, region, ts, CF1, ((-4.0, 4.0),), (1601,))
    assert rep.passed and rep.slack > 0
    assert rep.perimeter == pytest.approx(2.0, rel=1e-12)
    assert rep.c_g == pytest.approx(1 / math.sqrt(math.pi), rel=1e-12)
    # ratio limit approaches phi from below
    assert rep.ratio_limit <= rep.phi_ref * 1.02
    assert abs(rep.ratio_limit - rep.phi_ref) <= 0.03 * rep.phi_ref
    d = rep.as_dict()
    assert d["passed"] and len(d["ratios"]) == len(ts)


def test_marc_bound_h1_ball():
    ball = rg.EuclideanBall(center=(0.0, 0.0, 0.0), radius=0.9)
    ts = [0.2 * 0.65 ** k for k in range(6)]
    rep = fx.marc_bound_check(H1, ball, ts, QUAD, ((-2.6, 2.6),) * 3, (36,) * 3)
    assert rep.passed
    assert rep.perimeter == pytest.approx(h1_ball_perimeter(0.9), rel=1e-6)
    assert all(r + e / rep.perimeter <= rep.c_g
               for r, e in zip(rep.ratios, rep.lhs_errors))


# ---------------------------------------------------------------------------
# coarea
# ---------------------------------------------------------------------------

def test_coarea_euclidean_cone():
    # f = (1 - |x|/R)_+ : lhs = pi R, levels are circles of radius R(1 - tau)
    R = 1.0
    f = grid_from_callable(((-1.4, 1.4),) * 2, (400, 400),
                           lambda p: np.clip(1 - np.sqrt((p * p).sum(-1)) / R, 0, None))
    taus = np.linspace(2e-3, 1 - 2e-3, 201)
    rep = fx.coarea_check(
        E2, f, taus,
        lambda tau: rg.EuclideanBall(center=(0.0, 0.0), radius=R * (1 - tau)))
    assert rep.rel_gap <= 1e-2
    assert rep.lhs == pytest.approx(math.pi * R, rel=1e-2)
    d = rep.as_dict()
    assert len(d["perimeters"]) == len(taus)


def test_coarea_h1_radial():
    # f = (1 - rho^2)_+^2, levels {f > tau} are Euclidean balls sqrt(1 - sqrt(tau))
    f = grid_from_callable(((-1.2, 1.2),) * 3, (64,) * 3,
                           lambda p: np.clip(1 - (p * p).sum(-1), 0, None) ** 2)
    taus = np.linspace(1e-3, 1 - 1e-3, 80)
    rep = fx.coarea_check(
        H1, f, taus,
        lambda tau: rg.EuclideanBall(center=(0.0, 0.0, 0.0),
                                     radius=math.sqrt(1 - math.sqrt(tau))))
    assert rep.rel_gap <= 3e-2


def test_coarea_rejects_bad_tau_grid():
    f = grid_from_callable(((-1.0, 1.0),) * 2, (20, 20),
                           lambda p: np.zeros(p.shape[:-1]))
    mk = lambda tau: rg.EuclideanBall(center=(0.0, 0.0), radius=1 - tau)
    with pytest.raises(ValueError):
        fx.coarea_check(E2, f, [0.5], mk)
    with pytest.raises(ValueError):
        fx.coarea_check(E2, f, [0.5, 0.4], mk)


# ---------------------------------------------------------------------------
# mollified ball: grid lhs vs polar reference (shared criterion shape)
# ---------------------------------------------------------------------------

def test_mollified_ball_gradient_mass_matches_polar_reference():
    ref = h1_radial_grad_l1(ball_dprofile, BALL_R + BALL_EPS)
    assert ref == pytest.approx(5.74467823, rel=1e-6)  # frozen reference
    lhs = l1_norm(horizontal_gradient(H1, mollified_ball()))
    assert lhs == pytest.approx(ref, rel=1e-2)
