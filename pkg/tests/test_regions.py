import numpy as np
import pytest
from scipy.integrate import quad

from carnotheat import regions as rg
from carnotheat.groups import group_from_preset
from carnotheat.semigroup import GridFunction

H1 = group_from_preset("heisenberg:1")
E2 = group_from_preset("euclidean:2")
E3 = group_from_preset("euclidean:3")

BALL = rg.EuclideanBall(center=(0.0, 0.0, 0.0), radius=1.0)
HALF = rg.VerticalHalfspace(nu=(1.0, 0.0))


def h1_ball_perimeter(R):
    # P_G(B_R) = R^2 int sin^2(th) sqrt(1 + R^2 cos^2(th)/4) dth dph
    val, _ = quad(lambda th: np.sin(th) ** 2
                  * np.sqrt(1 + R * R * np.cos(th) ** 2 / 4), 0, np.pi)
    return 2 * np.pi * R * R * val


# ---------------------------------------------------------------------------
# membership / indicators
# ---------------------------------------------------------------------------

def test_membership_variants():
    pts = np.array([[0.5, 0.0, 3.0], [-0.1, 0.0, 0.0], [0.0, 0.0, -2.0]])
    assert rg.membership(H1, HALF, pts).tolist() == [True, False, True]
    assert rg.membership(H1, BALL, pts).tolist() == [False, True, False]
    ls = rg.SmoothLevelSet(phi=lambda p: np.sum(p * p, -1) - 1.0,
                           grad_phi=lambda p: 2 * p, anchor=(0, 0, 0))
    assert rg.membership(H1, ls, pts).tolist() == [False, True, False]
    with pytest.raises(TypeError):
        rg.membership(H1, "ball", pts)


def test_halfspace_normal_validation():
    with pytest.raises(ValueError, match="2-vector"):
        rg.membership(H1, rg.VerticalHalfspace(nu=(1.0, 0.0, 0.0)), np.zeros((1, 3)))
    with pytest.raises(ValueError, match="nonzero"):
        rg.membership(H1, rg.VerticalHalfspace(nu=(0.0, 0.0)), np.zeros((1, 3)))


def test_indicator_grid_volumes():
    sharp = rg.indicator_grid(H1, BALL, ((-1.5, 1.5),) * 3, (40,) * 3)
    anti = rg.indicator_grid(H1, BALL, ((-1.5, 1.5),) * 3, (40,) * 3, antialias=4)
    vol = 4 * np.pi / 3
    assert abs(sharp.integral() - vol) < 2e-2
    assert abs(anti.integral() - vol) < 2e-3
    assert anti.values.min() >= 0 and anti.values.max() <= 1


# ---------------------------------------------------------------------------
# perimeter
# ---------------------------------------------------------------------------

def test_halfspace_window_perimeter_exact():
    # |v| = 1 on a vertical hyperplane, so P_G restricted to the window is
    # its Euclidean area
    assert rg.perimeter_smooth(H1, HALF) == pytest.approx(4.0, rel=1e-12)
    wide = rg.VerticalHalfspace(nu=(0.6, 0.8), window=((-2, 2), (0, 1)))
    assert rg.perimeter_smooth(H1, wide) == pytest.approx(4.0, rel=1e-12)
    bad = rg.VerticalHalfspace(nu=(1, 0), window=((-1, 1),))
    with pytest.raises(ValueError, match="window"):
        rg.perimeter_smooth(H1, bad)


def test_euclidean_ball_perimeters():
    assert rg.perimeter_smooth(E3, rg.EuclideanBall((0, 0, 0), 0.8)) == \
        pytest.approx(4 * np.pi * 0.64, rel=1e-4)
    assert rg.perimeter_smooth(E2, rg.EuclideanBall((0.2, 0.1), 0.5)) == \
        pytest.approx(np.pi, rel=1e-12)


def test_h1_ball_matches_reduction():
    assert rg.perimeter_smooth(H1, BALL) == pytest.approx(
        h1_ball_perimeter(1.0), rel=1e-10)
    assert rg.perimeter_smooth(H1, rg.EuclideanBall((0, 0, 0), 1.2)) == \
        pytest.approx(h1_ball_perimeter(1.2), rel=1e-10)


def test_offcenter_ball_self_convergence():
    b = rg.EuclideanBall(center=(0.3, -0.2, 0.4), radius=1.2)
    p1 = rg.perimeter_smooth(H1, b, refine=1)
    p2 = rg.perimeter_smooth(H1, b, refine=2)
    assert abs(p1 - p2) / p2 < 1e-3


def test_level_set_sphere_agrees_with_ball():
    ls = rg.SmoothLevelSet(phi=lambda p: np.sum(p * p, -1) - 1.0,
                           grad_phi=lambda p: 2 * p, anchor=(0, 0, 0))
    assert rg.perimeter_smooth(H1, ls, refine=2) == pytest.approx(
        rg.perimeter_smooth(H1, BALL), rel=1e-3)


def test_level_set_validation():
    out = rg.SmoothLevelSet(phi=lambda p: np.sum(p * p, -1) - 1.0,
                            grad_phi=lambda p: 2 * p, anchor=(3.0, 0, 0))
    with pytest.raises(ValueError, match="anchor"):
        rg.perimeter_smooth(H1, out)
    huge = rg.SmoothLevelSet(phi=lambda p: np.sum(p * p, -1) - 400.0,
                             grad_phi=lambda p: 2 * p, anchor=(0, 0, 0))
    with pytest.raises(ValueError, match="rmax"):
        rg.perimeter_smooth(H1, huge)


def test_weighted_perimeter_constant_weight():
    got = rg.perimeter_smooth(H1, BALL, weight=lambda nu: np.full(len(nu), 2.0))
    assert got == pytest.approx(2 * rg.perimeter_smooth(H1, BALL), rel=1e-12)


# ---------------------------------------------------------------------------
# normals and blow-up
# ---------------------------------------------------------------------------

def test_horizontal_normal_values():
    # equatorial point of the unit ball: v = q(x0) n_E with inward n_E
    v = rg.horizontal_normal(H1, BALL, (1.0, 0.0, 0.0))
    assert np.allclose(v, [-1.0, 0.0], atol=1e-14)
    # pole: characteristic (v = 0)
    v = rg.horizontal_normal(H1, BALL, (0.0, 0.0, 1.0))
    assert np.linalg.norm(v) < 1e-14


def test_blowup_halfspace_fixed_point():
    for r in (0.4, 0.2, 0.1):
        assert rg.blowup_distance(H1, HALF, (0.0, 0.3, -0.5), r) == 0.0
    off = rg.VerticalHalfspace(nu=(0.6, 0.8), offset=0.37)
    x0 = (0.37 * 0.6, 0.37 * 0.8, 0.9)
    assert rg.blowup_distance(H1, off, x0, 0.25) == 0.0


def test_blowup_ball_strictly_decreasing():
    d = [rg.blowup_distance(H1, BALL, (1.0, 0.0, 0.0), r) for r in (0.4, 0.2, 0.1)]
    assert d[0] > d[1] > d[2] > 0


def test_blowup_rejects_characteristic_and_bad_scale():
    with pytest.raises(ValueError, match="characteristic"):
        rg.blowup_distance(H1, BALL, (0.0, 0.0, 1.0), 0.2)
    with pytest.raises(ValueError, match="positive"):
        rg.blowup_distance(H1, BALL, (1.0, 0.0, 0.0), 0.0)


def test_model_halfspace_covers_half_window():
    model = rg.halfspace_from_horizontal_normal(H1, (0.6, 0.8))
    g = GridFunction(((-1, 1),) * 3, np.zeros((32,) * 3))
    assert rg.membership(H1, model, g.mesh()).mean() == 0.5
