import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bordered_lcft.surfaces import (SurfaceError, arc_fraction, build_surface, constant_factor,
                                    cylinder_cosine_factor, double_distance,
                                    geodesic_circle_sample, involution_map, make_point,
                                    on_boundary)


def test_model_constants():
    c = build_surface("flat_cylinder", 1.0)
    assert (c.euler_char, c.volume, c.boundary_length) == (0, 1.0, 2.0)
    assert c.scalar_curvature == 0 and c.geodesic_curvature == 0
    h = build_surface("hemisphere")
    assert h.euler_char == 1 and h.scalar_curvature == 2 and h.geodesic_curvature == 0
    assert h.volume == pytest.approx(2 * math.pi, abs=1e-15)
    assert build_surface("half_plane_dozz").euler_char == 1


def test_bad_surfaces():
    with pytest.raises(SurfaceError):
        build_surface("torus")
    with pytest.raises(SurfaceError):
        build_surface("flat_cylinder", -1.0)


def test_involution_examples():
    c = build_surface("flat_cylinder", 1.0)
    np.testing.assert_allclose(involution_map(c, [0.3, 0.7]), [1.7, 0.7])
    np.testing.assert_allclose(involution_map(c, [0.0, 0.4]), [0.0, 0.4])
    h = build_surface("hemisphere")
    np.testing.assert_allclose(involution_map(h, [0.0, 1.0]), [math.pi, 1.0])


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 2), st.floats(0, 1), st.floats(0, 2), st.floats(0, 1))
def test_cylinder_involution_is_isometry(t1, y1, t2, y2):
    c = build_surface("flat_cylinder", 1.0)
    p, q = np.array([t1, y1]), np.array([t2, y2])
    d0 = double_distance(c, p, q)
    d1 = double_distance(c, involution_map(c, p), involution_map(c, q))
    assert abs(d0 - d1) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.floats(0, math.pi), st.floats(0, 2 * math.pi), st.floats(0, math.pi),
       st.floats(0, 2 * math.pi))
def test_sphere_involution_is_isometry(a1, b1, a2, b2):
    h = build_surface("hemisphere")
    p, q = np.array([a1, b1]), np.array([a2, b2])
    d0 = double_distance(h, p, q)
    d1 = double_distance(h, involution_map(h, p), involution_map(h, q))
    assert abs(d0 - d1) < 1e-12


def test_full_circle_in_interior():
    c = build_surface("flat_cylinder", 1.0)
    pts, w = geodesic_circle_sample(c, [0.5, 0.2], 0.1)
    np.testing.assert_allclose(w, 1 / 32)
    np.testing.assert_allclose(np.hypot(pts[:, 0] - 0.5, (pts[:, 1] - 0.2 + 0.5) % 1 - 0.5), 0.1)


def test_boundary_point_keeps_half_circle():
    c = build_surface("flat_cylinder", 1.0)
    assert arc_fraction(c, [0.0, 0.3], 0.1) == pytest.approx(0.5)
    h = build_surface("hemisphere")
    assert arc_fraction(h, [math.pi / 2, 0.3], 0.1) == pytest.approx(0.5)


@pytest.mark.parametrize("d", [0.02, 0.05, 0.08])
def test_clipped_arc_matches_angle_count(d):
    # independent oracle: fraction of a fine angle grid staying inside t >= 0
    eps = 0.1
    theta = (np.arange(1_000_000) + 0.5) / 1_000_000 * 2 * math.pi
    expected = np.mean(d + eps * np.cos(theta) >= 0)
    c = build_surface("flat_cylinder", 1.0)
    frac = float(arc_fraction(c, [d, 0.5], eps))
    assert 0.5 < frac < 1
    assert frac == pytest.approx(expected, abs=1e-5)
    pts, w = geodesic_circle_sample(c, [d, 0.5], eps)
    assert np.all(pts[:, 0] >= 0) and np.all(w >= 0) and w.sum() == pytest.approx(1.0)


def test_hemisphere_clipped_points_stay_inside():
    h = build_surface("hemisphere")
    pts, w = geodesic_circle_sample(h, [1.5, 0.4], 0.2)
    assert np.all(pts[:, 0] <= math.pi / 2 + 1e-12)
    np.testing.assert_allclose(double_distance(h, pts, np.array([1.5, 0.4])), 0.2, atol=1e-12)
    assert w.sum() == pytest.approx(1.0)


def test_circle_radius_checked():
    c = build_surface("flat_cylinder", 1.0)
    with pytest.raises(SurfaceError):
        geodesic_circle_sample(c, [0.5, 0.5], 0.9)
    with pytest.raises(SurfaceError):
        make_point(c, [1.5, 0.0])
    assert make_point(c, [1.0, 0.2]).on_boundary
    assert on_boundary(c, np.array([0.0, 0.1]))


def test_constant_factor_integrals():
    c = build_surface("flat_cylinder", 1.0)
    phi = constant_factor(c, 0.7)
    assert phi.gradient_norm_integral == 0.0 and phi.curvature_integral == 0.0
    assert phi.volume() == pytest.approx(math.exp(0.7))


def test_cosine_factor_integrals():
    c = build_surface("flat_cylinder", 1.0)
    phi = cylinder_cosine_factor(c, 0.3, 1, "y")
    # int |d phi|^2 = a^2 w^2 / 2 over the unit square
    assert phi.gradient_norm_integral == pytest.approx(0.09 * (2 * math.pi) ** 2 / 2, rel=1e-10)
    assert phi.curvature_integral == 0.0
