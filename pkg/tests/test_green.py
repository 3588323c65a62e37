import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from bordered_lcft.green import (GreenError, GreenKernel, circle_variance_ladder,
                                 cylinder_test_functions, extrapolate_w, green_bordered,
                                 green_double, green_identity_residual,
                                 normal_derivative_residual, pde_residual,
                                 zero_average_residual)
from bordered_lcft.surfaces import build_surface, constant_factor, cylinder_cosine_factor

CYL = build_surface("flat_cylinder", 1.0)
HEMI = build_surface("hemisphere")


@pytest.mark.parametrize("surface", [CYL, HEMI], ids=["cylinder", "hemisphere"])
@pytest.mark.parametrize("cond", ["closed", "neumann", "dirichlet"])
def test_symmetric(surface, cond):
    rng = np.random.default_rng(0)
    hi = 1.0 if surface is CYL else math.pi / 2
    x = np.stack([rng.uniform(0.05, hi - 0.05, 30), rng.uniform(0, 1, 30)], -1)
    y = np.stack([rng.uniform(0.05, hi - 0.05, 30), rng.uniform(0, 1, 30)], -1)
    k = GreenKernel(surface, cond)
    np.testing.assert_allclose(k(x, y), k(y, x), atol=1e-12)


def test_closed_form_matches_eigen_sum():
    x = np.array([[0.3, 0.1], [0.6, 0.7]])
    y = np.array([[0.5, 0.4], [0.2, 0.2]])
    exact = green_double(CYL, x, y)
    approx = green_double(CYL, x, y, mode="eigen_sum", max_eigenvalue=4e4)
    np.testing.assert_allclose(approx, exact, atol=2e-3)


@pytest.mark.parametrize("surface,x", [(CYL, [0.4, 0.3]), (HEMI, [0.8, 1.0])])
def test_log_singularity(surface, x):
    k = GreenKernel(surface, "neumann")
    x = np.array(x)
    vals = []
    for d in (1e-4, 1e-3, 1e-2, 1e-1):
        y = x + np.array([d, 0.0]) if surface is CYL else x + np.array([d, 0.0])
        dist = k.singular_distance(x, y)
        vals.append(float(k(x, y) + math.log(dist) / (2 * math.pi)))
    assert max(vals) - min(vals) < 0.05
    assert abs(vals[0] - vals[1]) < 1e-4


def test_dirichlet_vanishes_on_boundary():
    for s, y in ((CYL, [0.0, 0.3]), (CYL, [1.0, 0.8]), (HEMI, [math.pi / 2, 2.0])):
        assert abs(float(green_bordered(s, "dirichlet", [0.3, 0.5], y))) < 1e-12


def test_boundary_value_is_twice_double_kernel():
    s = np.array([0.0, 0.25])
    y = np.array([0.4, 0.7])
    assert float(green_bordered(CYL, "neumann", s, y)) == pytest.approx(
        2 * float(green_double(CYL, s, y)), abs=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0, 1), st.floats(0.05, 0.95), st.floats(0, 1),
       st.floats(-3, 3))
def test_rotation_invariance(t1, y1, t2, y2, c):
    k = GreenKernel(CYL, "neumann")
    x, y = np.array([t1, y1]), np.array([t2, y2])
    if np.hypot(t1 - t2, min(abs(y1 - y2), 1 - abs(y1 - y2))) < 1e-6:
        return
    r = np.array([0.0, c])
    assert abs(float(k(x + r, y + r)) - float(k(x, y))) < 1e-12


@pytest.mark.parametrize("surface,y,pts,bnd", [
    (CYL, [0.4, 0.3], [[0.2, 0.7], [0.7, 0.1], [0.55, 0.55]], [[0.0, 0.2], [1.0, 0.6]]),
    (HEMI, [0.8, 1.0], [[0.4, 2.5], [1.2, 4.0], [0.6, 0.2]], [[math.pi / 2, 0.5],
                                                             [math.pi / 2, 3.0]]),
])
def test_defining_system(surface, y, pts, bnd):
    k = GreenKernel(surface, "neumann")
    assert pde_residual(k, y, np.array(pts)) < 1e-5
    assert normal_derivative_residual(k, y, np.array(bnd)) < 1e-5
    assert zero_average_residual(k, np.array(pts[0])) < 1e-5


def test_green_identity():
    k = GreenKernel(CYL, "neumann")
    tests = {t.name: t for t in cylinder_test_functions(1.0)}
    pts = np.array([[0.3, 0.2], [0.8, 0.9]])
    assert green_identity_residual(k, tests["constant"], pts) < 1e-14
    assert green_identity_residual(k, tests["cos(2 pi y)"], pts) < 1e-6
    assert green_identity_residual(k, tests["cos(pi t/T)"], pts) < 1e-6
    with pytest.raises(GreenError):
        green_identity_residual(GreenKernel(HEMI, "neumann"), tests["constant"], pts)


def test_conformal_identity_cases():
    x, y = np.array([0.3, 0.4]), np.array([0.6, 0.1])
    base = float(GreenKernel(CYL, "neumann")(x, y))
    for phi in (constant_factor(CYL, 0.0), constant_factor(CYL, 1.3)):
        assert float(GreenKernel(CYL, "neumann", phi=phi)(x, y)) == pytest.approx(base, abs=1e-10)


def _weighted_integral(k0, phi, x):
    """int G0(x, y) e^{phi(y)} dy by nested adaptive quadrature."""
    def inner(t):
        f = lambda yy: float(k0(x, np.array([t, yy]))) * math.exp(float(phi(np.array([t, yy]))))
        return integrate.quad(f, 0, 1, points=[x[1]], epsabs=1e-12, limit=200)[0]
    return integrate.quad(inner, 0, 1, points=[x[0]], epsabs=1e-12, limit=200)[0]


def test_conformal_mean_subtraction():
    """G_g - G0 = -a(x) - a(y) + c with a(x) the g-average of G0(x, .)."""
    phi = cylinder_cosine_factor(CYL, 0.3, 1, "y")
    k0, kg = GreenKernel(CYL, "neumann"), GreenKernel(CYL, "neumann", phi=phi)
    x1, x2, y = np.array([0.3, 0.2]), np.array([0.7, 0.55]), np.array([0.5, 0.9])
    lhs = (float(kg(x1, y) - k0(x1, y))) - (float(kg(x2, y) - k0(x2, y)))
    vg = phi.volume()
    rhs = -(_weighted_integral(k0, phi, x1) - _weighted_integral(k0, phi, x2)) / vg
    assert lhs == pytest.approx(rhs, abs=1e-8)


@pytest.mark.parametrize("surface,x", [(CYL, [0.5, 0.3]), (HEMI, [0.7, 1.0])])
def test_circle_average_increments(surface, x):
    k = GreenKernel(surface, "neumann")
    eps, var = circle_variance_ladder(k, np.array(x), 1 / 16, 4)
    inc = np.diff(var)
    np.testing.assert_allclose(inc, math.log(2), rtol=0.02)
    assert math.isfinite(extrapolate_w(eps, var))
