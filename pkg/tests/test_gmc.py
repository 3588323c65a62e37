import math

import numpy as np
import pytest

from bordered_lcft.gmc import (GmcError, ModeGrid, bulk_measure, boundary_measure,
                               cauchy_differences, chaos_weights, default_modes, eps_ladder,
                               field_level, ladder_masses, liouville_q, measure_change,
                               negative_moment, regularize_field)
from bordered_lcft.green import GreenKernel, circle_average_variance
from bordered_lcft.parallel import mean_and_stderr
from bordered_lcft.spectral import sample_gff
from bordered_lcft.surfaces import build_surface, constant_factor

CYL = build_surface("flat_cylinder", 1.0)
HEMI = build_surface("hemisphere")


@pytest.fixture(scope="module")
def cyl_field():
    grid = ModeGrid(CYL, default_modes(CYL, 1 / 16))
    sample = sample_gff(grid.basis, 11, size=64)
    return grid, regularize_field(sample, 1 / 16, grid=grid)


def test_q_values():
    assert liouville_q(1.0) == 2.5 and liouville_q(2.0) == 2.0


def test_zero_field_gives_zero_average():
    grid = ModeGrid(CYL, 512)
    lv = field_level(grid, 0.1)
    b, d = lv.evaluate(grid.zeta(np.zeros((1, grid.size))))
    assert not b.any() and not d.any()


def test_small_gamma_recovers_volume():
    vals = np.random.default_rng(0).normal(size=(3, 5))
    cells = np.linspace(0.1, 0.5, 5)
    np.testing.assert_allclose(chaos_weights(vals, cells, 1e-9, 0.1, "bulk"), cells[None] + 0 * vals,
                               rtol=1e-7)
    np.testing.assert_allclose(chaos_weights(vals, cells, 1e-9, 0.1, "boundary"),
                               cells[None] + 0 * vals, rtol=1e-7)


def test_measures_positive_and_additive(cyl_field):
    _, f = cyl_field
    for m in (bulk_measure(f, 1.0), boundary_measure(f, 1.0), bulk_measure(f, 2.0)):
        assert np.all(m.weights > 0)
        n = m.weights.shape[1]
        a, b = np.arange(n // 2), np.arange(n // 2, n)
        np.testing.assert_allclose(m.mass_of(a) + m.mass_of(b), m.total_mass(), rtol=1e-12)
        assert np.all(m.mass_of([]) == 0)
    with pytest.raises(GmcError):
        bulk_measure(f, 2.5)


def test_variance_tables_against_kernel():
    """Truncated tables sit just below the exact circle-average variances,
    by at most the mode tail 2/(pi eps sqrt(lambda_max)); boundary nodes
    carry twice the bulk deficit and gain 2 ln 2 per halving."""
    k = GreenKernel(CYL, "neumann")
    grid = ModeGrid(CYL, default_modes(CYL, 1 / 64))
    lam = grid.basis.eigenvalues[-1]
    exact_bnd = []
    for e in (1 / 16, 1 / 32):
        vb, vd = grid.row_variance(grid.multipliers(np.array([0.5, 0.0]), e))
        xb = circle_average_variance(k, np.array([0.5, 0.3]), e)
        xd = circle_average_variance(k, np.array([0.0, 0.3]), e)
        tail = 2 / (math.pi * e * math.sqrt(lam))
        assert 0 < xb - vb < tail
        assert (xd - vd) / (xb - vb) == pytest.approx(2.0, rel=0.05)
        exact_bnd.append(xd)
    assert exact_bnd[1] - exact_bnd[0] == pytest.approx(2 * math.log(2), rel=0.02)


@pytest.mark.parametrize("surface", [CYL, HEMI], ids=["cylinder", "hemisphere"])
def test_expected_masses_on_ladder(surface):
    eps = eps_ladder(1 / 8, 3)
    grid = ModeGrid(surface, default_modes(surface, float(eps[-1])))
    res = ladder_masses(grid, eps, 1.0, 1000, 2)
    for key in ("bulk", "boundary"):
        m, e = mean_and_stderr(res[key])
        assert np.all(np.abs(m - res[f"expected_{key}"]) < 3 * e)
    d, _ = cauchy_differences(res["interior"])
    assert np.all(np.diff(d) < 0)


def test_measure_change_constant_factor(cyl_field):
    _, f = cyl_field
    a, g = 0.4, 1.0
    m = bulk_measure(f, g)
    out = measure_change(m, constant_factor(CYL, a), np.zeros(m.weights.shape[0]))
    ratio = out.total_mass() / m.total_mass()
    np.testing.assert_allclose(ratio, math.exp(g * liouville_q(g) * a / 2), rtol=1e-12)
    ident = measure_change(m, constant_factor(CYL, 0.0), np.zeros(m.weights.shape[0]))
    np.testing.assert_array_equal(ident.weights, m.weights)


def test_negative_moment_limits():
    masses = np.array([2.0, 3.0, 4.0])
    assert negative_moment(masses, 1e-12)[0] == pytest.approx(1.0)
    assert negative_moment(masses, 1.0)[0] < negative_moment(masses, 0.5)[0]
    small = np.array([0.2, 0.3])
    assert negative_moment(small, 1.0)[0] > negative_moment(small, 0.5)[0]
    with pytest.raises(GmcError):
        negative_moment(masses, 0.0)


def test_negative_moment_stable_on_ladder():
    eps = eps_ladder(1 / 8, 3)
    grid = ModeGrid(CYL, default_modes(CYL, float(eps[-1])))
    bulk = ladder_masses(grid, eps, 1.0, 1000, 4)["bulk"]
    inv = bulk ** -0.5
    for i in range(len(eps) - 1):
        d, e = mean_and_stderr(inv[:, i + 1] - inv[:, i])
        assert abs(d) < 3 * e + 1e-12


def test_critical_masses_positive():
    eps = eps_ladder(1 / 8, 3)
    grid = ModeGrid(CYL, default_modes(CYL, float(eps[-1])))
    res = ladder_masses(grid, eps, 2.0, 200, 5)
    assert np.all(res["bulk"] > 0) and np.all(res["boundary"] > 0)
    assert np.all(np.isfinite(res["bulk"]))
    assert np.all(np.std(res["bulk"], axis=0) > 0)
