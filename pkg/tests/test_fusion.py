import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bordered_lcft.fusion import (FusionCase, FusionError, build_cloud, check_ladder,
                                  dozz_covariance, fusion_predicted_exponent, fusion_scan,
                                  geometric_ladder, gram_matrix)
from bordered_lcft.lcft import LiouvilleParams, blowup_diagnostic
from bordered_lcft.surfaces import build_surface

P1 = LiouvilleParams(1.0, 1.0, 0.0)


def test_covariance_symmetric_and_reduced():
    x, y = np.array([0.3, 0.4]), np.array([-0.2, 0.1])
    assert float(dozz_covariance(x, y)) == float(dozz_covariance(y, x))
    want = -math.log(math.hypot(0.5, 0.3) * math.hypot(0.5, 0.5))
    assert float(dozz_covariance(x, y)) == pytest.approx(want, rel=1e-14)
    far = np.array([3.0, 0.5])
    assert float(dozz_covariance(x, far)) == pytest.approx(
        -math.log(abs(complex(0.3, 0.4) - complex(3, 0.5)) * abs(complex(0.3, 0.4) - complex(3, -0.5)))
        + 2 * math.log(abs(complex(3, 0.5))), rel=1e-14)
    with pytest.raises(FusionError):
        dozz_covariance(x, x)
    with pytest.raises(FusionError):
        dozz_covariance(x, [0.0, -1.0])


def test_gram_matrix_psd():
    rng = np.random.default_rng(0)
    pts = []
    while len(pts) < 50:
        r, a = 2 * math.sqrt(rng.uniform()), rng.uniform(0, math.pi)
        p = np.array([r * math.cos(a), r * math.sin(a)])
        if all(np.hypot(*(p - q)) >= 0.05 for q in pts):
            pts.append(p)
    lam = np.linalg.eigvalsh(gram_matrix(np.array(pts), 0.02))
    assert lam.min() > -1e-9


def test_predicted_examples():
    assert fusion_predicted_exponent(FusionCase.default("bulk_bulk", (0.5, 0.5)), P1) == \
        pytest.approx(-0.25)
    assert fusion_predicted_exponent(FusionCase.default("bulk_bulk", (0.7, 0.0)), P1) == 0.0
    # cap at Delta_Q = Q^2/4 once the weights add past Q
    Q = P1.Q
    got = fusion_predicted_exponent(FusionCase.default("bulk_bulk", (1.5, 1.5)), P1)
    d15 = 0.75 * (Q - 0.75)
    assert got == pytest.approx(2 * (Q * Q / 4 - 2 * d15))


@given(st.floats(0, 3), st.floats(0, 3), st.floats(0.2, 2.0),
       st.sampled_from(["bulk_bulk", "boundary_boundary"]))
def test_exponent_symmetric(a, b, g, kind):
    p = LiouvilleParams(g)
    e1 = fusion_predicted_exponent(FusionCase.default(kind, (a, b)), p)
    e2 = fusion_predicted_exponent(FusionCase.default(kind, (b, a)), p)
    assert e1 == e2


def test_case_validation():
    with pytest.raises(FusionError):
        FusionCase("bulk_boundary", (0.5,))
    with pytest.raises(FusionError):
        FusionCase("bulk_reflection", (0.5, 0.5))


def test_ladder_checks():
    d = geometric_ladder(0.08, 4)
    np.testing.assert_allclose(d, [0.08, 0.04, 0.02, 0.01])
    check_ladder(d, 1e-3, 0.15)
    for bad in ([0.08, 0.08, 0.04], [0.01, 0.02, 0.04], [0.08, 0.04, 0.01], [0.08, 0.04],
                [0.3, 0.15, 0.075]):
        with pytest.raises(FusionError):
            check_ladder(bad, 1e-3, 0.15)
    with pytest.raises(FusionError):
        check_ladder([0.008, 0.004, 0.002, 0.001], 1e-3, 0.15)


def test_node_cloud_psd():
    cloud = build_cloud(FusionCase.default("bulk_bulk"), 1.0, 1e-3)
    assert np.all(cloud.mass > 0) and np.all(cloud.radii > 0)


def test_scan_is_reproducible_and_rejects_boundary_mu():
    case = FusionCase.default("bulk_bulk")
    d = geometric_ladder()
    a = fusion_scan(case, d, P1, 2000, seed=2)
    b = fusion_scan(case, d, P1, 2000, seed=2, workers=2)
    np.testing.assert_array_equal(a.statistic, b.statistic)
    with pytest.raises(FusionError):
        fusion_scan(case, d, LiouvilleParams(1.0, 1.0, 1.0), 100)


def test_weight_monotonicity():
    d = geometric_ladder()
    scans = [fusion_scan(FusionCase.default("bulk_bulk", (w, w)), d, P1, 4000, seed=1)
             for w in (0.3, 0.5, 0.7)]
    first = [s.statistic[0] for s in scans]
    assert first[0] > first[1] > first[2]
    slopes = [s.slope for s in scans]
    assert slopes[0] > slopes[1] > slopes[2]
    assert not any(s.violated for s in scans)


def test_scan_outputs(tmp_path):
    r = fusion_scan(FusionCase.default("boundary_boundary"), geometric_ladder(), P1, 2000)
    r.to_csv(tmp_path / "scan.csv")
    lines = (tmp_path / "scan.csv").read_text().splitlines()
    assert lines[0] == "distance,statistic,stderr" and len(lines) == 6
    assert set(r.summary()) >= {"slope", "predicted", "violation_z"}


def test_boundary_insertion_threshold():
    """Boundary weight beta < Q: tilted mass saturates; beta > Q: it grows."""
    cyl = build_surface("flat_cylinder", 1.0)
    eps = [1 / 8, 1 / 16, 1 / 32]
    lo = blowup_diagnostic(cyl, 2.0, 1.0, (0.0, 0.5), eps, 64, 1, boundary=True)
    hi = blowup_diagnostic(cyl, 3.5, 1.0, (0.0, 0.5), eps, 64, 1, boundary=True)
    assert hi[-1] / hi[0] > 2 * lo[-1] / lo[0]
    assert np.diff(lo)[1] < np.diff(lo)[0]
