"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import json
import math
import re

import numpy as np
import pytest

from bordered_lcft.cli import main
from bordered_lcft.fusion import FusionCase, fusion_scan, geometric_ladder
from bordered_lcft.gmc import ModeGrid, cauchy_differences, default_modes, eps_ladder, ladder_masses
from bordered_lcft.green import (GreenKernel, circle_average_variance, cylinder_test_functions,
                                 green_bordered, green_identity_residual,
                                 normal_derivative_residual, pde_residual,
                                 zero_average_residual)
from bordered_lcft.lcft import (InsertionSet, LiouvilleParams, McConfig, anomaly_check,
                                correlation_estimate, scaling_residual, seiberg_check,
                                zero_mode_closed_forms, zero_mode_integral)
from bordered_lcft.markov import CutSpec, markov_covariance_residual, sampled_twin
from bordered_lcft.parallel import mean_and_stderr
from bordered_lcft.spectral import build_basis, weyl_prediction, weyl_slope
from bordered_lcft.surfaces import build_surface, cylinder_cosine_factor

CYL = build_surface("flat_cylinder", 1.0)
HEMI = build_surface("hemisphere")
MODELS = {"cylinder": CYL, "hemisphere": HEMI}


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def _interior(surface, n, seed):
    rng = np.random.default_rng(seed)
    if surface is CYL:
        return np.stack([rng.uniform(0.05, 0.95, n), rng.uniform(0, 1, n)], -1)
    return np.stack([rng.uniform(0.05, 1.5, n), rng.uniform(0, 2 * math.pi, n)], -1)


def test_01_doubling_identity(report):
    worst = {}
    for name, s in MODELS.items():
        x, y = _interior(s, 20, 1), _interior(s, 20, 2)
        X = np.repeat(x[:, None], 20, 1)
        Y = np.repeat(y[None], 20, 0)
        assembled = green_bordered(s, "neumann", X, Y, mode="eigen_sum", max_eigenvalue=400.0)
        direct = GreenKernel(s, "neumann", "eigen_sum", max_eigenvalue=400.0)(X, Y)
        worst[name] = float(np.max(np.abs(assembled - direct)))
    report(1, max(worst.values()) < 1e-10, f"max error {worst} (tol 1e-10)")


def test_02_green_defining_system(report):
    res = {}
    setups = {"cylinder": ([0.4, 0.3], [[0.0, 0.2], [1.0, 0.6], [0.0, 0.9]]),
              "hemisphere": ([0.8, 1.0], [[math.pi / 2, 0.5], [math.pi / 2, 3.0]])}
    for name, s in MODELS.items():
        k = GreenKernel(s, "neumann")
        y, bnd = setups[name]
        pts = _interior(s, 6, 3)
        res[f"{name} pde"] = pde_residual(k, y, pts)
        res[f"{name} normal"] = normal_derivative_residual(k, y, np.array(bnd))
        res[f"{name} average"] = zero_average_residual(k, pts[0])
    tests = {t.name: t for t in cylinder_test_functions(1.0)}
    k = GreenKernel(CYL, "neumann")
    pts = _interior(CYL, 4, 4)
    ident = {n: green_identity_residual(k, tests[n], pts)
             for n in ("cos(2 pi y)", "cos(pi t/T)", "sin(pi t/2T) cos(2 pi y)")}
    ok = max(res.values()) < 1e-5 and max(ident.values()) < 1e-6
    detail = ", ".join(f"{k}={v:.1e}" for k, v in {**res, **ident}.items())
    report(2, ok, detail)


def test_03_weyl_law(report):
    out = {}
    for name, s in MODELS.items():
        b = build_basis(s, "neumann", 2000)
        out[name] = (weyl_slope(b), weyl_prediction(b))
    rel = {n: abs(a / b - 1) for n, (a, b) in out.items()}
    report(3, max(rel.values()) < 0.05,
           ", ".join(f"{n}: slope {a:.4f} vs {b:.4f}" for n, (a, b) in out.items()))


def test_04_circle_average_increments(report):
    eps = 1 / 16 * 0.5 ** np.arange(5)
    worst = 0.0
    for name, s in MODELS.items():
        k = GreenKernel(s, "neumann")
        pts = [[0.5, 0.3], [0.3, 0.7], [0.7, 0.1]] if s is CYL else \
            [[0.5, 1.0], [0.9, 3.0], [0.3, 5.0]]
        for p in pts:
            f = np.array([circle_average_variance(k, np.array(p), e) for e in eps]) + np.log(eps)
            worst = max(worst, float(np.max(np.abs(np.diff(f)))) / math.log(2))
    report(4, worst < 0.02, f"max |increment of E[X^2] + ln eps| / ln 2 = {worst:.2e} (tol 0.02)")


def test_05_gmc_expectations(report):
    eps = eps_ladder(1 / 8, 4)
    zmax, mono, crit = 0.0, True, True
    for name, s in MODELS.items():
        grid = ModeGrid(s, default_modes(s, float(eps[-1])))
        for g in (0.5, 1.0):
            res = ladder_masses(grid, eps, g, 1000, 0)
            for key in ("bulk", "boundary"):
                m, e = mean_and_stderr(res[key])
                zmax = max(zmax, float(np.max(np.abs(m - res[f"expected_{key}"]) / e)))
            d, _ = cauchy_differences(res["interior"])
            mono &= bool(np.all(np.diff(d) < 0))
        if s is CYL:
            res = ladder_masses(grid, eps, 2.0, 500, 1)
            for key in ("bulk", "boundary"):
                v = res[key]
                crit &= bool(np.all(v > 0) and np.all(np.isfinite(v))
                             and np.all(np.std(v, axis=0) > 0))
    report(5, zmax < 3 and mono and crit,
           f"max |z| {zmax:.2f} (<3), Cauchy monotone {mono}, critical positive {crit}")


def test_06_seiberg_truth_table(report):
    g = 1.0
    Q = LiouvilleParams(g).Q
    regimes = {"bulk+boundary": (1.0, 1.0), "bulk": (1.0, 0.0), "boundary": (0.0, 1.0)}
    # one insertion set per violated bound, valid otherwise (cylinder, chi = 0)
    cases = {
        "bound1": InsertionSet.build([], []),
        "bound2": InsertionSet.build([((0.5, 0.5), Q + 0.1)], [((0.0, 0.1), 1.0)]),
        "bound3": InsertionSet.build([((0.5, 0.5), 1.0)], [((0.0, 0.1), Q + 0.1)]),
    }
    required = {"bulk+boundary": {"bound1", "bound2", "bound3"},
                "bulk": {"bound1", "bound2"}, "boundary": {"bound1", "bound3"}}
    rows = []
    for regime, mus in regimes.items():
        p = LiouvilleParams(g, *mus)
        for bound, ins in cases.items():
            got = seiberg_check(ins, p, 0).admissible
            want = bound not in required[regime]
            rows.append(got == want)
    report(6, all(rows) and len(rows) == 9, f"{sum(rows)}/9 regime x bound cases reproduced")


def test_07_zero_mode_quadrature(report):
    worst = 0.0
    A = np.array([0.05, 0.3, 1.0, 4.0, 25.0])
    for g, mus, key in ((1.0, (1.0, 0.0), "bulk_only"), (1.0, (0.0, 1.0), "boundary_only"),
                        (1.7, (2.0, 0.0), "bulk_only"), (0.6, (0.0, 0.5), "boundary_only")):
        p = LiouvilleParams(g, *mus)
        for sbar in (0.05, 0.5, 1.0, 3.3):
            got = zero_mode_integral(A, A, sbar, p)
            want = np.array([zero_mode_closed_forms(a, a, sbar, p)[key] for a in A])
            worst = max(worst, float(np.max(np.abs(got / want - 1))))
    p = LiouvilleParams(1.0, 1.0, 1.0)
    flags = {s: zero_mode_integral(np.ones(1), np.ones(1), s, p) is math.inf
             for s in (-1.0, 0.0, 1e-6, 0.5)}
    # on the cylinder a single bulk weight a gives sbar = a
    gate = {}
    for a in (0.0, 1e-6, 0.5):
        ins = InsertionSet.build([((0.5, 0.5), a)]) if a > 0 else InsertionSet.build()
        gate[a] = correlation_estimate(CYL, p, ins, McConfig(n_samples=16)).diverged
    ok = worst < 1e-8 and flags == {-1.0: True, 0.0: True, 1e-6: False, 0.5: False} and \
        gate == {0.0: True, 1e-6: False, 0.5: False}
    report(7, ok, f"max relative error {worst:.1e} (tol 1e-8); divergence flags {flags}")


def test_08_scaling_relation(report):
    p = LiouvilleParams(1.0, 1.0, 1.0)
    ins = InsertionSet.build([((0.5, 0.5), 1.0)], [((0.0, 0.2), 1.0)])
    r = scaling_residual(CYL, p, ins, McConfig(n_samples=10_000, seed=0))
    z = (r.lhs - r.rhs) / r.stderr
    two = InsertionSet.build([((0.5, 0.0), 1.0), ((0.5, 0.5), 1.0)])
    mc = McConfig(n_samples=2048, seed=1)
    e1 = correlation_estimate(CYL, LiouvilleParams(1.0, 1.0, 0.0), two, mc)
    e2 = correlation_estimate(CYL, LiouvilleParams(1.0, 2.0, 0.0), two, mc)
    sbar = seiberg_check(two, LiouvilleParams(1.0), 0).sbar
    rel = abs(e2.value / e1.value / 2.0 ** (-sbar) - 1)
    report(8, abs(z) < 3 and rel < 1e-12,
           f"lhs {r.lhs:.5f} rhs {r.rhs:.5f} z {z:.2f} (<3); mu-rescaling error {rel:.1e}")


def test_09_conformal_anomaly(report):
    phi = cylinder_cosine_factor(CYL, 0.3, 1, "y")
    ins = InsertionSet.build([((0.5, 0.25), 1.0)])
    chk = anomaly_check(CYL, LiouvilleParams(1.0), ins, phi,
                        McConfig(n_samples=4096, seed=0, eps=1 / 64))
    report(9, abs(chk.z_score) < 3,
           f"ratio {chk.ratio:.5f} +- {chk.stderr:.5f}, z {chk.z_score:.2f} (<3)")


def test_10_markov_decomposition(report):
    cuts = {"circle": CutSpec(CYL, "circle", 0.5), "half-circle": CutSpec(HEMI, "half_circle")}
    resid = {n: markov_covariance_residual(c) for n, c in cuts.items()}
    twin = {n: sampled_twin(c, n_samples=100_000, seed=1).max_z for n, c in cuts.items()}
    ok = max(resid.values()) < 1e-6 and max(twin.values()) < 3
    report(10, ok, f"residuals {', '.join(f'{n} {v:.1e}' for n, v in resid.items())}; "
                   f"twin max |z| {', '.join(f'{n} {v:.2f}' for n, v in twin.items())}")


def test_11_fusion_scan(report):
    p = LiouvilleParams(1.0, 1.0, 0.0)
    d = geometric_ladder()
    cases = [("bulk_bulk", (0.5, 0.5)), ("bulk_reflection", (0.5,)),
             ("boundary_boundary", (0.5, 0.5)), ("bulk_bulk", (0.3, 0.3)),
             ("bulk_bulk", (0.7, 0.7)), ("bulk_bulk", (1.5, 1.5)),
             ("bulk_reflection", (1.4,)), ("boundary_boundary", (1.5, 1.5))]
    scans = [fusion_scan(FusionCase.default(k, w), d, p, 100_000, seed=1) for k, w in cases]
    main_rel = scans[0].relative_error()
    worst = max(s.violation_z for s in scans)
    report(11, main_rel < 0.1 and worst < 3,
           f"bulk-bulk slope {scans[0].slope:.4f} vs -0.25 (rel {main_rel:.3f} < 0.1); "
           f"largest bound violation {worst:.2f} stderr (<3)")


def _strip_time(text: str) -> str:
    return re.sub(r'"wall_time": [^,}]+', '"wall_time": 0', text)


def test_12_reproducibility(report, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[experiment]\ncommand = correlate\n[liouville]\ngamma = 1.0\nmu_boundary = 1\n"
                   "[insertions]\nbulk = 0.5 0.5 1.0\nboundary = 0.0 0.2 1.0\n"
                   "[mc]\nn_samples = 2048\n")
    same = []
    for cmd in (["--config", str(cfg)], ["fusion-scan", "--set", "liouville.gamma=1",
                                         "--set", "mc.n_samples=20000"]):
        texts = []
        for run in ("a", "b"):
            out = tmp_path / f"{cmd[0].strip('-')}-{run}"
            main(cmd + ["--seed", "7", "--workers", "2", "--out", str(out)])
            texts.append({f.name: f.read_text() for f in sorted(out.iterdir())})
        a, b = texts
        same.append(a.keys() == b.keys() and
                    all(_strip_time(a[k]) == _strip_time(b[k]) for k in a))
        same.append(json.loads(next(v for k, v in a.items() if k.endswith(".json")))["seed"] == 7)
    report(12, all(same), "reports and CSV tables byte-identical modulo wall_time")
