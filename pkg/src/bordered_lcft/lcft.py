"""Liouville correlation functions on the compact bordered models.

The estimator follows the Girsanov reduction. For the regularised field
at scale eps, the vertex insertions and curvature terms form a single
Gaussian linear functional L of the field; with C = sum_a p_a ln eps +
Var(L)/2 and H = Cov(L, X) the correlator is

    e^C * E[ int_R e^{sbar c} exp(-mu e^{gamma c} A - mu_b e^{gamma c/2} Lb) dc ],

where A and Lb are the chaos masses of X + H. Every covariance is computed
from the same row vectors that generate the samples, so the reduction is
exact at finite eps and truncation, not only in the limit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .gmc import (FieldLevel, ModeGrid, chaos_weights, critical_factor, default_modes,
                  field_level, liouville_q)
from .green import GreenKernel
from .parallel import DEFAULT_CHUNK, map_chunks, mean_and_stderr
from .surfaces import (ConformalFactor, SurfaceModel, _as_points, boundary_quadrature,
                       chart_quadrature, distance_to_boundary, double_distance, leggauss,
                       on_boundary)


class LcftError(ValueError):
    pass


# --- parameters and insertions -------------------------------------------------

@dataclass(frozen=True)
class LiouvilleParams:
    gamma: float
    mu: float = 1.0
    mu_boundary: float = 0.0

    def __post_init__(self):
        if not 0 < self.gamma <= 2:
            raise LcftError(f"gamma must lie in (0, 2], got {self.gamma}")
        if self.mu < 0 or self.mu_boundary < 0:
            raise LcftError("cosmological constants must be nonnegative")
        if self.mu == 0 and self.mu_boundary == 0:
            raise LcftError("mu = mu_boundary = 0 is not renormalizable")

    @property
    def Q(self) -> float:
        return liouville_q(self.gamma)

    @property
    def central_charge(self) -> float:
        return 1.0 + 6.0 * self.Q ** 2


def conformal_weight(alpha, Q: float):
    return 0.5 * np.asarray(alpha) * (Q - 0.5 * np.asarray(alpha))


@dataclass(frozen=True)
class InsertionSet:
    """Bulk points with weights alpha and boundary points with weights beta."""
    bulk: tuple = ()
    boundary: tuple = ()

    @staticmethod
    def build(bulk=(), boundary=()) -> "InsertionSet":
        b = tuple((tuple(map(float, p)), float(a)) for p, a in bulk)
        d = tuple((tuple(map(float, p)), float(a)) for p, a in boundary)
        return InsertionSet(b, d)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([a for _, a in self.bulk], dtype=float)

    @property
    def betas(self) -> np.ndarray:
        return np.array([b for _, b in self.boundary], dtype=float)

    def bulk_points(self) -> np.ndarray:
        return np.array([p for p, _ in self.bulk], dtype=float).reshape(-1, 2)

    def boundary_points(self) -> np.ndarray:
        return np.array([p for p, _ in self.boundary], dtype=float).reshape(-1, 2)

    def canonical(self) -> "InsertionSet":
        """Sorted copy; estimates depend on the set, not the listing order."""
        return InsertionSet(tuple(sorted(self.bulk)), tuple(sorted(self.boundary)))

    def validate(self, surface: SurfaceModel) -> None:
        bp = self.bulk_points()
        if bp.size and np.any(distance_to_boundary(surface, bp) <= 0):
            raise LcftError("bulk insertions must lie strictly inside the surface")
        sp = self.boundary_points()
        if sp.size and not np.all(on_boundary(surface, sp, tol=1e-9)):
            raise LcftError("boundary insertions must lie on the boundary")
        pts = [p for p, _ in self.bulk] + [p for p, _ in self.boundary]
        if len(set(pts)) != len(pts):
            raise LcftError("insertion points must be pairwise distinct")


# --- Seiberg bounds -----------------------------------------------------------

@dataclass(frozen=True)
class SeibergReport:
    regime: str
    bound1: bool
    bound2: tuple
    bound3: tuple
    admissible: bool
    sbar: float

    def violations(self) -> list[str]:
        out = []
        if not self.bound1:
            out.append("bound1: sum(alpha) + sum(beta)/2 must exceed Q*chi")
        if "bulk" in self.regime and not all(self.bound2):
            out.append("bound2: every bulk alpha must be below Q")
        if "boundary" in self.regime and not all(self.bound3):
            out.append("bound3: every boundary beta must be below Q")
        return out


def seiberg_check(insertions: InsertionSet, params: LiouvilleParams, chi: int) -> SeibergReport:
    Q = params.Q
    sbar = float(np.sum(insertions.alphas) + 0.5 * np.sum(insertions.betas) - Q * chi)
    b1 = sbar > 0
    b2 = tuple(bool(a < Q) for a in insertions.alphas)
    b3 = tuple(bool(b < Q) for b in insertions.betas)
    if params.mu > 0 and params.mu_boundary > 0:
        regime, ok = "bulk+boundary", b1 and all(b2) and all(b3)
    elif params.mu > 0:
        regime, ok = "bulk", b1 and all(b2)
    else:
        regime, ok = "boundary", b1 and all(b3)
    return SeibergReport(regime, b1, b2, b3, ok, sbar)


# --- zero mode ---------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = leggauss(16)


def log_zero_mode_integral(A, L, sbar: float, params: LiouvilleParams) -> np.ndarray:
    """log of int_R e^{sbar c} exp(-mu e^{gamma c} A - mu_b e^{gamma c/2} L) dc.

    With u = e^{gamma c/2} this is (2/gamma) int e^{nu t - a e^{2t} - b e^t} dt,
    t = ln u, nu = 2 sbar/gamma. Closed Gamma forms are used when one
    potential is absent; otherwise composite Gauss-Legendre on both
    sides of the (explicit) maximiser plus an exact series for the left
    tail where the potentials are below 1e-4.
    """
    if sbar <= 0:
        raise LcftError("zero-mode integral diverges: sbar <= 0")
    g = params.gamma
    a = params.mu * np.asarray(A, dtype=float)
    b = params.mu_boundary * np.asarray(L, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    if np.any(a < 0) or np.any(b < 0) or np.any((a == 0) & (b == 0)):
        raise LcftError("masses must be nonnegative and not both zero")
    if np.all(b == 0):
        return math.log(1.0 / g) + special.gammaln(sbar / g) - (sbar / g) * np.log(a)
    if np.all(a == 0):
        return math.log(2.0 / g) + special.gammaln(2 * sbar / g) - (2 * sbar / g) * np.log(b)
    return math.log(2.0 / g) + _log_mixed_integral(a, b, 2 * sbar / g)


def _log_mixed_integral(a, b, nu, panels: int = 12, delta: float = 1e-4):
    a = np.asarray(a, float)[..., None]
    b = np.asarray(b, float)[..., None]
    h = lambda t: nu * t - a * np.exp(2 * t) - b * np.exp(t)
    # maximiser: 2 a x^2 + b x = nu with x = e^t
    xs = 2 * nu / (b + np.sqrt(b * b + 8 * a * nu))
    ts = np.log(xs)
    hs = h(ts)
    # left cut where a x^2 + b x = delta
    x0 = 2 * delta / (b + np.sqrt(b * b + 4 * a * delta))
    t0 = np.log(x0)
    tm = np.maximum(ts, t0)
    # right cut: 60 e-folds below the peak
    d = np.full_like(ts, 0.5)
    for _ in range(60):
        bad = h(tm + d) > hs - 60
        if not np.any(bad):
            break
        d = np.where(bad, 2 * d, d)
    total = np.zeros(np.broadcast(a, b).shape)
    for lo, hi in ((t0, tm), (tm, tm + d)):
        width = (hi - lo) / panels
        for p in range(panels):
            c = lo + (p + 0.5) * width
            t = c + 0.5 * width * _GL_NODES
            total += np.sum(0.5 * width * _GL_WEIGHTS * np.exp(h(t) - hs), axis=-1, keepdims=True)
    # left tail: expand exp(-(a x^2 + b x)) to fourth order
    tail = np.zeros_like(total)
    for n in range(5):
        for k in range(n + 1):
            coef = (-1) ** n / math.factorial(n) * math.comb(n, k)
            e = nu + n + k
            tail += coef * a**k * b ** (n - k) * np.exp(e * t0 - hs) / e
    return (hs + np.log(total + tail))[..., 0]


def zero_mode_integral(A, L, sbar: float, params: LiouvilleParams):
    """Value of the zero-mode integral; ``math.inf`` when it diverges."""
    if sbar <= 0:
        return math.inf
    return np.exp(log_zero_mode_integral(A, L, sbar, params))


def zero_mode_closed_forms(A, L, sbar: float, params: LiouvilleParams) -> dict:
    g = params.gamma
    out = {}
    if params.mu > 0:
        out["bulk_only"] = (1 / g) * math.gamma(sbar / g) * (params.mu * A) ** (-sbar / g)
    if params.mu_boundary > 0:
        out["boundary_only"] = (2 / g) * math.gamma(2 * sbar / g) * \
            (params.mu_boundary * L) ** (-2 * sbar / g)
    return out


# --- kernels at insertions ---------------------------------------------------------

def insertion_potential(insertions: InsertionSet, kernel: GreenKernel, x) -> np.ndarray:
    """H(x) = sum 2 pi alpha G(z, x) + sum pi beta G(s, x)."""
    x = _as_points(x)
    out = np.zeros(x.shape[:-1])
    for p, a in insertions.bulk:
        if np.any(np.all(np.isclose(x, p, rtol=0, atol=1e-14), axis=-1)):
            raise LcftError("potential evaluated at an insertion point")
        out = out + 2 * math.pi * a * kernel(np.broadcast_to(p, x.shape), x)
    for p, b in insertions.boundary:
        if np.any(np.all(np.isclose(x, p, rtol=0, atol=1e-14), axis=-1)):
            raise LcftError("potential evaluated at an insertion point")
        out = out + math.pi * b * kernel(np.broadcast_to(p, x.shape), x)
    return out


def anomaly_factor(surface: SurfaceModel, params: LiouvilleParams, insertions: InsertionSet,
                   phi: ConformalFactor) -> float:
    Q = params.Q
    geo = (phi.gradient_norm_integral + 2 * phi.curvature_integral
           + 4 * phi.boundary_curvature_integral)
    val = params.central_charge / (96 * math.pi) * geo
    for p, a in insertions.bulk:
        val -= float(conformal_weight(a, Q)) * float(phi(np.array(p)))
    for p, b in insertions.boundary:
        val -= 0.5 * float(conformal_weight(b, Q)) * float(phi(np.array(p)))
    return math.exp(val)


def log_gff_partition_ratio(phi: ConformalFactor) -> float:
    """log Z_GFF(e^phi g0) / Z_GFF(g0) from the free-field Polyakov formula."""
    return (phi.gradient_norm_integral + 2 * phi.curvature_integral
            + 4 * phi.boundary_curvature_integral) / (96 * math.pi)


# --- Monte Carlo configuration and results -------------------------------------------

@dataclass(frozen=True)
class McConfig:
    n_samples: int = 4096
    seed: int = 0
    workers: int = 1
    eps: float = 1.0 / 16
    n_modes: int | None = None
    chunk: int = DEFAULT_CHUNK
    config_hash: str = ""


@dataclass(frozen=True)
class CorrelationEstimate:
    value: float
    stderr: float
    n_samples: int
    config_hash: str
    seed: int
    diverged: bool = False
    workers: int = 1
    violations: tuple = ()

    def as_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "n_samples": self.n_samples,
                "config_hash": self.config_hash, "seed": self.seed,
                "diverged": self.diverged, "workers": self.workers,
                "violations": list(self.violations)}


# --- the reduced estimator -----------------------------------------------------------

@dataclass(eq=False)
class Setup:
    """Everything deterministic about one correlator at one eps."""
    level: FieldLevel
    params: LiouvilleParams
    sbar: float
    logC: float
    bL: np.ndarray                 # coefficient vector of L
    mean_row: np.ndarray           # r with m_g(X0) = r . xi (zero for g0)
    H_bulk: np.ndarray             # (R, M)
    H_bnd: np.ndarray              # (B, Mb)
    logw_bulk: np.ndarray          # (R, M) log cell weight without the field
    logw_bnd: np.ndarray
    log_extra: float = 0.0         # log Z_GFF ratio
    meta: dict = field(default_factory=dict)


def _mode_grid(surface, mc: McConfig) -> ModeGrid:
    n = mc.n_modes if mc.n_modes else default_modes(surface, mc.eps)
    return _GRID_CACHE.get(surface, n)


class _GridCache:
    def __init__(self):
        self._store = {}

    def get(self, surface, n) -> ModeGrid:
        key = (surface, n)
        if key not in self._store:
            if len(self._store) > 4:
                self._store.clear()
            self._store[key] = ModeGrid(surface, n)
        return self._store[key]


_GRID_CACHE = _GridCache()


def insertion_rows(level: FieldLevel, points) -> np.ndarray:
    """Dense rows of the eps-regularised field at arbitrary chart points."""
    pts = _as_points(points).reshape(-1, 2)
    if pts.shape[0] == 0:
        return np.zeros((0, level.grid.size))
    mult = level.grid.multipliers(pts[:, 0], level.eps)
    return level.grid.dense_rows(mult, pts[:, 1])


def build_setup(surface: SurfaceModel, params: LiouvilleParams, insertions: InsertionSet,
                mc: McConfig, phi: ConformalFactor | None = None,
                level: FieldLevel | None = None) -> Setup:
    insertions = insertions.canonical()
    insertions.validate(surface)
    report = seiberg_check(insertions, params, surface.euler_char)
    if level is None:
        level = field_level(_mode_grid(surface, mc), mc.eps)
    grid, eps, g, Q = level.grid, level.eps, params.gamma, params.Q
    N = grid.size
    mesh = level.mesh
    bulk_c = mesh.centers()
    bnd_c = mesh.boundary_centers()
    log_eps = math.log(eps)

    if phi is None:
        mean_row = np.zeros(N)
        phi_bulk = np.zeros(bulk_c.shape[:-1])
        phi_bnd = np.zeros(bnd_c.shape[:-1])
        phi_z = np.zeros(len(insertions.bulk))
        phi_s = np.zeros(len(insertions.boundary))
        bY = np.zeros(N)
        log_extra = 0.0
    else:
        vol_g = phi.volume()
        mean_row = grid.integral_row(lambda P: np.exp(phi(P))) / vol_g
        phi_bulk = phi(bulk_c)
        phi_bnd = phi(bnd_c)
        phi_z = phi(insertions.bulk_points()) if insertions.bulk else np.zeros(0)
        phi_s = phi(insertions.boundary_points()) if insertions.boundary else np.zeros(0)
        # curvature functional of X_g = X0 - m_g(X0), written in g0 quantities
        R0, k0 = surface.scalar_curvature, surface.geodesic_curvature
        rfun = lambda P: R0 - phi.laplacian(P)
        kfun = lambda P: k0 + 0.5 * phi.normal_derivative(P)
        q, bq = chart_quadrature(surface, 64), boundary_quadrature(surface, 256)
        r_int = float(np.sum(q.weights * rfun(q.points)))
        k_int = float(np.sum(bq.weights * kfun(bq.points)))
        row_r = grid.integral_row(rfun) - r_int * mean_row
        row_k = grid.boundary_integral_row(kfun) - k_int * mean_row
        bY = -Q / (4 * math.pi) * row_r - Q / (2 * math.pi) * row_k
        log_extra = log_gff_partition_ratio(phi)

    rows_z = insertion_rows(level, insertions.bulk_points()) - mean_row
    rows_s = insertion_rows(level, insertions.boundary_points()) - mean_row
    alphas, betas = insertions.alphas, insertions.betas
    bL = alphas @ rows_z + 0.5 * betas @ rows_s + bY
    logC = float(np.sum(alphas**2) / 2 * log_eps + np.sum(betas**2) / 4 * log_eps
                 # radius e^{phi/2} eps in g for a g0-radius eps circle
                 + np.sum(alphas**2 * phi_z) / 4 + np.sum(betas**2 * phi_s) / 8
                 + 0.5 * bL @ bL)
    hb, hd = level.evaluate(grid.zeta(bL[None, :]))
    shift = float(mean_row @ bL)
    crit = math.log(critical_factor(g, eps))
    logw_bulk = (np.log(mesh.volumes()) + 0.5 * g**2 * log_eps + crit
                 + (1 + g**2 / 4) * phi_bulk)
    logw_bnd = (np.log(mesh.boundary_measure) + 0.25 * g**2 * log_eps + crit
                + (0.5 + g**2 / 8) * phi_bnd)
    return Setup(level, params, report.sbar, logC, bL, mean_row, hb[0] - shift, hd[0] - shift,
                 logw_bulk, logw_bnd, log_extra,
                 {"report": report, "insertions": insertions})


def _masses(setup: Setup, Xb, Xd, mshift):
    """Tilted masses for field values (S, R, M), (S, B, Mb) and per-sample
    mean subtraction mshift (S,)."""
    g = setup.params.gamma
    m = mshift[:, None, None]
    A = np.sum(np.exp(setup.logw_bulk + g * (Xb - m + setup.H_bulk)), axis=(1, 2))
    Lb = np.sum(np.exp(setup.logw_bnd + 0.5 * g * (Xd - m + setup.H_bnd)), axis=(1, 2))
    return A, Lb


def _logz(setup: Setup, A, Lb, sbar=None):
    return log_zero_mode_integral(A, Lb, setup.sbar if sbar is None else sbar, setup.params)


def _diverged(mc: McConfig, report: SeibergReport) -> CorrelationEstimate:
    return CorrelationEstimate(math.nan, math.nan, 0, mc.config_hash, mc.seed, True,
                               mc.workers, tuple(report.violations()))


def _combine(log_terms: np.ndarray, log_scale: float) -> tuple[float, float]:
    """Mean and stderr of exp(log_scale + log_terms) without overflow."""
    top = float(np.max(log_terms))
    v = np.exp(log_terms - top)
    mean, err = mean_and_stderr(v)
    f = math.exp(log_scale + top)
    return float(mean * f), float(err * f)


def correlation_samples(setups: list[Setup], mc: McConfig) -> np.ndarray:
    """Per-sample log zero-mode integrals, shape (S, len(setups)), for
    setups sharing one field level (common random numbers)."""
    level = setups[0].level
    grid = level.grid

    def work(rng, size, _):
        xi = rng.standard_normal((size, grid.size))
        Xb, Xd = level.evaluate(grid.zeta(xi))
        out = np.empty((size, len(setups)))
        for i, st in enumerate(setups):
            A, Lb = _masses(st, Xb, Xd, xi @ st.mean_row)
            out[:, i] = _logz(st, A, Lb)
        return out

    return map_chunks(work, mc.n_samples, mc.seed, mc.workers, mc.chunk)


def correlation_estimate(surface: SurfaceModel, params: LiouvilleParams,
                         insertions: InsertionSet, mc: McConfig,
                         phi: ConformalFactor | None = None) -> CorrelationEstimate:
    report = seiberg_check(insertions, params, surface.euler_char)
    if not report.admissible:
        return _diverged(mc, report)
    st = build_setup(surface, params, insertions, mc, phi)
    logz = correlation_samples([st], mc)[:, 0]
    val, err = _combine(logz, st.logC + st.log_extra)
    return CorrelationEstimate(val, err, mc.n_samples, mc.config_hash, mc.seed, False, mc.workers)


@dataclass(frozen=True)
class AnomalyCheck:
    ratio: float
    stderr: float
    predicted: float
    z_score: float
    value_g: float
    value_g0: float


def anomaly_check(surface: SurfaceModel, params: LiouvilleParams, insertions: InsertionSet,
                  phi: ConformalFactor, mc: McConfig) -> AnomalyCheck:
    """Pi_g / (anomaly * Pi_g0) with common random numbers; Pi_g includes
    the free-field partition-function ratio."""
    level = field_level(_mode_grid(surface, mc), mc.eps)
    sg = build_setup(surface, params, insertions, mc, phi, level)
    s0 = build_setup(surface, params, insertions, mc, None, level)
    logs = correlation_samples([sg, s0], mc)
    top = logs.max(axis=0)
    a = np.exp(logs[:, 0] - top[0])
    b = np.exp(logs[:, 1] - top[1])
    n = a.size
    ma, mb = a.mean(), b.mean()
    cov = np.cov(a, b)
    rel = math.sqrt(max(cov[0, 0] / ma**2 + cov[1, 1] / mb**2 - 2 * cov[0, 1] / (ma * mb), 0.0) / n)
    pred = anomaly_factor(surface, params, insertions, phi)
    log_ratio = (sg.logC + sg.log_extra + top[0] + math.log(ma)) - (s0.logC + top[1] + math.log(mb))
    ratio = math.exp(log_ratio) / pred
    vg = math.exp(sg.logC + sg.log_extra + top[0]) * ma
    v0 = math.exp(s0.logC + top[1]) * mb
    return AnomalyCheck(ratio, ratio * rel, pred, (ratio - 1) / (ratio * rel), vg, v0)


# --- scaling relation ------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingResult:
    lhs: float
    rhs: float
    stderr: float
    z_score: float


def scaling_residual(surface: SurfaceModel, params: LiouvilleParams, insertions: InsertionSet,
                     mc: McConfig) -> ScalingResult:
    """Compare mu gamma int G(x) dv + mu_b (gamma/2) int G_b(y) dl with
    sbar * G, the added insertions placed at uniformly drawn mesh cells."""
    report = seiberg_check(insertions, params, surface.euler_char)
    if not report.admissible:
        raise LcftError("inadmissible insertions: " + "; ".join(report.violations()))
    if params.mu <= 0:
        raise LcftError("the scaling relation needs mu > 0")
    st = build_setup(surface, params, insertions, mc)
    level, grid, g = st.level, st.level.grid, params.gamma
    mesh = level.mesh
    R, M = mesh.rows.size, mesh.cols.size
    B, Mb = mesh.boundary_rows.size, mesh.boundary_cols.size
    vol = mesh.volumes().ravel()
    total_vol = float(vol.sum())
    prob = vol / total_vol
    total_len = mesh.boundary_measure * B * Mb
    log_eps = math.log(level.eps)
    bulk_mult = level.bulk_mult
    bnd_mult = level.boundary_mult
    use_bnd = params.mu_boundary > 0

    def extra(cells_row, cells_col, mult, w, p, xi, Xb, Xd, sbar_add):
        rows = grid.dense_rows(mult[cells_row], cells_col)  # (S, N)
        hb, hd = level.evaluate(grid.zeta(rows))
        A = np.sum(np.exp(st.logw_bulk + g * (Xb + st.H_bulk + w * hb)), axis=(1, 2))
        Lb = np.sum(np.exp(st.logw_bnd + 0.5 * g * (Xd + st.H_bnd + w * hd)), axis=(1, 2))
        logC = p * log_eps + w * (rows @ st.bL) + 0.5 * w * w * np.sum(rows**2, axis=1)
        return logC + _logz(st, A, Lb, st.sbar + sbar_add)

    def work(rng, size, _):
        xi = rng.standard_normal((size, grid.size))
        cell = rng.choice(R * M, size=size, p=prob)
        bcell = rng.integers(0, B * Mb, size=size)
        Xb, Xd = level.evaluate(grid.zeta(xi))
        A, Lb = _masses(st, Xb, Xd, np.zeros(size))
        out = np.empty((size, 3))
        out[:, 0] = _logz(st, A, Lb)
        r, c = np.divmod(cell, M)
        out[:, 1] = extra(r, mesh.cols[c], bulk_mult, g, g * g / 2, xi, Xb, Xd, g)
        if use_bnd:
            r, c = np.divmod(bcell, Mb)
            out[:, 2] = extra(r, mesh.boundary_cols[c], bnd_mult, g / 2, g * g / 4, xi, Xb, Xd,
                              g / 2)
        else:
            out[:, 2] = -np.inf
        return out

    logs = map_chunks(work, mc.n_samples, mc.seed, mc.workers, mc.chunk)
    scale = st.logC
    top = float(np.max(logs[np.isfinite(logs)]))
    rhs_s = st.sbar * np.exp(logs[:, 0] - top)
    lhs_s = (params.mu * g * total_vol * np.exp(logs[:, 1] - top)
             + params.mu_boundary * 0.5 * g * total_len * np.exp(logs[:, 2] - top))
    f = math.exp(scale + top)
    d_mean, d_err = mean_and_stderr(lhs_s - rhs_s)
    lhs = float(np.mean(lhs_s) * f)
    rhs = float(np.mean(rhs_s) * f)
    err = float(d_err * f)
    return ScalingResult(lhs, rhs, err, float(d_mean * f / err) if err > 0 else 0.0)


# --- cross-checks and diagnostics ------------------------------------------------------

def direct_estimate(surface: SurfaceModel, params: LiouvilleParams, insertions: InsertionSet,
                    mc: McConfig) -> CorrelationEstimate:
    """The eps-regularised correlator sampled directly, without the
    Girsanov reduction (vertex factors kept inside the expectation)."""
    report = seiberg_check(insertions, params, surface.euler_char)
    if not report.admissible:
        return _diverged(mc, report)
    insertions = insertions.canonical()
    level = field_level(_mode_grid(surface, mc), mc.eps)
    grid, eps, g = level.grid, level.eps, params.gamma
    rows = np.concatenate([insertion_rows(level, insertions.bulk_points()),
                           insertion_rows(level, insertions.boundary_points())])
    w = np.concatenate([insertions.alphas, 0.5 * insertions.betas])
    p = float(np.sum(insertions.alphas**2) / 2 + np.sum(insertions.betas**2) / 4)
    vol = level.mesh.volumes()

    def work(rng, size, _):
        xi = rng.standard_normal((size, grid.size))
        Xb, Xd = level.evaluate(grid.zeta(xi))
        A = np.sum(chaos_weights(Xb, vol, g, eps, "bulk"), axis=(1, 2))
        Lb = np.sum(chaos_weights(Xd, level.mesh.boundary_measure, g, eps, "boundary"),
                    axis=(1, 2))
        return (xi @ rows.T) @ w + log_zero_mode_integral(A, Lb, report.sbar, params)

    logs = map_chunks(work, mc.n_samples, mc.seed, mc.workers, mc.chunk)
    val, err = _combine(logs, p * math.log(eps))
    return CorrelationEstimate(val, err, mc.n_samples, mc.config_hash, mc.seed, False, mc.workers)


def blowup_diagnostic(surface: SurfaceModel, alpha: float, gamma: float, point, eps_list,
                      n_samples: int = 256, seed: int = 0, radius: float = 0.2,
                      n_modes: int | None = None, boundary: bool = False) -> np.ndarray:
    """Median over samples of int_B e^{gamma H_eps} dM_eps on the ball of
    the given radius around one insertion, per eps. A boundary insertion
    of weight beta enters with w = beta/2, as for vertex operators."""
    eps_list = [float(e) for e in eps_list]
    grid = ModeGrid(surface, n_modes or default_modes(surface, min(eps_list)))
    point = np.asarray(point, float)
    if boundary and not on_boundary(surface, point[None], tol=1e-9)[0]:
        raise LcftError("boundary diagnostic needs a boundary point")
    w = alpha / 2 if boundary else alpha
    out = []
    for eps in eps_list:
        lv = field_level(grid, eps)
        row = insertion_rows(lv, point[None])[0]
        hb, _ = lv.evaluate(grid.zeta(w * row[None]))
        cen = lv.mesh.centers()
        near = double_distance(surface, cen, np.broadcast_to(point, cen.shape)) < radius
        vol = lv.mesh.volumes()

        def work(rng, size, _):
            xi = rng.standard_normal((size, grid.size))
            Xb, _ = lv.evaluate(grid.zeta(xi))
            return np.sum(chaos_weights(Xb + hb[0], vol, gamma, eps, "bulk") * near, axis=(1, 2))

        out.append(float(np.median(map_chunks(work, n_samples, seed, 1))))
    return np.array(out)


def moment_estimate(surface: SurfaceModel, params: LiouvilleParams, insertions: InsertionSet,
                    n: int, m: int, mc: McConfig) -> CorrelationEstimate:
    """<A^n L^m prod V e^{-mu A - mu_b L}>: the zero mode shifts sbar by
    gamma n + gamma m / 2 and the masses enter as A^n L^m."""
    report = seiberg_check(insertions, params, surface.euler_char)
    if not report.admissible:
        return _diverged(mc, report)
    st = build_setup(surface, params, insertions, mc)
    level, grid, g = st.level, st.level.grid, params.gamma
    sb = st.sbar + g * n + 0.5 * g * m

    def work(rng, size, _):
        xi = rng.standard_normal((size, grid.size))
        Xb, Xd = level.evaluate(grid.zeta(xi))
        A, Lb = _masses(st, Xb, Xd, np.zeros(size))
        return n * np.log(A) + m * np.log(Lb) + _logz(st, A, Lb, sb)

    logs = map_chunks(work, mc.n_samples, mc.seed, mc.workers, mc.chunk)
    val, err = _combine(logs, st.logC)
    return CorrelationEstimate(val, err, mc.n_samples, mc.config_hash, mc.seed, False, mc.workers)
