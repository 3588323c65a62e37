"""Collision exponents of vertex insertions on the half-plane.

The field is the half-plane free field in the metric |x|_+^{-4}|dx|^2,
sampled exactly (eigen-factorisation) on a node cloud: a coarse grid on
the unit half-disk, its image under x -> -1/x (which preserves both the
covariance and the measure), and geometric annuli around the collision
point. Correlations are estimated with the Girsanov-reduced estimator
with mu_boundary = 0, and the log-log slope against the insertion
distance is compared with the fusion exponent.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .lcft import LiouvilleParams, conformal_weight, seiberg_check, InsertionSet
from .parallel import map_chunks
from .surfaces import leggauss


class FusionError(ValueError):
    pass


# --- covariance ---------------------------------------------------------------------

def _plus(z):
    return np.maximum(np.abs(z), 1.0)


def _cplx(p):
    p = np.asarray(p, dtype=float)
    return p[..., 0] + 1j * p[..., 1]


def dozz_covariance(x, y) -> np.ndarray:
    """ln 1/(|x-y||x-conj y|) + 2 ln|x|_+ + 2 ln|y|_+ for points of the
    closed upper half-plane given as (re, im) pairs."""
    a, b = _cplx(x), _cplx(y)
    if np.any(np.imag(a) < 0) or np.any(np.imag(b) < 0):
        raise FusionError("points must lie in the closed upper half-plane")
    d = np.abs(a - b)
    if np.any(d == 0):
        raise FusionError("coincident points")
    return -np.log(d * np.abs(a - np.conj(b))) + 2 * np.log(_plus(a)) + 2 * np.log(_plus(b))


def smoothed_covariance(x, y, rx, ry) -> np.ndarray:
    """Covariance of fields smoothed at radii rx, ry, with the
    |x - y| v r convention; exact for circle averages once
    |x - y| >= rx + ry."""
    a, b = _cplx(x), _cplx(y)
    d = np.maximum(np.abs(a - b), np.maximum(rx, ry))
    refl = np.maximum(np.abs(a - np.conj(b)), np.maximum(rx, ry))
    return -np.log(d * refl) + 2 * np.log(_plus(a)) + 2 * np.log(_plus(b))


def gram_matrix(points, eps: float) -> np.ndarray:
    P = np.asarray(points, float)
    r = np.full(len(P), eps)
    return smoothed_covariance(P[:, None], P[None, :], r[:, None], r[None, :])


# --- cases and predictions ----------------------------------------------------------

KINDS = ("bulk_bulk", "bulk_reflection", "boundary_boundary")


@dataclass(frozen=True)
class FusionCase:
    kind: str
    weights: tuple
    center: tuple = (0.2, 0.5)
    spectators: tuple = (((-0.6, 0.5), 1.2), ((0.0, 2.0), 1.2))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FusionError(f"kind must be one of {KINDS}")
        need = 1 if self.kind == "bulk_reflection" else 2
        if len(self.weights) != need:
            raise FusionError(f"{self.kind} takes {need} weight(s)")

    @staticmethod
    def default(kind: str, weights=None) -> "FusionCase":
        if kind == "bulk_bulk":
            return FusionCase(kind, tuple(weights or (0.5, 0.5)), (0.2, 0.5))
        if kind == "bulk_reflection":
            return FusionCase(kind, tuple(weights or (0.5,)), (0.3, 0.0))
        return FusionCase(kind, tuple(weights or (0.5, 0.5)), (0.3, 0.0))

    @property
    def on_boundary(self) -> bool:
        return self.kind != "bulk_bulk"

    def insertions(self, d: float):
        """Bulk (point, alpha) and boundary (point, beta) lists at distance d."""
        cx, cy = self.center
        spect = [(tuple(p), a) for p, a in self.spectators]
        if self.kind == "bulk_bulk":
            a1, a2 = self.weights
            return [((cx - d / 2, cy), a1), ((cx + d / 2, cy), a2)] + spect, []
        if self.kind == "bulk_reflection":
            return [((cx, d / 2), self.weights[0])] + spect, []
        b1, b2 = self.weights
        return spect, [((cx - d / 2, 0.0), b1), ((cx + d / 2, 0.0), b2)]


def fusion_predicted_exponent(case: FusionCase, params: LiouvilleParams) -> float:
    Q = params.Q
    D = lambda a: float(conformal_weight(a, Q))
    w = sorted(case.weights)  # summation order fixed: exact symmetry
    if case.kind == "bulk_bulk":
        return 2 * (D(min(w[0] + w[1], Q)) - D(w[0]) - D(w[1]))
    if case.kind == "bulk_reflection":
        return D(min(2 * w[0], Q)) - 2 * D(w[0])
    return D(min(w[0] + w[1], Q)) - D(w[0]) - D(w[1])


# --- node cloud -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NodeCloud:
    points: np.ndarray      # (n, 2)
    radii: np.ndarray       # smoothing radius per node
    mass: np.ndarray        # int over the cell of (|z|_+^2/|z - conj z|)^{g^2/2} |z|_+^{-4}
    refined_radius: float


def _y_factor_integral(y0, y1, a):
    """int_{y0}^{y1} (2y)^{-a} dy for a < 1."""
    return ((2 * y1) ** (1 - a) - (2 * y0) ** (1 - a)) / (2 * (1 - a))


def build_cloud(case: FusionCase, gamma: float, eps: float, h: float = 0.1,
                r_ref: float = 0.15, ratio: float = 0.7, n_angle: int = 24) -> NodeCloud:
    a = gamma**2 / 2
    if a >= 1:
        raise FusionError("the half-plane bulk measure needs gamma < sqrt(2)")
    c = complex(*case.center)
    pts, rad, mass = [], [], []
    # coarse grid on the unit half-disk, sub-sampled for the clipping
    nx, ny = int(round(2 / h)), int(round(1 / h))
    sub = 6
    for i in range(nx):
        for j in range(ny):
            x0, y0 = -1 + i * h, j * h
            xs = x0 + (np.arange(sub) + 0.5) * h / sub
            ys = y0 + np.arange(sub + 1) * h / sub
            X, Y = np.meshgrid(xs, 0.5 * (ys[:-1] + ys[1:]), indexing="ij")
            band = _y_factor_integral(ys[:-1], ys[1:], a)[None, :] * (h / sub)
            inside = (X**2 + Y**2 < 1)
            hole = np.abs(X + 1j * Y - c) < r_ref
            m_in = float(np.sum(band * (inside & ~hole)))
            m_all = float(np.sum(band * inside))
            if m_all <= 0.2 * _y_factor_integral(y0, y0 + h, a) * h:
                continue
            sel = inside
            cen = (float(np.mean(X[sel])), float(np.mean(Y[sel])))
            # outer copy: the image of the full cell under x -> -1/x
            z = -1 / complex(*cen)
            pts.append((z.real, z.imag))
            rad.append(0.25 * h * abs(z) ** 2)
            mass.append(m_all)
            if m_in > 0.2 * m_all:
                pts.append(cen)
                rad.append(0.25 * h)
                mass.append(m_in)
    # annuli around the collision point, down to 2 eps, then one centre node;
    # smoothing radii are a fixed fraction of the local spacing so that
    # neighbouring nodes stay at least r_x + r_y apart
    edges = [r_ref]
    while edges[-1] * ratio > 2 * eps:
        edges.append(edges[-1] * ratio)
    edges = np.array(edges[::-1])
    half = case.on_boundary
    n_ang = n_angle // 2 if half else n_angle
    span = math.pi if half else 2 * math.pi
    sig = np.linspace(0, span, n_ang + 1)
    ang_int = [integrate.quad(lambda s: np.sin(s) ** -a, s0, s1)[0] if half else 0.0
               for s0, s1 in zip(sig[:-1], sig[1:])]
    gx, gw = leggauss(4)

    def cell_mass(r0, r1, k):
        s0, s1 = sig[k], sig[k + 1]
        if half:
            return 2.0**-a * (r1 ** (2 - a) - r0 ** (2 - a)) / (2 - a) * ang_int[k]
        rr = 0.5 * (r1 - r0) * gx + 0.5 * (r0 + r1)
        ss = 0.5 * (s1 - s0) * gx + 0.5 * (s0 + s1)
        R, S = np.meshgrid(rr, ss, indexing="ij")
        W = np.outer(gw, gw) * 0.25 * (r1 - r0) * (s1 - s0) * R
        return float(np.sum(W * (2 * (c + R * np.exp(1j * S)).imag) ** -a))

    frac = 0.45 * min(1 - ratio, span / n_ang * 0.5 * (1 + ratio)) / (1 + ratio)
    for r0, r1 in zip(edges[:-1], edges[1:]):
        rm = 0.5 * (r0 + r1)
        for k in range(n_ang):
            z = c + rm * np.exp(1j * 0.5 * (sig[k] + sig[k + 1]))
            pts.append((z.real, z.imag))
            rad.append(frac * 2 * r1)
            mass.append(cell_mass(r0, r1, k))
    r0 = edges[0]
    if half:
        # the inner half-disk is represented by one node just above the centre
        z = c + 0.5j * r0
        m = sum(cell_mass(0.0, r0, k) for k in range(n_ang))
        pts.append((z.real, z.imag))
        rad.append(0.25 * r0)
    else:
        m = sum(cell_mass(0.0, r0, k) for k in range(n_ang))
        pts.append((c.real, c.imag))
        rad.append(0.5 * r0)
    mass.append(m)
    return NodeCloud(np.array(pts), np.array(rad), np.array(mass), r_ref)


def _psd_factor(C):
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    return V * np.sqrt(np.clip(w, 0, None)), float(w.min())


# --- scan -------------------------------------------------------------------------------

@dataclass
class ScanResult:
    case: FusionCase
    distances: np.ndarray
    statistic: np.ndarray
    stderr: np.ndarray
    slope: float
    slope_stderr: float
    predicted: float
    min_eigenvalue: float
    meta: dict = field(default_factory=dict)

    @property
    def violation_z(self) -> float:
        """How many stderr the slope is more singular than the bound."""
        return (self.predicted - self.slope) / self.slope_stderr

    @property
    def violated(self) -> bool:
        return self.violation_z > 3

    def relative_error(self) -> float:
        return abs(self.slope - self.predicted) / abs(self.predicted)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["distance", "statistic", "stderr"])
            for row in zip(self.distances, self.statistic, self.stderr):
                w.writerow([repr(float(v)) for v in row])

    def summary(self) -> dict:
        return {"kind": self.case.kind, "weights": list(self.case.weights),
                "slope": self.slope, "slope_stderr": self.slope_stderr,
                "predicted": self.predicted, "violation_z": self.violation_z,
                "violated": self.violated}

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def check_ladder(distances, eps: float, r_max: float) -> np.ndarray:
    d = np.asarray(distances, dtype=float)
    if d.ndim != 1 or d.size < 3:
        raise FusionError("give at least three distances")
    if np.any(np.diff(d) >= 0):
        raise FusionError("distances must be strictly decreasing")
    q = d[1:] / d[:-1]
    if np.ptp(q) > 1e-9 * q.mean():
        raise FusionError("distances must form a geometric ladder")
    if d[-1] < 2 * eps:
        raise FusionError(f"distance {d[-1]} is below the resolution 2*eps = {2 * eps}")
    if d[0] > r_max:
        raise FusionError(f"distance {d[0]} leaves the refined window (radius {r_max})")
    return d


def _log_prefactor(bulk, boundary, eps):
    """log E of the product of regularised vertices, with w = alpha or beta/2."""
    pts = [p for p, _ in bulk] + [p for p, _ in boundary]
    w = np.array([a for _, a in bulk] + [b / 2 for _, b in boundary])
    r = np.full(len(pts), eps)
    P = np.array(pts)
    K = smoothed_covariance(P[:, None], P[None, :], r[:, None], r[None, :])
    # eps^{alpha^2/2} for bulk, eps^{beta^2/4} for boundary
    p = sum(a * a / 2 for _, a in bulk) + sum(b * b / 4 for _, b in boundary)
    return p * math.log(eps) + 0.5 * w @ K @ w, P, w


def fusion_scan(case: FusionCase, distances, params: LiouvilleParams, n_samples: int = 100_000,
                seed: int = 0, eps: float = 1e-3, workers: int = 1, chunk: int = 4096) -> ScanResult:
    if params.mu_boundary != 0:
        raise FusionError("scans use mu_boundary = 0 (an upper bound for the correlator)")
    cloud = build_cloud(case, params.gamma, eps)
    d = check_ladder(distances, eps, cloud.refined_radius)
    g = params.gamma
    bulk0, bnd0 = case.insertions(float(d[0]))
    rep = seiberg_check(InsertionSet.build(bulk0, bnd0), params, 1)
    if not rep.admissible:
        raise FusionError("inadmissible insertions: " + "; ".join(rep.violations()))
    sbar = rep.sbar
    P, R = cloud.points, cloud.radii
    K = smoothed_covariance(P[:, None], P[None, :], R[:, None], R[None, :])
    F, lam_min = _psd_factor(K)
    diag = np.diag(K)
    logC = np.empty(d.size)
    tilt = np.empty((P.shape[0], d.size))
    for i, di in enumerate(d):
        bulk, bnd = case.insertions(float(di))
        logC[i], Z, w = _log_prefactor(bulk, bnd, eps)
        rz = np.full(len(Z), eps)
        H = smoothed_covariance(Z[:, None], P[None, :], rz[:, None], R[None, :]).T @ w
        tilt[:, i] = np.log(cloud.mass) + g * H - 0.5 * g * g * diag
    shift = tilt.max()
    wts = np.exp(tilt - shift)
    q = sbar / g
    base = math.log(1 / g) + special.gammaln(q)

    def work(rng, size, _):
        X = rng.standard_normal((size, F.shape[1])) @ F.T
        E = np.exp(g * X - g * np.max(X))  # common factor; cancels below
        A = E @ wts
        return -q * (np.log(A) + g * np.max(X) + shift)

    logs = map_chunks(work, n_samples, seed, workers, chunk)  # (S, D)
    top = logs.max(axis=0)
    vals = np.exp(logs - top)
    m = vals.mean(axis=0)
    cov = np.cov(vals, rowvar=False) / vals.shape[0]
    stat = np.exp(base + logC + top) * m
    err = np.exp(base + logC + top) * np.sqrt(np.diag(cov))
    # least squares slope of log stat on log d; delta method with CRN
    x = np.log(d)
    xc = x - x.mean()
    lw = xc / np.sum(xc * xc)
    slope = float(lw @ (logC + top + np.log(m)))
    Sig = cov / np.outer(m, m)
    s_err = float(math.sqrt(max(lw @ Sig @ lw, 0.0)))
    return ScanResult(case, d, stat, err, slope, s_err, fusion_predicted_exponent(case, params),
                      lam_min, {"nodes": int(P.shape[0]), "sbar": sbar, "eps": eps,
                                "n_samples": n_samples, "seed": seed})


def geometric_ladder(d0: float = 0.08, levels: int = 5, ratio: float = 0.5) -> np.ndarray:
    return d0 * ratio ** np.arange(levels)
