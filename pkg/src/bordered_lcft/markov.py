"""Markov decomposition of the Neumann free field across a cut.

Cutting the surface along a curve C gives two pieces with Dirichlet data
on C and Neumann data on the inherited outer boundary. The Neumann field
equals, in law, the independent sum of the two mixed-condition fields,
the harmonic extension of its trace on C, recentred to zero average.
Here that identity is checked as an exact covariance statement and by
sampling.

Two cuts are supported: the circle t = c on the flat cylinder and the
meridian half-circle (the plane y = 0) on the hemisphere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .green import SPHERE_CONST, TWO_PI, GreenKernel, green_conformal, neumann_mode_kernel
from .parallel import map_chunks, mean_and_stderr
from .spectral import Condition
from .surfaces import (ConformalFactor, SurfaceKind, SurfaceModel, _as_points, leggauss,
                       to_cartesian)

MAX_TRACE_MODES = 64


class MarkovError(ValueError):
    pass


@dataclass(frozen=True)
class CutSpec:
    """A separating cut. ``height`` is the cylinder level t = c and is
    ignored for the hemisphere meridian."""
    surface: SurfaceModel
    kind: str
    height: float | None = None

    def __post_init__(self):
        if self.kind == "circle":
            if self.surface.kind is not SurfaceKind.FLAT_CYLINDER:
                raise MarkovError("circle cuts live on the flat cylinder")
            T = self.surface.modulus
            if self.height is None or not 0 < self.height < T:
                raise MarkovError(f"cut height must lie in (0, {T})")
        elif self.kind == "half_circle":
            if self.surface.kind is not SurfaceKind.HEMISPHERE:
                raise MarkovError("half-circle cuts are meridians of the hemisphere")
        else:
            raise MarkovError(f"unknown cut kind {self.kind!r}")

    def piece_of(self, p) -> np.ndarray:
        """1 or 2 for each point; 0 on the cut itself."""
        p = _as_points(p)
        if self.kind == "circle":
            t = p[..., 0]
            return np.where(t < self.height, 1, np.where(t > self.height, 2, 0))
        y = np.sin(p[..., 0]) * np.sin(p[..., 1])
        return np.where(y > 0, 1, np.where(y < 0, 2, 0))

    def distance_to_cut(self, p) -> np.ndarray:
        p = _as_points(p)
        if self.kind == "circle":
            return np.abs(p[..., 0] - self.height)
        y = np.sin(p[..., 0]) * np.sin(p[..., 1])
        return np.arcsin(np.clip(np.abs(y), 0, 1))


@dataclass(frozen=True)
class Piece:
    cut: CutSpec
    index: int

    def __post_init__(self):
        if self.index not in (1, 2):
            raise MarkovError("a cut has pieces 1 and 2")

    def local_height(self, t):
        """Distance from the Neumann end, and the piece length (cylinder)."""
        T, c = self.cut.surface.modulus, self.cut.height
        if self.index == 1:
            return np.asarray(t, float), c
        return T - np.asarray(t, float), T - c


# --- mixed-condition kernels ----------------------------------------------------

def _log_image(tau, dy):
    """-(1/2pi) ln|1 - e^{-2pi|tau|} e^{2pi i dy}|."""
    a = TWO_PI * np.abs(tau)
    e = np.exp(-a)
    re = -np.expm1(-a) + 2 * e * np.sin(math.pi * dy) ** 2
    im = e * np.sin(TWO_PI * dy)
    return -0.5 * np.log(re * re + im * im) / TWO_PI


def _strip_mixed(l, u, v, dy):
    """Kernel on [0, l] x R/Z, Neumann at 0 and Dirichlet at l."""
    M = int(math.ceil(8.0 / (2 * l))) + 2
    out = l - np.maximum(u, v)
    for n in range(-M, M + 1):
        sgn = -1.0 if n % 2 else 1.0
        out = out + sgn * (_log_image(u - v - 2 * l * n, dy) + _log_image(u + v - 2 * l * n, dy))
    return out


def _reflections(p):
    x = to_cartesian(p[..., 0], p[..., 1])
    sz = x * np.array([1.0, 1.0, -1.0])
    sy = x * np.array([1.0, -1.0, 1.0])
    return x, sz, sy, sy * np.array([1.0, 1.0, -1.0])


def mixed_green(piece: Piece, x, y) -> np.ndarray:
    """Green kernel of a cut piece, Dirichlet on the cut and Neumann on the
    outer boundary; points outside the piece are not accepted."""
    x, y = np.broadcast_arrays(_as_points(x), _as_points(y))
    cut = piece.cut
    if np.any(cut.piece_of(x) != piece.index) or np.any(cut.piece_of(y) != piece.index):
        raise MarkovError("points must lie inside the piece")
    if cut.kind == "circle":
        u, l = piece.local_height(x[..., 0])
        v, _ = piece.local_height(y[..., 0])
        dy = x[..., 1] - y[..., 1]
        if np.any((u == v) & (np.abs(dy - np.round(dy)) == 0)):
            raise MarkovError("coincident points")
        return _strip_mixed(l, u, v, dy)
    a = to_cartesian(x[..., 0], x[..., 1])
    b, bz, by, byz = _reflections(y)
    d = [np.linalg.norm(a - q, axis=-1) for q in (b, bz, by, byz)]
    if np.any(d[0] == 0):
        raise MarkovError("coincident points")
    return -np.log(d[0] * d[1] / (d[2] * d[3])) / TWO_PI


def mixed_regular_part(piece: Piece, x, eta: float = 1e-7) -> np.ndarray:
    """lim G_mix(x, x') + (1/2 pi) ln d(x, x') as x' -> x."""
    x = _as_points(x)
    shifted = x + np.array([eta, 0.0])
    if piece.cut.kind == "circle":
        shifted = x + np.array([0.0, eta])
    return mixed_green(piece, x, shifted) + math.log(eta) / TWO_PI


def mixed_eigenvalues(piece: Piece, n: int) -> np.ndarray:
    """Lowest n eigenvalues of the mixed problem (all strictly positive)."""
    cut = piece.cut
    if cut.kind == "circle":
        _, l = piece.local_height(0.0)
        jj, kk = np.meshgrid(np.arange(n), np.arange(-n, n + 1))
        lam = ((jj + 0.5) * math.pi / l) ** 2 + (TWO_PI * kk) ** 2
        return np.sort(lam.ravel())[:n]
    # harmonics odd under y -> -y and even under z -> -z: l + m even with
    # the sine partner in the azimuth, m >= 1
    vals = []
    l = 1
    while len(vals) < n:
        vals += [l * (l + 1)] * sum(1 for m in range(1, l + 1) if (l + m) % 2 == 0)
        l += 1
    return np.array(vals[:n], dtype=float)


# --- harmonic extension -----------------------------------------------------------

def _cut_angle(p):
    """(distance parameter r, angle along the cut in [0, pi]) on the hemisphere."""
    x = to_cartesian(p[..., 0], p[..., 1])
    vt = np.arccos(np.clip(np.abs(x[..., 1]), 0, 1))  # angle from the nearer y-pole
    psi = np.arctan2(x[..., 2], x[..., 0])
    return np.tan(vt / 2), psi


def _extension_profile(cut: CutSpec, k, t):
    """E_k(t) = cosh(kappa u)/cosh(kappa l) in the local height of t's piece."""
    T, c = cut.surface.modulus, cut.height
    t = np.asarray(t, float)
    u = np.where(t <= c, t, T - t)
    l = np.where(t <= c, c, T - c)
    kap = TWO_PI * np.abs(np.asarray(k, float))
    return np.exp(-kap * (l - u)) * (1 + np.exp(-2 * kap * u)) / (1 + np.exp(-2 * kap * l))


def harmonic_extension(trace, cut: CutSpec):
    """Extension of a trace on the cut, harmonic in both pieces with zero
    normal derivative on the outer boundary.

    Cylinder: ``trace`` holds complex Fourier coefficients for
    k = -K..K of a function of y. Hemisphere: cosine coefficients
    n = 0..K in the angle along the meridian.
    """
    coef = np.asarray(trace)
    if cut.kind == "circle":
        if coef.size % 2 == 0:
            raise MarkovError("give coefficients for k = -K..K")
        K = coef.size // 2
        if K > MAX_TRACE_MODES:
            raise MarkovError(f"trace uses {K} modes, resolution is {MAX_TRACE_MODES}")
        ks = np.arange(-K, K + 1)

        def ext(p):
            p = _as_points(p)
            E = _extension_profile(cut, ks, p[..., 0, None])
            return np.real(np.sum(coef * E * np.exp(1j * TWO_PI * ks * p[..., 1, None]), axis=-1))
        return ext
    K = coef.size - 1
    if K > MAX_TRACE_MODES:
        raise MarkovError(f"trace uses {K} modes, resolution is {MAX_TRACE_MODES}")
    ns = np.arange(K + 1)

    def ext_h(p):
        r, psi = _cut_angle(_as_points(p))
        return np.sum(coef * r[..., None] ** ns * np.cos(ns * psi[..., None]), axis=-1)
    return ext_h


# --- covariance assembly ------------------------------------------------------------

def trace_extension_covariance(cut: CutSpec, x, y) -> np.ndarray:
    """Cov of the extended trace at x and y, including the 2 pi."""
    x, y = np.broadcast_arrays(_as_points(x), _as_points(y))
    if cut.kind == "circle":
        T, c = cut.surface.modulus, cut.height
        ks = np.arange(-MAX_TRACE_MODES, MAX_TRACE_MODES + 1)
        g = neumann_mode_kernel(ks, T, c, c)
        Ex = _extension_profile(cut, ks, x[..., 0, None])
        Ey = _extension_profile(cut, ks, y[..., 0, None])
        ph = np.cos(TWO_PI * ks * (x[..., 1, None] - y[..., 1, None]))
        return TWO_PI * np.sum(g * Ex * Ey * ph, axis=-1)
    rx, px = _cut_angle(x)
    ry, py = _cut_angle(y)
    q = rx * ry
    # sum_n (2/n) q^n cos(n px) cos(n py) in closed form
    s = -(np.log(np.abs(1 - q * np.exp(1j * (px - py))))
          + np.log(np.abs(1 - q * np.exp(1j * (px + py)))))
    return TWO_PI * (2 * SPHERE_CONST + s / TWO_PI)


def _sphere_mixed_mean(p):
    """(1/V) int over the piece of G_mix(x, .) on the hemisphere."""
    x = to_cartesian(p[..., 0], p[..., 1])
    return np.log1p(np.abs(x[..., 1])) / (2 * math.pi)


_GL = leggauss(40)


def _panels(lo, hi, splits=()):
    edges = [lo] + [s for s in sorted(splits) if lo < s < hi] + [hi]
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        xs.append(0.5 * (b - a) * _GL[0] + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * _GL[1])
    return np.concatenate(xs), np.concatenate(ws)


def _mixed_mode(l, k, u, v):
    """Fourier coefficient k of the strip mixed kernel."""
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    if k == 0:
        return l - hi
    kap = TWO_PI * abs(k)
    return (np.exp(kap * (lo + (l - hi) - l)) * (1 + np.exp(-2 * kap * lo))
            * -np.expm1(-2 * kap * (l - hi)) / (2 * kap * (1 + np.exp(-2 * kap * l))))


class _CylinderCentering:
    """a(x) = (1/V_w) int K(x, z) w(z) dz and b = (1/V_w) int a w for the
    mixed part and the trace part separately, w a density on the cylinder."""

    def __init__(self, cut: CutSpec, phi: ConformalFactor | None, nmax: int = 12):
        self.cut = cut
        T, c = cut.surface.modulus, cut.height
        self.T, self.c = T, c
        self.ks = np.arange(-nmax, nmax + 1) if phi is not None else np.array([0])
        self.phi = phi
        self.gk = neumann_mode_kernel(self.ks, T, c, c)
        s, ws = _panels(0.0, T, (c,))
        self.s, self.ws = s, ws
        self.what = self._w_hat(s)
        self.vol = float(np.sum(ws * self.what[:, self.ks.size // 2].real))
        # trace part: A_n(t) = 2 pi g_n E_n(t) int E_n(s) w_n(s) ds
        E = _extension_profile(cut, self.ks, s[:, None])
        self.trace_int = np.sum(ws[:, None] * E * self.what, axis=0)
        self.b_mixed, self.b_trace = self._b()

    def _w_hat(self, s):
        ny = 64
        yy = np.arange(ny) / ny
        if self.phi is None:
            return np.ones((s.size, 1), complex)
        P = np.stack(np.broadcast_arrays(s[:, None], yy[None, :]), -1)
        w = np.exp(self.phi(P))
        f = np.fft.fft(w, axis=1) / ny
        return f[:, self.ks % ny]

    def _A(self, t):
        """Mode coefficients (mixed, trace) of a at height t, shape (nk,)."""
        T, c = self.T, self.c
        lo, hi = (0.0, c) if t < c else (c, T)
        s, ws = _panels(lo, hi, (t,))
        what = self._w_hat(s)
        piece = Piece(self.cut, 1 if t < c else 2)
        u, l = piece.local_height(t)
        v, _ = piece.local_height(s)
        mixed = np.array([np.sum(ws * _mixed_mode(l, k, u, v) * what[:, i])
                          for i, k in enumerate(self.ks)])
        trace = self.gk * _extension_profile(self.cut, self.ks, t) * self.trace_int
        return TWO_PI * mixed / self.vol, TWO_PI * trace / self.vol

    def a(self, p) -> tuple[np.ndarray, np.ndarray]:
        p = _as_points(p).reshape(-1, 2)
        am, at = np.empty(len(p)), np.empty(len(p))
        for i, (t, y) in enumerate(p):
            Am, At = self._A(t)
            ph = np.exp(1j * TWO_PI * self.ks * y)
            am[i], at[i] = np.real(np.sum(Am * ph)), np.real(np.sum(At * ph))
        return am, at

    def _b(self):
        T, c = self.T, self.c
        bm = bt = 0.0
        for lo, hi in ((0.0, c), (c, T)):
            t, wt = _panels(lo, hi)
            what = self._w_hat(t)
            for ti, wi, wrow in zip(t, wt, what):
                Am, At = self._A(ti)
                # pair mode n with w_{-n}
                bm += wi * np.real(np.sum(Am * wrow[::-1]))
                bt += wi * np.real(np.sum(At * wrow[::-1]))
        return bm / self.vol, bt / self.vol


class Decomposition:
    """Covariance pieces of the cut decomposition, 2 pi included."""

    def __init__(self, cut: CutSpec, phi: ConformalFactor | None = None):
        self.cut = cut
        self.phi = phi
        if cut.kind == "circle":
            self._cyl = _CylinderCentering(cut, phi)
        elif phi is not None:
            raise MarkovError("conformal recentring is implemented for the cylinder cut")

    def mixed(self, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(_as_points(x), _as_points(y))
        px, py = self.cut.piece_of(x), self.cut.piece_of(y)
        if np.any(px == 0) or np.any(py == 0):
            raise MarkovError("points on the cut")
        out = np.zeros(x.shape[:-1])
        for j in (1, 2):
            sel = (px == j) & (py == j)
            if np.any(sel):
                out[sel] = TWO_PI * mixed_green(Piece(self.cut, j), x[sel], y[sel])
        return out

    def trace(self, x, y) -> np.ndarray:
        return trace_extension_covariance(self.cut, x, y)

    def a_parts(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = _as_points(x)
        if self.cut.kind == "circle":
            am, at = self._cyl.a(x)
            return am.reshape(x.shape[:-1]), at.reshape(x.shape[:-1])
        return TWO_PI * _sphere_mixed_mean(x), np.full(x.shape[:-1], TWO_PI * 2 * SPHERE_CONST)

    def b_parts(self) -> tuple[float, float]:
        if self.cut.kind == "circle":
            return self._cyl.b_mixed, self._cyl.b_trace
        V = 2 * math.pi
        # int over the hemisphere of ln(1 + |y|) is 2 pi (2 ln 2 - 1)
        return TWO_PI * (2 * math.log(2) - 1) / V, TWO_PI * 2 * SPHERE_CONST

    def covariance(self, x, y) -> np.ndarray:
        """Cov of X1 + X2 + P - m(X1 + X2 + P) at (x, y)."""
        x, y = np.broadcast_arrays(_as_points(x), _as_points(y))
        ax = sum(self.a_parts(x))
        ay = sum(self.a_parts(y))
        return self.mixed(x, y) + self.trace(x, y) - ax - ay + sum(self.b_parts())


def neumann_target(cut: CutSpec, x, y, phi: ConformalFactor | None = None) -> np.ndarray:
    kernel = GreenKernel(cut.surface, Condition.NEUMANN)
    if phi is None:
        return TWO_PI * kernel(x, y)
    x, y = np.broadcast_arrays(_as_points(x), _as_points(y))
    return TWO_PI * green_conformal(kernel, phi, x, y)


def test_points(cut: CutSpec, n: int = 20, margin: float = 0.1, offset: float = 0.0) -> np.ndarray:
    """n points spread over both pieces, at least ``margin`` from the cut
    and from the outer boundary."""
    S = cut.surface
    golden = (math.sqrt(5) - 1) / 2
    i = np.arange(n)
    f1 = (i + 0.5) / n
    f2 = np.mod(i * golden + offset + 0.13, 1.0)
    if cut.kind == "circle":
        T, c = S.modulus, cut.height
        lo1, hi1, lo2, hi2 = margin, c - margin, c + margin, T - margin
        t = np.where(i % 2 == 0, lo1 + (hi1 - lo1) * f1, lo2 + (hi2 - lo2) * f1)
        return np.stack([t, f2], -1)
    # polar angle up to pi/2 - margin, azimuth away from psi = 0, pi by margin
    theta = 0.1 + (math.pi / 2 - margin - 0.1) * f1
    base = margin + (math.pi - 2 * margin) * f2
    psi = np.where(i % 2 == 0, base, base + math.pi)
    return np.stack([theta, psi], -1)


def markov_covariance_residual(cut: CutSpec, xs=None, ys=None,
                               phi: ConformalFactor | None = None) -> float:
    """max |2 pi G_Neumann(x, y) - Cov_decomposition(x, y)| over all pairs."""
    xs = test_points(cut) if xs is None else _as_points(xs)
    ys = test_points(cut, offset=0.37) if ys is None else _as_points(ys)
    X = np.repeat(xs[:, None, :], len(ys), axis=1)
    Y = np.repeat(ys[None, :, :], len(xs), axis=0)
    dec = Decomposition(cut, phi)
    lhs = neumann_target(cut, X.reshape(-1, 2), Y.reshape(-1, 2), phi)
    rhs = dec.covariance(X.reshape(-1, 2), Y.reshape(-1, 2))
    return float(np.max(np.abs(lhs - rhs)))


# --- sampled twin ---------------------------------------------------------------------

def _psd_factor(C: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    if w.min() < -1e-8 * max(1.0, w.max()):
        raise MarkovError("covariance is not positive semidefinite")
    return V * np.sqrt(np.clip(w, 0, None))


@dataclass(frozen=True)
class TwinResult:
    pairs: np.ndarray
    empirical: np.ndarray
    target: np.ndarray
    stderr: np.ndarray
    max_z: float


def sampled_twin(cut: CutSpec, points=None, n_samples: int = 100_000, seed: int = 0,
                 delta: float = 0.05, workers: int = 1) -> TwinResult:
    """Draw the mixed fields, the extended trace and their averages as
    independent Gaussian vectors, recentre, and compare the empirical
    covariance at distinct points with the Neumann kernel.

    Point values carry infinite variance, so diagonals are regularised at
    scale ``delta``; off-diagonal covariances are unaffected.
    """
    pts = test_points(cut, 6, margin=0.15) if points is None else _as_points(points)
    n = len(pts)
    dec = Decomposition(cut)
    pieces = cut.piece_of(pts)
    am, at = dec.a_parts(pts)
    bm_total, bt = dec.b_parts()
    blocks = []
    for j in (1, 2):
        idx = np.nonzero(pieces == j)[0]
        P = pts[idx]
        C = np.zeros((idx.size + 1, idx.size + 1))
        I, J = np.meshgrid(np.arange(idx.size), np.arange(idx.size), indexing="ij")
        off = I != J
        C[:-1, :-1][off] = dec.mixed(P[I[off]], P[J[off]])
        C[np.arange(idx.size), np.arange(idx.size)] = (
            TWO_PI * mixed_regular_part(Piece(cut, j), P) + math.log(1 / delta))
        C[:-1, -1] = C[-1, :-1] = am[idx]
        C[-1, -1] = _piece_mean_variance(dec, cut, j)
        blocks.append((idx, _psd_factor(C)))
    I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    Ct = np.zeros((n + 1, n + 1))
    Ct[:-1, :-1] = dec.trace(pts[I], pts[J])
    Ct[:-1, -1] = Ct[-1, :-1] = at
    Ct[-1, -1] = bt
    Ft = _psd_factor(Ct)

    def work(rng, size, _):
        Z = np.zeros((size, n))
        mean = np.zeros(size)
        for idx, F in blocks:
            v = rng.standard_normal((size, F.shape[1])) @ F.T
            Z[:, idx] += v[:, :-1]
            mean += v[:, -1]
        v = rng.standard_normal((size, Ft.shape[1])) @ Ft.T
        Z += v[:, :-1]
        mean += v[:, -1]
        Z -= mean[:, None]
        iu = np.triu_indices(n, 1)
        return Z[:, iu[0]] * Z[:, iu[1]]

    prods = map_chunks(work, n_samples, seed, workers)
    emp, err = mean_and_stderr(prods)
    iu = np.triu_indices(n, 1)
    target = neumann_target(cut, pts[iu[0]], pts[iu[1]])
    z = np.abs(emp - target) / err
    return TwinResult(np.stack(iu, -1), emp, target, err, float(np.max(z)))


def _piece_mean_variance(dec: Decomposition, cut: CutSpec, j: int) -> float:
    """Var of the average (over the whole surface) of the piece-j mixed field."""
    if cut.kind == "circle":
        T, c = cut.surface.modulus, cut.height
        l = c if j == 1 else T - c
        return TWO_PI * l**3 / 3 / T**2
    V = 2 * math.pi
    return TWO_PI * math.pi * (2 * math.log(2) - 1) / V**2
