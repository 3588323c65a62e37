"""Green kernels on the doubles and on the bordered surfaces.

Conventions: the Laplacian Delta is the positive operator, so the closed
kernel solves Delta_y G(x, y) = delta_x - 1/Vol and the free field has
covariance 2 pi G. Near the diagonal G = -(1/2 pi) ln d + smooth.

Two evaluation modes exist. ``closed_form`` uses exact expressions:
on the torus a Fourier series in y summed exactly in t (a logarithm for
the singular image plus an exponentially convergent remainder), on the
sphere the chordal logarithm. ``eigen_sum`` uses a truncated spectral
sum and is what the field sampler actually realises.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .spectral import Condition, SpectralBasis, build_basis, normalized_legendre
from .surfaces import (ConformalFactor, SurfaceKind, SurfaceModel, _as_points,
                       chart_quadrature, circle_points_at,
                       involution_map, leggauss, retained_half_angle, to_cartesian,
                       torus_displacement)

TWO_PI = 2.0 * math.pi
SPHERE_CONST = (2.0 * math.log(2.0) - 1.0) / (4.0 * math.pi)


class GreenError(ValueError):
    pass


# --- torus ------------------------------------------------------------------

def _torus_series_kmax(L: float) -> int:
    # terms decay like exp(-pi k L); 40 is far below double precision
    return int(math.ceil(40.0 / (math.pi * L))) + 2


def _log_abs_one_minus(a, y):
    """ln|1 - exp(-2 pi a) exp(2 pi i y)| for a >= 0, accurate near 0."""
    A = TWO_PI * a
    e = np.exp(-A)
    re = -np.expm1(-A) + 2.0 * e * np.sin(math.pi * y) ** 2
    im = e * np.sin(TWO_PI * y)
    return re, im


def _torus_smooth(T, t, y):
    L = 2.0 * T
    a = np.abs(t)
    g = t * t / (2 * L) - a / 2 + L / 12
    k = np.arange(1, _torus_series_kmax(L) + 1)
    kap = TWO_PI * k
    coef = 2.0 / (kap * np.expm1(kap * L))
    g = g + np.sum(coef * np.cos(TWO_PI * np.multiply.outer(y, k))
                   * np.cosh(np.multiply.outer(a, kap)), axis=-1)
    return g


def torus_green(T: float, p, q) -> np.ndarray:
    """Zero-mean Green function of the flat torus R/2TZ x R/Z."""
    d = torus_displacement_T(T, p, q)
    t, y = d[..., 0], d[..., 1]
    re, im = _log_abs_one_minus(np.abs(t), y)
    mod = np.hypot(re, im)
    if np.any(mod == 0.0):
        raise GreenError("coincident points")
    return _torus_smooth(T, t, y) - np.log(mod) / TWO_PI


def torus_regular_part(T: float, p, q) -> np.ndarray:
    """G(p, q) + (1/2 pi) ln|p - q| with the minimal-image distance;
    finite and smooth across the diagonal."""
    d = torus_displacement_T(T, p, q)
    t, y = d[..., 0], d[..., 1]
    re, im = _log_abs_one_minus(np.abs(t), y)
    r = np.hypot(t, y)
    mod = np.hypot(re, im)
    small = r < 1e-300
    ratio = np.where(small, TWO_PI, mod / np.where(small, 1.0, r))
    return _torus_smooth(T, t, y) - np.log(ratio) / TWO_PI


def torus_displacement_T(T, p, q):
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    L = 2.0 * T
    d = p - q
    dt = d[..., 0] - L * np.round(d[..., 0] / L)
    dy = d[..., 1] - np.round(d[..., 1])
    return np.stack([dt, dy], axis=-1)


# --- sphere -----------------------------------------------------------------

def chord(p, q) -> np.ndarray:
    u = to_cartesian(p[..., 0], p[..., 1])
    v = to_cartesian(q[..., 0], q[..., 1])
    return np.linalg.norm(u - v, axis=-1)


def sphere_green(p, q) -> np.ndarray:
    """Zero-mean Green function of the unit round sphere."""
    c = chord(np.asarray(p, float), np.asarray(q, float))
    if np.any(c == 0.0):
        raise GreenError("coincident points")
    return -np.log(c) / TWO_PI + SPHERE_CONST


# --- eigen-sums -----------------------------------------------------------------

def eigen_sum(basis: SpectralBasis, x, y) -> np.ndarray:
    """sum_j phi_j(x) phi_j(y) / lambda_j, paired elementwise."""
    fx = basis.evaluate(x)
    fy = basis.evaluate(y)
    return np.sum(fx * fy / basis.eigenvalues, axis=-1)


# --- kernels ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GreenKernel:
    """Green kernel of a compact model under a boundary condition.

    ``phi`` (optional) switches to the kernel of e^phi g0, obtained by the
    four-term mean subtraction.
    """
    surface: SurfaceModel
    condition: Condition = Condition.NEUMANN
    mode: str = "closed_form"
    n: int | None = None
    max_eigenvalue: float | None = None
    phi: ConformalFactor | None = None

    def __post_init__(self):
        if self.surface.kind is SurfaceKind.HALF_PLANE_DOZZ:
            raise GreenError("use fusion.dozz_covariance on the half-plane")
        if self.mode not in ("closed_form", "eigen_sum"):
            raise GreenError(f"unknown evaluation mode {self.mode!r}")
        object.__setattr__(self, "condition", Condition(self.condition))
        if self.mode == "eigen_sum":
            n = self.n if (self.n or self.max_eigenvalue) else 16384
            object.__setattr__(self, "_basis", build_basis(
                self.surface, self.condition, n if self.max_eigenvalue is None else None,
                self.max_eigenvalue))

    @property
    def basis(self) -> SpectralBasis:
        return self._basis

    def __call__(self, x, y) -> np.ndarray:
        if self.phi is not None:
            return green_conformal(GreenKernel(self.surface, self.condition, self.mode,
                                               self.n, self.max_eigenvalue), self.phi, x, y)
        x, y = _as_points(x), _as_points(y)
        if self.mode == "eigen_sum":
            return eigen_sum(self._basis, *np.broadcast_arrays(x, y))
        return _closed(self.surface, self.condition, x, y)

    def regular_part(self, x, y) -> np.ndarray:
        """Kernel plus (1/2 pi) ln d, d the distance used by the singular
        image (torus minimal image, or sphere chord); closed form only."""
        x, y = _as_points(x), _as_points(y)
        s = self.surface
        if s.kind is SurfaceKind.FLAT_CYLINDER:
            base = torus_regular_part(s.modulus, x, y)
            other = lambda a, b: torus_green(s.modulus, a, b)
        else:
            base = np.full(np.broadcast_shapes(x.shape, y.shape)[:-1], SPHERE_CONST)
            other = sphere_green
        if self.condition is Condition.CLOSED:
            return base
        refl = other(x, involution_map(s, y))
        return base + refl if self.condition is Condition.NEUMANN else base - refl

    def singular_distance(self, x, y) -> np.ndarray:
        if self.surface.kind is SurfaceKind.FLAT_CYLINDER:
            return np.linalg.norm(torus_displacement(self.surface, x, y), axis=-1)
        return chord(_as_points(x), _as_points(y))


def _double_closed(surface, x, y):
    if surface.kind is SurfaceKind.FLAT_CYLINDER:
        return torus_green(surface.modulus, x, y)
    return sphere_green(x, y)


def _closed(surface, condition, x, y):
    g = _double_closed(surface, x, y)
    if condition is Condition.CLOSED:
        return g
    r = _double_closed(surface, x, involution_map(surface, y))
    return g + r if condition is Condition.NEUMANN else g - r


def green_double(surface: SurfaceModel, x, y, mode: str = "closed_form",
                 n: int | None = None, max_eigenvalue: float | None = None) -> np.ndarray:
    return GreenKernel(surface, Condition.CLOSED, mode, n, max_eigenvalue)(x, y)


def green_bordered(surface: SurfaceModel, condition, x, y, mode: str = "closed_form",
                   n: int | None = None, max_eigenvalue: float | None = None) -> np.ndarray:
    """Neumann (sum) or Dirichlet (difference) kernel assembled from the
    double's kernel at (x, y) and (x, sigma y)."""
    condition = Condition(condition)
    if condition is Condition.CLOSED:
        raise GreenError("bordered kernels need a Neumann or Dirichlet condition")
    x, y = _as_points(x), _as_points(y)
    gd = GreenKernel(surface, Condition.CLOSED, mode, n, max_eigenvalue)
    a = gd(x, y)
    b = gd(x, involution_map(surface, y))
    return a + b if condition is Condition.NEUMANN else a - b


# --- one-dimensional Fourier kernels on the cylinder ----------------------------------

def neumann_mode_kernel(k, T: float, t, s) -> np.ndarray:
    """Coefficient of e^{2 pi i k (y - y')} in the cylinder Neumann kernel."""
    k = np.asarray(k)
    t, s = np.asarray(t, float), np.asarray(s, float)
    lo, hi = np.minimum(t, s), np.maximum(t, s)
    zero = (t * t + s * s) / (2 * T) - hi + T / 3
    kap = TWO_PI * np.abs(k).astype(float)
    safe = np.where(kap == 0, 1.0, kap)
    val = (np.exp(-safe * (hi - lo)) * (1 + np.exp(-2 * safe * lo))
           * (1 + np.exp(-2 * safe * (T - hi))) / (2 * safe * -np.expm1(-2 * safe * T)))
    return np.where(kap == 0, zero, val)


def cylinder_kernel_integral(surface: SurfaceModel, x, h, q=None, n_s: int = 48,
                             n_y: int = 64) -> tuple[float, float]:
    """(int G(x,.) h dv, int_boundary G(x,.) q dl) for the Neumann kernel.

    The y'-integral is done mode by mode with the exact one-dimensional
    kernels and the t'-integral by Gauss-Legendre split at t, so smooth
    h and q give spectrally accurate results despite the log singularity.
    """
    T = surface.modulus
    t, y = float(x[0]), float(x[1])
    yy = np.arange(n_y) / n_y
    kk = np.arange(n_y // 2)
    phase = np.exp(2j * math.pi * kk * y)

    def line(s, vals):
        c = np.fft.rfft(vals, axis=-1)[..., : n_y // 2] / n_y
        g = neumann_mode_kernel(kk, T, t, s[:, None])
        mult = np.where(kk == 0, 1.0, 2.0)
        return np.real(np.sum(mult * g * c * phase, axis=-1))

    xg, wg = leggauss(n_s)
    total = 0.0
    for a, b in ((0.0, t), (t, T)):
        if b - a <= 0:
            continue
        s = 0.5 * (b - a) * (xg + 1) + a
        P = np.stack(np.meshgrid(s, yy, indexing="ij"), axis=-1)
        total += float(np.sum(0.5 * (b - a) * wg * line(s, h(P))))
    bnd = 0.0
    if q is not None:
        s = np.array([0.0, T])
        P = np.stack(np.meshgrid(s, yy, indexing="ij"), axis=-1)
        bnd = float(np.sum(line(s, q(P))))
    return total, bnd


def sphere_kernel_integral(x, h, lmax: int = 96) -> float:
    """int_hemisphere G_Neumann(x,.) h dv via the harmonic expansion of the
    even extension of h (algebraic accuracy unless dh/dn = 0)."""
    xg, wg = leggauss(lmax + 2)
    nph = 2 * lmax + 2
    ph = TWO_PI * np.arange(nph) / nph
    th = np.arccos(xg)
    P = np.stack(np.meshgrid(th, ph, indexing="ij"), axis=-1)
    Pe = P.copy()
    Pe[..., 0] = np.where(P[..., 0] > math.pi / 2, math.pi - P[..., 0], P[..., 0])
    vals = h(Pe)
    leg = normalized_legendre(lmax, xg)
    leg_x = normalized_legendre(lmax, np.cos([x[0]]))[0]
    F = np.fft.rfft(vals, axis=1) * (TWO_PI / nph)
    out = 0.0
    for m in range(lmax + 1):
        cm = np.sum(wg[:, None] * leg[:, :, m] * F[:, m][:, None], axis=0)  # over l
        w = 1.0 if m == 0 else 2.0
        for l in range(max(m, 1), lmax + 1):
            out += w * np.real(cm[l] * np.exp(1j * m * x[1])) * leg_x[l, m] / (l * (l + 1))
    return float(out)


# --- conformal change ---------------------------------------------------------------

def _mean_g_of_kernel(kernel: GreenKernel, phi: ConformalFactor, x) -> float:
    s = kernel.surface
    w = lambda P: np.exp(phi(P))
    if s.kind is SurfaceKind.FLAT_CYLINDER and kernel.condition is Condition.NEUMANN \
            and kernel.mode == "closed_form":
        val, _ = cylinder_kernel_integral(s, x, w)
    elif s.kind is SurfaceKind.HEMISPHERE and kernel.condition is Condition.NEUMANN \
            and kernel.mode == "closed_form":
        val = sphere_kernel_integral(x, w)
    else:
        q = chart_quadrature(s, 128)
        val = float(np.sum(q.weights * np.exp(phi(q.points))
                           * kernel(np.broadcast_to(x, q.points.shape), q.points)))
    return val / phi.volume()


def green_conformal(kernel: GreenKernel, phi: ConformalFactor, x, y) -> np.ndarray:
    """Neumann kernel of e^phi g0:
    G - m_g G(x,.) - m_g G(.,y) + m_g m_g G."""
    if kernel.condition is not Condition.NEUMANN:
        raise GreenError("conformal change is defined for the Neumann kernel")
    x, y = _as_points(x), _as_points(y)
    x, y = np.broadcast_arrays(x, y)
    base = kernel(x, y)
    both = np.concatenate([x.reshape(-1, 2), y.reshape(-1, 2)])
    uniq, inv = np.unique(both, axis=0, return_inverse=True)
    means = np.array([_mean_g_of_kernel(kernel, phi, p) for p in uniq])[inv.ravel()]
    mx, my = np.split(means, 2)
    return base - mx.reshape(base.shape) - my.reshape(base.shape) + double_mean(kernel, phi)


def double_mean(kernel: GreenKernel, phi: ConformalFactor, n: int = 24) -> float:
    """m_g(m_g G), by Gauss quadrature of the smooth function x -> m_g G(x,.)."""
    q = chart_quadrature(kernel.surface, n)
    vals = np.array([_mean_g_of_kernel(kernel, phi, p) for p in q.points])
    return float(np.sum(q.weights * np.exp(phi(q.points)) * vals) / phi.volume())


# --- residual checks ----------------------------------------------------------

D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
D1_ONE_SIDED = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0


def analyst_laplacian_fd(surface: SurfaceModel, f, p, h: float = 0.002) -> np.ndarray:
    """Fourth-order finite-difference Laplace-Beltrami of f at chart points p."""
    p = _as_points(p)
    offs = np.arange(-2, 3) * h

    def shifted(axis):
        out = []
        for o in offs:
            q = p.copy()
            q[..., axis] += o
            out.append(f(q))
        return np.stack(out, axis=-1)
    ft = shifted(0)
    fy = shifted(1)
    d2t = ft @ D2 / h**2
    d2y = fy @ D2 / h**2
    if surface.kind is SurfaceKind.FLAT_CYLINDER:
        return d2t + d2y
    th = p[..., 0]
    d1t = ft @ D1 / h
    return d2t + d1t / np.tan(th) + d2y / np.sin(th) ** 2


def pde_residual(kernel: GreenKernel, y, points, h: float = 0.002) -> float:
    """max |Laplacian_x G(x, y) - target| over points away from y, where
    the target is 1/Vol (closed, Neumann) or 0 (Dirichlet)."""
    y = _as_points(y)
    s = kernel.surface
    if kernel.condition is Condition.CLOSED:
        target = 1.0 / s.double_volume
    elif kernel.condition is Condition.NEUMANN:
        target = 1.0 / s.volume
    else:
        target = 0.0
    f = lambda P: kernel(P, np.broadcast_to(y, P.shape))
    lap = analyst_laplacian_fd(s, f, points, h)
    return float(np.max(np.abs(lap - target)))


def normal_derivative_residual(kernel: GreenKernel, y, boundary_points, h: float = 0.01) -> float:
    """Largest of the centred (across the boundary, on the double) and
    one-sided fourth-order normal derivatives of G(., y) at the boundary."""
    s = kernel.surface
    y = _as_points(y)
    b = _as_points(boundary_points)
    f = lambda P: kernel(P, np.broadcast_to(y, P.shape))
    if s.kind is SurfaceKind.FLAT_CYLINDER:
        inward = np.where(b[..., 0] > s.modulus / 2, -1.0, 1.0)
    else:
        inward = -np.ones(b.shape[:-1])
    vals = []
    for i in range(5):
        q = b.copy()
        q[..., 0] = b[..., 0] + inward * i * h
        vals.append(f(q))
    one = np.stack(vals, -1) @ D1_ONE_SIDED / h
    q_in, q_out = b.copy(), b.copy()
    q_in[..., 0] += inward * h
    q_out[..., 0] -= inward * h
    if s.kind is SurfaceKind.FLAT_CYLINDER:
        q_out[..., 0] = np.mod(q_out[..., 0], 2 * s.modulus)
    centred = (f(q_in) - f(q_out)) / (2 * h)
    return float(max(np.max(np.abs(one)), np.max(np.abs(centred))))


def zero_average_residual(kernel: GreenKernel, x, tol: float = 1e-11) -> float:
    """|int G(x,.) dv| by adaptive quadrature with breakpoints at x."""
    s = kernel.surface
    x = _as_points(x)
    if s.kind is SurfaceKind.FLAT_CYLINDER:
        T = s.modulus

        def inner(t):
            f = lambda yy: float(kernel(x, np.array([t, yy])))
            return integrate.quad(f, 0.0, 1.0, points=[x[1]], epsabs=tol, limit=200)[0]
        val = integrate.quad(inner, 0.0, T, points=[x[0]], epsabs=tol, limit=200)[0]
    else:
        def inner(th):
            f = lambda ph: float(kernel(x, np.array([th, ph])))
            return math.sin(th) * integrate.quad(f, 0.0, TWO_PI, points=[x[1]],
                                                 epsabs=tol, limit=200)[0]
        val = integrate.quad(inner, 0.0, math.pi / 2, points=[x[0]], epsabs=tol, limit=200)[0]
    return abs(val)


@dataclass(frozen=True)
class TestFunction:
    """Smooth f with its analyst Laplacian and outward normal derivative."""
    name: str
    f: callable
    laplacian: callable
    normal_derivative: callable


def cylinder_test_functions(T: float) -> list[TestFunction]:
    w = math.pi / T
    out_sign = lambda P: np.where(P[..., 0] > T / 2, 1.0, -1.0)
    c2y = lambda P: np.cos(TWO_PI * P[..., 1])
    return [
        TestFunction("constant", lambda P: np.ones(P.shape[:-1]),
                     lambda P: np.zeros(P.shape[:-1]), lambda P: np.zeros(P.shape[:-1])),
        TestFunction("cos(2 pi y)", c2y, lambda P: -TWO_PI**2 * c2y(P),
                     lambda P: np.zeros(P.shape[:-1])),
        TestFunction("cos(pi t/T)", lambda P: np.cos(w * P[..., 0]),
                     lambda P: -w * w * np.cos(w * P[..., 0]),
                     lambda P: out_sign(P) * -w * np.sin(w * P[..., 0])),
        TestFunction("t^2", lambda P: P[..., 0] ** 2, lambda P: np.full(P.shape[:-1], 2.0),
                     lambda P: out_sign(P) * 2 * P[..., 0]),
        TestFunction("sin(pi t/2T) cos(2 pi y)",
                     lambda P: np.sin(0.5 * w * P[..., 0]) * c2y(P),
                     lambda P: -(0.25 * w * w + TWO_PI**2) * np.sin(0.5 * w * P[..., 0]) * c2y(P),
                     lambda P: out_sign(P) * 0.5 * w * np.cos(0.5 * w * P[..., 0]) * c2y(P)),
    ]


def green_identity_residual(kernel: GreenKernel, test: TestFunction, points) -> float:
    """max_x |int G(x,.) Lf dv - int_bdry G(x,.) d_n f dl + f(x) - m(f)|,
    L the analyst Laplacian and n the outward normal (cylinder, Neumann)."""
    s = kernel.surface
    if s.kind is not SurfaceKind.FLAT_CYLINDER or kernel.condition is not Condition.NEUMANN:
        raise GreenError("the identity check is implemented for the cylinder Neumann kernel")
    q = chart_quadrature(s, 64)
    mean_f = float(np.sum(q.weights * test.f(q.points)) / s.volume)
    worst = 0.0
    for x in _as_points(points).reshape(-1, 2):
        bulk, bnd = cylinder_kernel_integral(s, x, test.laplacian, test.normal_derivative)
        r = bulk - bnd + float(test.f(x)) - mean_f
        worst = max(worst, abs(r))
    return worst


# --- circle averages --------------------------------------------------------------

def _arc_log_mean(half: float) -> float:
    """Mean of ln(2 sin(|a-b|/2)) for a, b uniform on an arc of span 2*half."""
    span = 2.0 * half
    if span >= TWO_PI - 1e-14:
        return 0.0
    f = lambda u: (span - u) * math.log(2.0 * math.sin(0.5 * u))
    return 2.0 / span**2 * integrate.quad(f, 0.0, span, limit=200)[0]


def circle_average_variance(kernel: GreenKernel, x, eps: float, n: int = 48) -> float:
    """E[X_eps(x)^2] = 2 pi times the double arc-average of the kernel,
    with the logarithmic part integrated exactly."""
    s = kernel.surface
    x = _as_points(x)
    half = float(retained_half_angle(s, x, eps))
    xg, wg = leggauss(n)
    ang = half * xg
    w = 0.5 * wg
    pts = circle_points_at(s, x, eps, ang)
    r = eps if s.kind is SurfaceKind.FLAT_CYLINDER else math.sin(eps)
    log_mean = math.log(r) + _arc_log_mean(half)
    U = np.broadcast_to(pts[:, None, :], (n, n, 2))
    V = np.broadcast_to(pts[None, :, :], (n, n, 2))
    reg = kernel.regular_part(U, V)
    smooth = float(w @ reg @ w)
    return TWO_PI * smooth - log_mean


def circle_variance_ladder(kernel: GreenKernel, x, eps0: float = 0.125, levels: int = 7):
    eps = eps0 * 0.5 ** np.arange(levels)
    var = np.array([circle_average_variance(kernel, x, e) for e in eps])
    return eps, var


def extrapolate_w(eps, var) -> float:
    """Richardson limit of E[X_eps^2] + ln eps over a dyadic ladder
    (remainder O(eps^2))."""
    f = np.asarray(var) + np.log(eps)
    return float((4.0 * f[-1] - f[-2]) / 3.0)
