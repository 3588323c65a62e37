"""Bordered model surfaces, their doubles, and clipped geodesic circles.

Three geometries are supported:

* ``flat_cylinder``   [0, T] x R/Z, flat; double is the torus R/2TZ x R/Z.
* ``hemisphere``      upper half of the unit round sphere; double is S^2.
* ``half_plane_dozz`` upper half-plane with the metric |x|_+^{-4} |dx|^2.

Chart coordinates are stored as float arrays with a trailing axis of
length 2: ``(t, y)`` on the cylinder, ``(theta, phi)`` on the sphere and
``(Re z, Im z)`` on the half-plane.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from enum import Enum
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss as _leggauss


class SurfaceKind(str, Enum):
    FLAT_CYLINDER = "flat_cylinder"
    HEMISPHERE = "hemisphere"
    HALF_PLANE_DOZZ = "half_plane_dozz"


@lru_cache(maxsize=64)
def leggauss(n: int):
    """Cached Gauss-Legendre nodes and weights (read-only arrays)."""
    x, w = _leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


class SurfaceError(ValueError):
    pass


@dataclass(frozen=True)
class SurfaceModel:
    kind: SurfaceKind
    euler_char: int
    volume: float
    boundary_length: float
    scalar_curvature: float
    geodesic_curvature: float
    modulus: float | None = None
    window_radius: float | None = None
    circle_points: int = 32

    @property
    def double_volume(self) -> float:
        return 2.0 * self.volume


@dataclass(frozen=True)
class SurfacePoint:
    coords: tuple[float, float]
    on_boundary: bool = False


def build_surface(kind: str | SurfaceKind, modulus: float | None = None,
                  window_radius: float = 4.0, circle_points: int = 32) -> SurfaceModel:
    try:
        kind = SurfaceKind(kind)
    except ValueError as exc:
        raise SurfaceError(f"unknown surface kind {kind!r}") from exc
    if circle_points < 8:
        raise SurfaceError("circle_points must be at least 8")
    if kind is SurfaceKind.FLAT_CYLINDER:
        T = 1.0 if modulus is None else float(modulus)
        if not T > 0:
            raise SurfaceError(f"cylinder modulus must be positive, got {modulus}")
        return SurfaceModel(kind, 0, T, 2.0, 0.0, 0.0, modulus=T,
                            circle_points=circle_points)
    if kind is SurfaceKind.HEMISPHERE:
        return SurfaceModel(kind, 1, 2.0 * math.pi, 2.0 * math.pi, 2.0, 0.0,
                            circle_points=circle_points)
    if not window_radius > 0:
        raise SurfaceError("window radius must be positive")
    # total area of |x|_+^{-4}|dx|^2 over the upper half-plane: pi/2 + pi/2
    return SurfaceModel(kind, 1, math.pi, math.inf, 0.0, 0.0,
                        window_radius=float(window_radius),
                        circle_points=circle_points)


def _as_points(p) -> np.ndarray:
    if isinstance(p, SurfacePoint):
        p = p.coords
    return np.asarray(p, dtype=float)


# --- involution and distances ---------------------------------------------

def involution_map(surface: SurfaceModel, p) -> np.ndarray:
    """Reflection of the double fixing the boundary of the surface."""
    p = _as_points(p)
    out = np.array(p, dtype=float, copy=True)
    if surface.kind is SurfaceKind.FLAT_CYLINDER:
        L = 2.0 * surface.modulus
        if np.any(~np.isfinite(p)):
            raise SurfaceError("point outside the torus chart")
        out[..., 0] = np.mod(-p[..., 0], L)
    elif surface.kind is SurfaceKind.HEMISPHERE:
        if np.any((p[..., 0] < -1e-12) | (p[..., 0] > math.pi + 1e-12)):
            raise SurfaceError("polar angle outside [0, pi]")
        out[..., 0] = math.pi - p[..., 0]
    else:
        out[..., 1] = -p[..., 1]
    return out


def to_cartesian(theta, phi) -> np.ndarray:
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def torus_displacement(surface: SurfaceModel, p, q) -> np.ndarray:
    """Minimal-image displacement p - q on the doubled cylinder."""
    p, q = _as_points(p), _as_points(q)
    L = 2.0 * surface.modulus
    d = p - q
    dt = d[..., 0] - L * np.round(d[..., 0] / L)
    dy = d[..., 1] - np.round(d[..., 1])
    return np.stack([dt, dy], axis=-1)


def double_distance(surface: SurfaceModel, p, q) -> np.ndarray:
    """Geodesic distance on the double (chart-Euclidean on the half-plane)."""
    p, q = _as_points(p), _as_points(q)
    if surface.kind is SurfaceKind.FLAT_CYLINDER:
        return np.hypot(*np.moveaxis(torus_displacement(surface, p, q), -1, 0))
    if surface.kind is SurfaceKind.HEMISPHERE:
        a = to_cartesian(p[..., 0], p[..., 1])
        b = to_cartesian(q[..., 0], q[..., 1])
        cross = np.linalg.norm(np.cross(a, b), axis=-1)
        return np.arctan2(cross, np.sum(a * b, axis=-1))
    return np.hypot(p[..., 0] - q[..., 0], p[..., 1] - q[..., 1])


def distance_to_boundary(surface: SurfaceModel, p) -> np.ndarray:
    p = _as_points(p)
    if surface.kind is SurfaceKind.FLAT_CYLINDER:
        return np.minimum(p[..., 0], surface.modulus - p[..., 0])
    if surface.kind is SurfaceKind.HEMISPHERE:
        return math.pi / 2 - p[..., 0]
    return p[..., 1]


def contains(surface: SurfaceModel, p, tol: float = 1e-12) -> np.ndarray:
    return distance_to_boundary(surface, p) >= -tol


def on_boundary(surface: SurfaceModel, p, tol: float = 1e-12) -> np.ndarray:
    return np.abs(distance_to_boundary(surface, p)) <= tol


def make_point(surface: SurfaceModel, coords) -> SurfacePoint:
    c = tuple(float(v) for v in coords)
    if not contains(surface, c):
        raise SurfaceError(f"{c} lies outside the surface")
    return SurfacePoint(c, bool(on_boundary(surface, c)))


# --- clipped geodesic circles ---------------------------------------------

def injectivity_bound(surface: SurfaceModel) -> float:
    if surface.kind is SurfaceKind.FLAT_CYLINDER:
        return min(0.5, surface.modulus / 2.0)
    if surface.kind is SurfaceKind.HEMISPHERE:
        return math.pi / 2
    return surface.window_radius


def retained_half_angle(surface: SurfaceModel, x, eps: float) -> np.ndarray:
    """Half-width of the retained arc, measured from the inward direction.

    On the cylinder and half-plane the inward direction is the normal
    pointing away from the nearest boundary component; on the hemisphere
    it is the bearing towards the north pole.
    """
    x = _as_points(x)
    if surface.kind is SurfaceKind.HEMISPHERE:
        theta = x[..., 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            c = -np.cos(theta) * math.cos(eps) / (np.sin(theta) * math.sin(eps))
        c = np.where(np.sin(theta) < 1e-300, -np.inf, c)
        return np.arccos(np.clip(c, -1.0, 1.0))
    d = distance_to_boundary(surface, x)
    return math.pi - np.arccos(np.clip(d / eps, -1.0, 1.0))


def arc_fraction(surface: SurfaceModel, x, eps: float) -> np.ndarray:
    return retained_half_angle(surface, x, eps) / math.pi


def _inward_angle(surface: SurfaceModel, x) -> np.ndarray:
    """Chart angle of the inward direction (cylinder, half-plane)."""
    if surface.kind is SurfaceKind.FLAT_CYLINDER:
        near_top = x[..., 0] > surface.modulus / 2
        return np.where(near_top, math.pi, 0.0)
    return np.full(x.shape[:-1], math.pi / 2)


def circle_points_at(surface: SurfaceModel, x, eps: float, angles) -> np.ndarray:
    """Points on the geodesic circle of radius eps around x.

    ``angles`` are offsets from the inward direction; broadcast against x.
    """
    x = _as_points(x)
    angles = np.asarray(angles, dtype=float)
    if surface.kind is SurfaceKind.HEMISPHERE:
        th0 = x[..., 0][..., None]
        ph0 = x[..., 1][..., None]
        # bearing 0 points to the north pole
        cz = np.cos(th0) * math.cos(eps) + np.sin(th0) * math.sin(eps) * np.cos(angles)
        th = np.arccos(np.clip(cz, -1.0, 1.0))
        num = -np.sin(angles) * math.sin(eps) * np.sin(th0)
        den = math.cos(eps) - np.cos(th0) * cz
        ph = ph0 + np.arctan2(num, den)
        return np.stack([th, np.mod(ph, 2 * math.pi)], axis=-1)
    base = _inward_angle(surface, x)[..., None] + angles
    pts = np.stack([x[..., 0][..., None] + eps * np.cos(base),
                    x[..., 1][..., None] + eps * np.sin(base)], axis=-1)
    if surface.kind is SurfaceKind.FLAT_CYLINDER:
        pts[..., 0] = np.clip(pts[..., 0], 0.0, surface.modulus)
        pts[..., 1] = np.mod(pts[..., 1], 1.0)
    else:
        pts[..., 1] = np.maximum(pts[..., 1], 0.0)
    return pts


def geodesic_circle_sample(surface: SurfaceModel, x, eps: float, n: int | None = None):
    """Equally spaced points on the part of the eps-circle lying in the surface.

    Returns ``(points, weights)`` with weights summing to one over the
    retained arc, for one point ``x`` or a stack of them.
    """
    n = surface.circle_points if n is None else n
    if not eps > 0:
        raise SurfaceError("eps must be positive")
    if n < 8:
        raise SurfaceError("at least 8 circle points are required")
    if eps > injectivity_bound(surface):
        raise SurfaceError(
            f"eps={eps} exceeds the injectivity bound {injectivity_bound(surface)}")
    x = _as_points(x)
    half = retained_half_angle(surface, x, eps)
    u = (np.arange(n) + 0.5) / n
    angles = -half[..., None] + 2.0 * half[..., None] * u
    pts = circle_points_at(surface, x, eps, angles)
    weights = np.full(pts.shape[:-1], 1.0 / n)
    return pts, weights


# --- conformal factors ------------------------------------------------------

@dataclass(frozen=True)
class ConformalFactor:
    """A smooth log-conformal factor phi with g = e^phi g0.

    ``laplacian`` is the analyst's Laplace-Beltrami operator of g0
    applied to phi (nonpositive on the spectrum); ``normal_derivative`` is
    the outward normal derivative on the boundary.
    """
    surface: SurfaceModel
    phi: Callable[[np.ndarray], np.ndarray]
    grad_sq: Callable[[np.ndarray], np.ndarray]
    laplacian: Callable[[np.ndarray], np.ndarray]
    normal_derivative: Callable[[np.ndarray], np.ndarray]
    label: str = "custom"
    integrals: dict = field(default_factory=dict, compare=False)

    def __call__(self, p) -> np.ndarray:
        return self.phi(_as_points(p))

    @property
    def gradient_norm_integral(self) -> float:
        return self._integral("grad")

    @property
    def curvature_integral(self) -> float:
        return self._integral("R")

    @property
    def boundary_curvature_integral(self) -> float:
        return self._integral("k")

    def _integral(self, key):
        if key not in self.integrals:
            q = chart_quadrature(self.surface)
            b = boundary_quadrature(self.surface)
            self.integrals["grad"] = float(np.sum(q.weights * self.grad_sq(q.points)))
            self.integrals["R"] = float(self.surface.scalar_curvature
                                        * np.sum(q.weights * self.phi(q.points)))
            self.integrals["k"] = float(self.surface.geodesic_curvature
                                        * np.sum(b.weights * self.phi(b.points)))
        return self.integrals[key]

    def volume(self) -> float:
        if "volume" not in self.integrals:
            q = chart_quadrature(self.surface)
            self.integrals["volume"] = float(np.sum(q.weights * np.exp(self.phi(q.points))))
        return self.integrals["volume"]


def constant_factor(surface: SurfaceModel, a: float) -> ConformalFactor:
    zero = lambda p: np.zeros(np.shape(p)[:-1])
    return ConformalFactor(surface, lambda p: np.full(np.shape(p)[:-1], float(a)),
                           zero, zero, zero, label=f"constant({a})")


def cylinder_cosine_factor(surface: SurfaceModel, amplitude: float, k: int = 1,
                           axis: str = "y") -> ConformalFactor:
    """phi = a cos(2 pi k y) or phi = a cos(pi k t / T) on the flat cylinder."""
    if surface.kind is not SurfaceKind.FLAT_CYLINDER:
        raise SurfaceError("cosine factors are defined on the cylinder")
    a, T = float(amplitude), surface.modulus
    if axis == "y":
        w = 2 * math.pi * k
        return ConformalFactor(
            surface,
            lambda p: a * np.cos(w * p[..., 1]),
            lambda p: (a * w * np.sin(w * p[..., 1])) ** 2,
            lambda p: -a * w * w * np.cos(w * p[..., 1]),
            lambda p: np.zeros(np.shape(p)[:-1]),
            label=f"{a}*cos(2pi*{k}*y)")
    w = math.pi * k / T

    def dn(p):
        # outward normal is -t at t=0 and +t at t=T
        sgn = np.where(p[..., 0] > T / 2, 1.0, -1.0)
        return -sgn * a * w * np.sin(w * p[..., 0])
    return ConformalFactor(
        surface,
        lambda p: a * np.cos(w * p[..., 0]),
        lambda p: (a * w * np.sin(w * p[..., 0])) ** 2,
        lambda p: -a * w * w * np.cos(w * p[..., 0]),
        dn, label=f"{a}*cos(pi*{k}*t/T)")


# --- chart quadrature ---------------------------------------------------------

@dataclass(frozen=True)
class Quadrature:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        # instances are cached and shared
        self.points.setflags(write=False)
        self.weights.setflags(write=False)


@lru_cache(maxsize=32)
def chart_quadrature(surface: SurfaceModel, n: int = 256) -> Quadrature:
    """Tensor quadrature for smooth integrands: Gauss in the non-periodic
    chart direction, trapezoid in the periodic one."""
    if surface.kind is SurfaceKind.FLAT_CYLINDER:
        T = surface.modulus
        xg, wg = leggauss(n)
        t = 0.5 * T * (xg + 1.0)
        wt = 0.5 * T * wg
        y = np.arange(n) / n
        P = np.stack(np.meshgrid(t, y, indexing="ij"), axis=-1)
        W = np.outer(wt, np.full(n, 1.0 / n))
        return Quadrature(P.reshape(-1, 2), W.ravel())
    if surface.kind is SurfaceKind.HEMISPHERE:
        xg, wg = leggauss(n)
        c = 0.5 * (xg + 1.0)  # cos(theta) in (0, 1)
        th = np.arccos(c)
        ph = 2 * math.pi * np.arange(2 * n) / (2 * n)
        P = np.stack(np.meshgrid(th, ph, indexing="ij"), axis=-1)
        W = np.outer(0.5 * wg, np.full(2 * n, 2 * math.pi / (2 * n)))
        return Quadrature(P.reshape(-1, 2), W.ravel())
    R = surface.window_radius
    xg, wg = leggauss(n)
    r = 0.5 * R * (xg + 1.0)
    a = 0.5 * math.pi * (xg + 1.0)
    rr, aa = np.meshgrid(r, a, indexing="ij")
    P = np.stack([rr * np.cos(aa), rr * np.sin(aa)], axis=-1)
    W = np.outer(0.5 * R * wg * r, 0.5 * math.pi * wg)
    plus = np.maximum(np.hypot(P[..., 0], P[..., 1]), 1.0)
    return Quadrature(P.reshape(-1, 2), (W * plus ** -4).ravel())


@lru_cache(maxsize=32)
def boundary_quadrature(surface: SurfaceModel, n: int = 512) -> Quadrature:
    if surface.kind is SurfaceKind.FLAT_CYLINDER:
        y = np.arange(n) / n
        pts = np.concatenate([np.stack([np.zeros(n), y], -1),
                              np.stack([np.full(n, surface.modulus), y], -1)])
        return Quadrature(pts, np.full(2 * n, 1.0 / n))
    if surface.kind is SurfaceKind.HEMISPHERE:
        ph = 2 * math.pi * np.arange(n) / n
        return Quadrature(np.stack([np.full(n, math.pi / 2), ph], -1),
                          np.full(n, 2 * math.pi / n))
    R = surface.window_radius
    xg, wg = leggauss(n)
    x = R * xg
    plus = np.maximum(np.abs(x), 1.0)
    return Quadrature(np.stack([x, np.zeros(n)], -1), R * wg * plus ** -2)
