"""Laplacian eigenbases on the model surfaces and truncated GFF sampling.

Bases on the bordered surface are the reflection-even (Neumann) or
reflection-odd (Dirichlet) eigenfunctions of the double: Fourier modes
on the torus, real spherical harmonics on the sphere. Degenerate
eigenspaces are split into a fixed cos/sin basis and ordered
lexicographically, so a seed always maps to the same field.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special

from .surfaces import SurfaceKind, SurfaceModel


class Condition(str, Enum):
    NEUMANN = "neumann"
    DIRICHLET = "dirichlet"
    CLOSED = "closed"


class SpectralError(ValueError):
    pass


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for substream ``stream`` of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream),)))


# --- associated Legendre functions -----------------------------------------

def normalized_legendre(lmax: int, x: np.ndarray) -> np.ndarray:
    """Orthonormal associated Legendre table, shape ``(len(x), lmax+1, lmax+1)``.

    ``P[:, l, m] * exp(i m phi)`` is an L2(S^2)-normalised spherical
    harmonic (no Condon-Shortley phase).
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    P = np.zeros((x.size, lmax + 1, lmax + 1))
    P[:, 0, 0] = 1.0 / math.sqrt(4 * math.pi)
    for m in range(1, lmax + 1):
        P[:, m, m] = math.sqrt((2 * m + 1) / (2 * m)) * s * P[:, m - 1, m - 1]
    for m in range(0, lmax):
        P[:, m + 1, m] = math.sqrt(2 * m + 3) * x * P[:, m, m]
    for m in range(0, lmax + 1):
        for l in range(m + 2, lmax + 1):
            a = math.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = math.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            P[:, l, m] = a * (x * P[:, l - 1, m] - b * P[:, l - 2, m])
    return P


# --- basis ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Ascending eigenpairs; ``labels`` rows are ``(a, b, pa, pb)``.

    Cylinder: a=j (t-wavenumber pi j/T), b=k (y-wavenumber 2 pi k),
    pa/pb select cos (0) or sin (1). Sphere: a=l, b=m, pb selects
    cos/sin in phi. Functions are normalised on the surface itself, or on
    the double for ``Condition.CLOSED``.
    """
    surface: SurfaceModel
    condition: Condition
    eigenvalues: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    @property
    def scales(self) -> np.ndarray:
        """sqrt(2 pi / lambda_j), the GFF coefficient scales."""
        return np.sqrt(2 * math.pi / self.eigenvalues)

    def evaluate(self, points) -> np.ndarray:
        """Eigenfunction values, shape ``points.shape[:-1] + (N,)``."""
        p = np.asarray(points, dtype=float)
        flat = p.reshape(-1, 2)
        if self.surface.kind is SurfaceKind.FLAT_CYLINDER:
            out = self._eval_cylinder(flat)
        else:
            out = self._eval_sphere(flat)
        return out.reshape(p.shape[:-1] + (self.size,))

    def _eval_cylinder(self, p):
        T = self.surface.modulus
        a, b, pa, pb = self.labels.T
        wt = math.pi * a / T
        wy = 2 * math.pi * b
        tt = np.outer(p[:, 0], wt)
        yy = np.outer(p[:, 1], wy)
        ft = np.where(pa == 1, np.sin(tt), np.cos(tt))
        fy = np.where(pb == 1, np.sin(yy), np.cos(yy))
        return ft * fy * self._norms()

    def _eval_sphere(self, p):
        l, m, _, pb = self.labels.T
        P = normalized_legendre(int(l.max()), np.cos(p[:, 0]))
        leg = P[:, l, m]
        ang = np.outer(p[:, 1], m)
        trig = np.where(pb == 1, np.sin(ang), np.cos(ang))
        trig = np.where(m > 0, math.sqrt(2.0) * trig, 1.0)
        return leg * trig * self._norms()

    def _norms(self):
        a, b, pa, pb = self.labels.T
        if self.surface.kind is SurfaceKind.FLAT_CYLINDER:
            T = self.surface.modulus
            if self.condition is Condition.CLOSED:
                lt = np.where(a == 0, 2 * T, T)
            else:
                lt = np.where(a == 0, T, T / 2)
            ly = np.where(b == 0, 1.0, 0.5)
            return 1.0 / np.sqrt(lt * ly)
        if self.condition is Condition.CLOSED:
            return np.ones(self.size)
        return np.full(self.size, math.sqrt(2.0))

    def circle_factor(self, eps) -> np.ndarray:
        """Exact mean of each eigenfunction over a full geodesic circle,
        relative to its value at the centre."""
        eps = np.asarray(eps, dtype=float)
        if self.surface.kind is SurfaceKind.FLAT_CYLINDER:
            return special.j0(eps[..., None] * np.sqrt(self.eigenvalues))
        l = self.labels[:, 0]
        return special.eval_legendre(l, np.cos(eps)[..., None])

    def truncated(self, n: int) -> "SpectralBasis":
        return SpectralBasis(self.surface, self.condition,
                             self.eigenvalues[:n], self.labels[:n])


def _cylinder_candidates(T, condition, lam_max):
    jmax = int(math.sqrt(lam_max) * T / math.pi) + 1
    kmax = int(math.sqrt(lam_max) / (2 * math.pi)) + 1
    rows = []
    for j in range(jmax + 1):
        for k in range(kmax + 1):
            lam = (math.pi * j / T) ** 2 + (2 * math.pi * k) ** 2
            if lam > lam_max or lam == 0.0:
                continue
            if condition is Condition.NEUMANN:
                pas = [0]
            elif condition is Condition.DIRICHLET:
                pas = [1] if j > 0 else []
            else:
                pas = [0, 1] if j > 0 else [0]
            pbs = [0, 1] if k > 0 else [0]
            rows += [(lam, j, k, pa, pb) for pa in pas for pb in pbs]
    return rows


def _sphere_candidates(condition, lam_max):
    lmax = int(math.sqrt(lam_max)) + 1
    rows = []
    for l in range(1, lmax + 1):
        lam = float(l * (l + 1))
        if lam > lam_max:
            break
        for m in range(l + 1):
            even = (l + m) % 2 == 0
            if condition is Condition.NEUMANN and not even:
                continue
            if condition is Condition.DIRICHLET and even:
                continue
            for pb in ([0, 1] if m > 0 else [0]):
                rows.append((lam, l, m, 0, pb))
    return rows


def build_basis(surface: SurfaceModel, condition: Condition | str, n: int | None = None,
                max_eigenvalue: float | None = None) -> SpectralBasis:
    """The ``n`` lowest nonzero modes, or all modes with eigenvalue at most
    ``max_eigenvalue``."""
    condition = Condition(condition)
    if surface.kind is SurfaceKind.HALF_PLANE_DOZZ:
        raise SpectralError("the DOZZ half-plane uses an exact covariance, not a spectral basis")
    if n is None and max_eigenvalue is None:
        raise SpectralError("give a truncation n or max_eigenvalue")
    if n is not None and n < 1:
        raise SpectralError("truncation must be at least 1")
    area = surface.double_volume if condition is Condition.CLOSED else surface.volume
    lam_max = max_eigenvalue if max_eigenvalue is not None else 4 * math.pi * n / area * 1.5 + 200
    while True:
        if surface.kind is SurfaceKind.FLAT_CYLINDER:
            rows = _cylinder_candidates(surface.modulus, condition, lam_max)
        else:
            rows = _sphere_candidates(condition, lam_max)
        if max_eigenvalue is not None or len(rows) >= n:
            break
        lam_max *= 2
    arr = np.array(rows, dtype=float).reshape(-1, 5)
    key_lam = np.round(arr[:, 0], 9)
    order = np.lexsort((arr[:, 4], arr[:, 3], arr[:, 2], arr[:, 1], key_lam))
    arr = arr[order]
    if n is not None:
        arr = arr[:n]
    return SpectralBasis(surface, condition, arr[:, 0].copy(), arr[:, 1:].astype(np.int64))


# --- GFF sampling -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GffSample:
    """Truncated free field sqrt(2 pi) sum_j alpha_j phi_j / sqrt(lambda_j).

    ``coefficients`` has shape ``(N,)`` or ``(S, N)`` for a batch.
    """
    coefficients: np.ndarray
    basis: SpectralBasis
    seed: int | None = None
    stream: int = 0

    def evaluate(self, points) -> np.ndarray:
        phi = self.basis.evaluate(points)
        return (self.coefficients * self.basis.scales) @ np.moveaxis(phi, -1, 0).reshape(
            self.basis.size, -1)

    def surface_average(self) -> np.ndarray:
        # every retained mode is orthogonal to constants
        return np.zeros(self.coefficients.shape[:-1])


def sample_gff(basis: SpectralBasis, rng: np.random.Generator | int, size: int | None = None,
               stream: int = 0) -> GffSample:
    if basis.size == 0:
        raise SpectralError("empty basis")
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = rng_stream(seed, stream)
    shape = (basis.size,) if size is None else (size, basis.size)
    return GffSample(rng.standard_normal(shape), basis, seed, stream)


def pointwise_variance(basis: SpectralBasis, points) -> np.ndarray:
    """2 pi sum_j phi_j(x)^2 / lambda_j for the truncated field."""
    phi = basis.evaluate(points)
    return np.sum(phi ** 2 * (2 * math.pi / basis.eigenvalues), axis=-1)


def weyl_slope(basis: SpectralBasis) -> float:
    """Least-squares slope of lambda_n against n over the top half."""
    if basis.size < 100:
        raise SpectralError("weyl_slope needs at least 100 modes")
    n = np.arange(1, basis.size + 1)
    half = basis.size // 2
    slope, _ = np.polyfit(n[half:], basis.eigenvalues[half:], 1)
    return float(slope)


def weyl_prediction(basis: SpectralBasis) -> float:
    area = (basis.surface.double_volume if basis.condition is Condition.CLOSED
            else basis.surface.volume)
    return 4 * math.pi / area
