"""Circle-average regularised fields and bulk/boundary chaos measures.

The Neumann eigenfunctions on both compact models separate as a profile
in the non-periodic chart variable (t, or theta) times a Fourier mode in
the periodic one (y, or phi). Circle averages preserve the Fourier index,
so the regularised field on a tensor mesh is

    X_eps(row, col) = Re sum_k e^{i k col} sum_j M[row, j, k] zeta[j, k],

where M holds circle-averaged profiles and zeta the scaled Gaussian
coefficients. ``ModeGrid`` builds M for mesh rows and arbitrary probe
points, and exposes the same rows as dense vectors in basis order, so
variances, covariances and Girsanov shifts are exact for the sampled
(truncated) field.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .parallel import map_chunks, mean_and_stderr
from .spectral import (Condition, GffSample, build_basis,
                       normalized_legendre)
from .surfaces import (ConformalFactor, SurfaceKind, SurfaceModel,
                       geodesic_circle_sample, retained_half_angle)


class GmcError(ValueError):
    pass


def liouville_q(gamma: float) -> float:
    return 2.0 / gamma + gamma / 2.0


def default_modes(surface: SurfaceModel, eps: float, cap: int = 32768) -> int:
    """Truncation resolving eps: about eps * sqrt(lambda_max) = 8."""
    n = int(math.ceil(5.1 * surface.volume / eps**2))
    return int(min(max(n, 1024), cap))


# --- meshes --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Mesh:
    """Tensor mesh: bulk cell centres ``rows x cols`` and boundary cells.

    Rows are t (cylinder) or theta (hemisphere); columns y or phi.
    ``cell_measure`` has one entry per row.
    """
    surface: SurfaceModel
    rows: np.ndarray
    cols: np.ndarray
    cell_measure: np.ndarray
    boundary_rows: np.ndarray
    boundary_cols: np.ndarray
    boundary_measure: float

    @property
    def h(self) -> float:
        return float(self.rows[1] - self.rows[0]) if self.rows.size > 1 else float(self.rows[0] * 2)

    def centers(self) -> np.ndarray:
        return np.stack(np.meshgrid(self.rows, self.cols, indexing="ij"), axis=-1)

    def boundary_centers(self) -> np.ndarray:
        return np.stack(np.meshgrid(self.boundary_rows, self.boundary_cols, indexing="ij"), axis=-1)

    def volumes(self) -> np.ndarray:
        return np.broadcast_to(self.cell_measure[:, None], (self.rows.size, self.cols.size))


def build_mesh(surface: SurfaceModel, h: float) -> Mesh:
    if surface.kind is SurfaceKind.FLAT_CYLINDER:
        T = surface.modulus
        R = int(math.ceil(T / h))
        M = int(math.ceil(1.0 / h))
        rows = (np.arange(R) + 0.5) * T / R
        cols = np.arange(M) / M
        return Mesh(surface, rows, cols, np.full(R, T / R / M),
                    np.array([0.0, T]), cols, 1.0 / M)
    if surface.kind is SurfaceKind.HEMISPHERE:
        R = int(math.ceil(0.5 * math.pi / h))
        M = int(math.ceil(2 * math.pi / h))
        edges = np.linspace(0.0, 0.5 * math.pi, R + 1)
        rows = 0.5 * (edges[1:] + edges[:-1])
        cols = 2 * math.pi * np.arange(M) / M
        meas = (np.cos(edges[:-1]) - np.cos(edges[1:])) * 2 * math.pi / M
        return Mesh(surface, rows, cols, meas, np.array([0.5 * math.pi]), cols,
                    2 * math.pi / M)
    raise GmcError("tensor meshes exist for the compact models only")


# --- separable mode grid ------------------------------------------------------------

class ModeGrid:
    """Neumann modes arranged as (profile index j, Fourier index k).

    The truncation is closed under degeneracy (all modes with eigenvalue
    at most that of the ``n_modes``-th), so cos/sin partners always come
    together and the field is rotation invariant.
    """

    def __init__(self, surface: SurfaceModel, n_modes: int | None = None,
                 max_eigenvalue: float | None = None):
        if max_eigenvalue is None:
            if n_modes is None:
                raise GmcError("give n_modes or max_eigenvalue")
            max_eigenvalue = float(build_basis(surface, Condition.NEUMANN, n_modes).eigenvalues[-1])
        self.surface = surface
        self.basis = build_basis(surface, Condition.NEUMANN, max_eigenvalue=max_eigenvalue)
        a, b, _, pb = self.basis.labels.T
        self.J, self.K = int(a.max()) + 1, int(b.max()) + 1
        self.idx_c = np.full((self.J, self.K), -1)
        self.idx_s = np.full((self.J, self.K), -1)
        pos = np.arange(self.basis.size)
        self.idx_c[a[pb == 0], b[pb == 0]] = pos[pb == 0]
        self.idx_s[a[pb == 1], b[pb == 1]] = pos[pb == 1]
        self.mask = self.idx_c >= 0
        scale = self.basis.scales * self.basis._norms()
        self.scale = np.zeros((self.J, self.K))
        self.scale[a[pb == 0], b[pb == 0]] = scale[pb == 0]
        lam = np.zeros((self.J, self.K))
        lam[a, b] = self.basis.eigenvalues
        self.eigenvalues = lam
        self._flat_indices()

    @property
    def size(self) -> int:
        return self.basis.size

    # coefficients
    def zeta(self, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Scaled coefficients as real and imaginary parts, each (K, J, S)."""
        xt = np.ascontiguousarray(np.atleast_2d(np.asarray(xi, dtype=float)).T)
        S = xt.shape[1]
        zr = np.zeros((self.K * self.J, S))
        zi = np.zeros((self.K * self.J, S))
        zr[self._cpos] = xt[self._cidx] * self._cscale[:, None]
        zi[self._spos] = -xt[self._sidx] * self._sscale[:, None]
        return zr.reshape(self.K, self.J, S), zi.reshape(self.K, self.J, S)

    def _flat_indices(self):
        jj, kk = np.nonzero(self.mask)
        self._cpos = kk * self.J + jj
        self._cidx = self.idx_c[jj, kk]
        self._cscale = self.scale[jj, kk]
        has = self.idx_s[jj, kk] >= 0
        self._spos = self._cpos[has]
        self._sidx = self.idx_s[jj[has], kk[has]]
        self._sscale = self._cscale[has]

    # multipliers
    def multipliers(self, rows, eps: float, arc_points: int | None = None) -> np.ndarray:
        """Circle-averaged profiles for chart rows (all at column 0),
        shape ``(R, J, K)``; ``eps=0`` gives point values."""
        rows = np.atleast_1d(np.asarray(rows, dtype=float))
        out = np.empty((rows.size, self.J, self.K))
        full = np.ones(rows.size, bool)
        if eps > 0:
            probe = np.stack([rows, np.zeros_like(rows)], -1)
            full = retained_half_angle(self.surface, probe, eps) >= math.pi - 1e-14
        if np.any(full):
            out[full] = self._full_circle(rows[full], eps)
        if np.any(~full):
            out[~full] = self._arc(rows[~full], eps, arc_points)
        out *= self.mask
        return out

    def _profiles(self, u):
        """Profile values times Fourier normalisation at chart rows u."""
        j = np.arange(self.J)
        if self.surface.kind is SurfaceKind.FLAT_CYLINDER:
            T = self.surface.modulus
            prof = np.cos(math.pi * np.multiply.outer(u, j) / T)
            return np.repeat(prof[..., None], self.K, axis=-1)
        P = normalized_legendre(self.J - 1, np.cos(u).ravel())[:, :, : self.K]
        P = P.reshape(np.shape(u) + (self.J, self.K))
        return P * np.where(np.arange(self.K) > 0, math.sqrt(2.0), 1.0)

    def _full_circle(self, rows, eps):
        prof = self._profiles(rows)
        if eps == 0:
            return prof
        if self.surface.kind is SurfaceKind.FLAT_CYLINDER:
            fac = special.j0(eps * np.sqrt(self.eigenvalues))
        else:
            fac = special.eval_legendre(np.arange(self.J), math.cos(eps))[:, None]
        return prof * fac

    def _arc(self, rows, eps, n):
        probe = np.stack([rows, np.zeros_like(rows)], -1)
        pts, w = geodesic_circle_sample(self.surface, probe, eps, n)
        prof = self._profiles(pts[..., 0])  # (R, n, J, K)
        k = np.arange(self.K)
        if self.surface.kind is SurfaceKind.FLAT_CYLINDER:
            ang = 2 * math.pi * pts[..., 1]
        else:
            ang = pts[..., 1]
        four = np.cos(np.multiply.outer(ang, k))  # (R, n, K)
        return np.einsum("rn,rnjk,rnk->rjk", w, prof, four)

    def phases(self, cols) -> np.ndarray:
        cols = np.asarray(cols, dtype=float)
        k = np.arange(self.K)
        if self.surface.kind is SurfaceKind.FLAT_CYLINDER:
            return np.exp(2j * math.pi * np.multiply.outer(cols, k))
        return np.exp(1j * np.multiply.outer(cols, k))

    # evaluation
    @staticmethod
    def kernel_layout(mult) -> np.ndarray:
        """(R, J, K) multipliers rearranged to contiguous (K, R, J)."""
        return np.ascontiguousarray(np.asarray(mult).transpose(2, 0, 1))

    def _row_sums(self, zeta, mult_t):
        zr, zi = zeta
        return np.matmul(mult_t, zr), np.matmul(mult_t, zi)  # (K, R, S) each

    def evaluate_mesh(self, zeta, mult, cols, layout: np.ndarray | None = None) -> np.ndarray:
        """Field on rows x cols, shape ``(S, R, M)``."""
        mt = self.kernel_layout(mult) if layout is None else layout
        sr, si = self._row_sums(zeta, mt)
        K, R, S = sr.shape
        E = self.phases(cols)  # (M, K)
        er = np.ascontiguousarray(E.real.T)
        ei = np.ascontiguousarray(E.imag.T)
        X = sr.reshape(K, -1).T @ er - si.reshape(K, -1).T @ ei
        return X.reshape(R, S, -1).transpose(1, 0, 2)

    def evaluate_probes(self, zeta, mult, cols) -> np.ndarray:
        """Field at probe p = (row p, column p), shape ``(S, P)``."""
        sr, si = self._row_sums(zeta, self.kernel_layout(mult))
        E = self.phases(cols)  # (P, K)
        return np.einsum("kps,pk->sp", sr, E.real) - np.einsum("kps,pk->sp", si, E.imag)

    def dense_rows(self, mult, cols) -> np.ndarray:
        """The same probes as dense vectors in basis order, shape ``(P, N)``."""
        E = self.phases(cols)[:, None, :]  # (P, 1, K)
        z = E * mult * self.scale
        out = np.zeros((mult.shape[0], self.size))
        jj, kk = np.nonzero(self.mask)
        out[:, self.idx_c[jj, kk]] = z[:, jj, kk].real
        has_s = self.idx_s[jj, kk] >= 0
        out[:, self.idx_s[jj[has_s], kk[has_s]]] = z[:, jj[has_s], kk[has_s]].imag
        return out

    def row_variance(self, mult) -> np.ndarray:
        """Variance of the field on each row (rotation invariant)."""
        return np.sum((mult * self.scale) ** 2, axis=(1, 2))

    def integral_row(self, f, n: int = 64) -> np.ndarray:
        """Dense vector r with r . xi = int f X dv0 for the sampled field."""
        from .surfaces import chart_quadrature
        q = chart_quadrature(self.surface, n)
        rows_u = np.unique(q.points[:, 0])
        out = np.zeros(self.size)
        pts = q.points.reshape(rows_u.size, -1, 2)
        wts = q.weights.reshape(rows_u.size, -1)
        mult = self.multipliers(rows_u, 0.0)
        for r in range(rows_u.size):
            vals = f(pts[r]) * wts[r]
            out += vals @ self.dense_rows(np.broadcast_to(mult[r], (pts.shape[1],) + mult.shape[1:]),
                                          pts[r, :, 1])
        return out

    def boundary_integral_row(self, f, n: int = 256) -> np.ndarray:
        from .surfaces import boundary_quadrature
        b = boundary_quadrature(self.surface, n)
        mult = self.multipliers(b.points[:, 0], 0.0)
        return (f(b.points) * b.weights) @ self.dense_rows(mult, b.points[:, 1])


# --- regularised fields ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RegularizedField:
    """Circle-averaged field values at mesh nodes for a batch of samples.

    ``bulk`` has shape (S, R, M), ``boundary`` (S, B, Mb); the variance
    tables are exact for the truncated field that was sampled.
    """
    mesh: Mesh
    eps: float
    bulk: np.ndarray
    boundary: np.ndarray
    bulk_variance: np.ndarray
    boundary_variance: np.ndarray


@dataclass(frozen=True, eq=False)
class FieldLevel:
    """Multipliers of one regularisation level on one mesh."""
    grid: ModeGrid
    mesh: Mesh
    eps: float
    bulk_mult: np.ndarray
    boundary_mult: np.ndarray

    def variance_tables(self):
        return self.grid.row_variance(self.bulk_mult), self.grid.row_variance(self.boundary_mult)

    def __post_init__(self):
        object.__setattr__(self, "_bulk_t", ModeGrid.kernel_layout(self.bulk_mult))
        object.__setattr__(self, "_bnd_t", ModeGrid.kernel_layout(self.boundary_mult))

    def evaluate(self, zeta) -> tuple[np.ndarray, np.ndarray]:
        return (self.grid.evaluate_mesh(zeta, self.bulk_mult, self.mesh.cols, self._bulk_t),
                self.grid.evaluate_mesh(zeta, self.boundary_mult, self.mesh.boundary_cols,
                                        self._bnd_t))


def field_level(grid: ModeGrid, eps: float, mesh: Mesh | None = None) -> FieldLevel:
    mesh = mesh if mesh is not None else build_mesh(grid.surface, eps / 2)
    if mesh.h > eps / 2 + 1e-12:
        raise GmcError(f"mesh spacing {mesh.h:.4g} does not resolve eps={eps} (need <= eps/2)")
    return FieldLevel(grid, mesh, eps, grid.multipliers(mesh.rows, eps),
                      grid.multipliers(mesh.boundary_rows, eps))


def regularize_field(sample: GffSample, eps: float, mesh: Mesh | None = None,
                     grid: ModeGrid | None = None) -> RegularizedField:
    """Circle averages of a spectral sample at the mesh nodes."""
    if grid is None:
        grid = ModeGrid(sample.basis.surface, max_eigenvalue=float(sample.basis.eigenvalues[-1]))
    if grid.size != sample.basis.size or not np.array_equal(grid.basis.labels, sample.basis.labels):
        raise GmcError("sample basis must be closed under degeneracy; build it from ModeGrid.basis")
    lvl = field_level(grid, eps, mesh)
    xi = np.atleast_2d(sample.coefficients)
    bulk, bnd = lvl.evaluate(grid.zeta(xi))
    vb, vd = lvl.variance_tables()
    return RegularizedField(lvl.mesh, eps, bulk, bnd, vb, vd)


# --- measures ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GmcMeasure:
    kind: str
    gamma: float
    eps: float
    weights: np.ndarray          # (S, cells)
    centers: np.ndarray          # (cells, 2)
    cell_measure: np.ndarray     # (cells,)
    critical: bool

    def total_mass(self) -> np.ndarray:
        return np.sum(self.weights, axis=-1)

    def mass_of(self, cells) -> np.ndarray:
        idx = np.asarray(cells)
        if idx.dtype != bool:
            idx = idx.astype(np.intp)
        return np.sum(self.weights[..., idx], axis=-1)

    def to_csv(self, path, sample: int = 0) -> None:
        """Columns: cell_id, coord0, coord1, weight."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell_id", "coord0", "coord1", "weight"])
            for i, (c, wt) in enumerate(zip(self.centers, self.weights[sample])):
                w.writerow([i, repr(float(c[0])), repr(float(c[1])), repr(float(wt))])


def _check_gamma(gamma):
    if not 0 < gamma <= 2:
        raise GmcError(f"gamma must lie in (0, 2], got {gamma}")


def critical_factor(gamma: float, eps: float) -> float:
    return math.sqrt(math.log(1.0 / eps)) if gamma == 2 else 1.0


def chaos_weights(values, measure, gamma, eps, kind):
    """Cell weights from field values (any leading shape) and cell measures."""
    if kind == "bulk":
        lw = gamma * values + 0.5 * gamma**2 * math.log(eps)
    else:
        lw = 0.5 * gamma * values + 0.25 * gamma**2 * math.log(eps)
    return measure * np.exp(lw) * critical_factor(gamma, eps)


def bulk_measure(field: RegularizedField, gamma: float) -> GmcMeasure:
    _check_gamma(gamma)
    S = field.bulk.shape[0]
    vol = field.mesh.volumes().ravel()
    w = chaos_weights(field.bulk.reshape(S, -1), vol, gamma, field.eps, "bulk")
    return GmcMeasure("bulk", gamma, field.eps, w, field.mesh.centers().reshape(-1, 2), vol,
                      gamma == 2)


def boundary_measure(field: RegularizedField, gamma: float) -> GmcMeasure:
    _check_gamma(gamma)
    S = field.boundary.shape[0]
    c = field.mesh.boundary_centers().reshape(-1, 2)
    ln = np.full(c.shape[0], field.mesh.boundary_measure)
    w = chaos_weights(field.boundary.reshape(S, -1), ln, gamma, field.eps, "boundary")
    return GmcMeasure("boundary", gamma, field.eps, w, c, ln, gamma == 2)


def expected_mass(level: FieldLevel, gamma: float, kind: str = "bulk") -> float:
    """Gaussian-moment closed form of E[total mass] for the sampled field."""
    vb, vd = level.variance_tables()
    eps = level.eps
    if kind == "bulk":
        per_row = np.exp(0.5 * gamma**2 * (vb + math.log(eps)))
        total = np.sum(level.mesh.cell_measure * per_row) * level.mesh.cols.size
    else:
        per_row = np.exp(gamma**2 / 8 * vd + gamma**2 / 4 * math.log(eps))
        total = np.sum(per_row) * level.mesh.boundary_measure * level.mesh.boundary_cols.size
    return float(total * critical_factor(gamma, eps))


def measure_change(measure: GmcMeasure, phi: ConformalFactor, field_mean) -> GmcMeasure:
    """Reweight a g0-measure into the measure of g = e^phi g0, given the
    per-sample mean m_g(X) of the g0 field."""
    Q = liouville_q(measure.gamma)
    m = np.asarray(field_mean, dtype=float).reshape(-1, 1)
    a = measure.gamma if measure.kind == "bulk" else 0.5 * measure.gamma
    factor = np.exp(a * (0.5 * Q * phi(measure.centers)[None, :] - m))
    return GmcMeasure(measure.kind, measure.gamma, measure.eps, measure.weights * factor,
                      measure.centers, measure.cell_measure, measure.critical)


def negative_moment(masses, p: float) -> tuple[float, float]:
    """Sample estimate of E[M^-p] and its standard error."""
    masses = np.asarray(masses, dtype=float)
    if p <= 0:
        raise GmcError("p must be positive")
    if np.any(masses <= 0):
        raise GmcError("zero mass encountered; eps is under-resolved")
    mean, err = mean_and_stderr(masses ** -p)
    return float(mean), float(err)


# --- Monte Carlo over an eps ladder ---------------------------------------------------

def eps_ladder(eps0: float = 0.125, levels: int = 7) -> np.ndarray:
    return eps0 * 0.5 ** np.arange(levels)


def interior_rows(mesh: Mesh, margin: float) -> np.ndarray:
    """Rows whose cells lie at distance >= margin from the boundary."""
    if mesh.surface.kind is SurfaceKind.FLAT_CYLINDER:
        return (mesh.rows >= margin) & (mesh.rows <= mesh.surface.modulus - margin)
    return mesh.rows <= 0.5 * math.pi - margin


def ladder_masses(grid: ModeGrid, eps_list, gamma: float, n_samples: int, seed: int,
                  workers: int = 1, chunk: int = 256, margin: float = 0.25) -> dict:
    """Total bulk and boundary masses, and the bulk mass of the interior set
    {distance to boundary >= margin}, each of shape (S, levels), from one
    coupled set of fields (the same Gaussian coefficients at every eps)."""
    _check_gamma(gamma)
    levels = [field_level(grid, float(e)) for e in eps_list]
    inner = [interior_rows(lv.mesh, margin) for lv in levels]

    def work(rng, size, _):
        xi = rng.standard_normal((size, grid.size))
        z = grid.zeta(xi)
        out = np.empty((size, len(levels), 3))
        for i, lv in enumerate(levels):
            b, d = lv.evaluate(z)
            w = chaos_weights(b, lv.mesh.volumes(), gamma, lv.eps, "bulk").sum(axis=2)
            out[:, i, 0] = w.sum(axis=1)
            out[:, i, 2] = w[:, inner[i]].sum(axis=1)
            out[:, i, 1] = np.sum(chaos_weights(d, lv.mesh.boundary_measure, gamma, lv.eps,
                                                "boundary"), axis=(1, 2))
        return out

    res = map_chunks(work, n_samples, seed, workers, chunk)
    return {
        "eps": np.asarray(eps_list, float),
        "bulk": res[..., 0],
        "boundary": res[..., 1],
        "interior": res[..., 2],
        "expected_bulk": np.array([expected_mass(lv, gamma, "bulk") for lv in levels]),
        "expected_boundary": np.array([expected_mass(lv, gamma, "boundary") for lv in levels]),
    }


def cauchy_differences(masses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """E[(M_eps - M_eps/2)^2] along the ladder with standard errors."""
    d = np.diff(masses, axis=1) ** 2
    return mean_and_stderr(d)
