"""Scaled monomial bases and polynomial-exact quadrature on polygons and edges.

Monomials are ordered graded-lexicographically: 1, x, y, x^2, xy, y^2, ...
where x, y stand for the scaled coordinates (x - x_c) / h.
"""

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .geometry import ear_clip, fan_triangle_areas, is_star_about, polygon_area, polygon_centroid


def num_monomials(k):
    """Dimension of P_k in two variables; zero for k < 0."""
    return 0 if k < 0 else (k + 1) * (k + 2) // 2


@lru_cache(maxsize=None)
def _exponents(k):
    exps = [(d - j, j) for d in range(k + 1) for j in range(d + 1)]
    arr = np.array(exps, dtype=int).reshape(-1, 2)
    arr.setflags(write=False)
    return arr


def monomial_exponents(k):
    return _exponents(k)


def monomial_index(s1, s2):
    d = s1 + s2
    return d * (d + 1) // 2 + s2


class ScaledMonomialBasis:
    """Monomials ((x - center) / scale)^s for |s| <= degree."""

    def __init__(self, degree, center, scale):
        if degree < 0:
            raise ValueError("degree must be non-negative")
        self.degree = degree
        self.center = np.asarray(center, dtype=float)
        self.scale = float(scale)
        self.exponents = monomial_exponents(degree)

    @property
    def dim(self):
        return len(self.exponents)

    def _scaled(self, points):
        return (np.atleast_2d(points) - self.center) / self.scale

    def evaluate(self, points):
        """(npts, dim) matrix of basis values."""
        xi = self._scaled(points)
        k = self.degree
        px = xi[:, 0:1] ** np.arange(k + 1)
        py = xi[:, 1:2] ** np.arange(k + 1)
        e = self.exponents
        return px[:, e[:, 0]] * py[:, e[:, 1]]

    def gradient(self, points):
        """(npts, dim, 2) array of basis gradients."""
        vals = self.evaluate(points)
        dx, dy = self.derivative_matrices()
        return np.stack([vals @ dx, vals @ dy], axis=-1)

    def derivative_matrices(self):
        """Coefficient maps of d/dx and d/dy within the same basis.

        Column alpha of ``dx`` holds the coefficients of d m_alpha / dx.
        """
        return _derivative_matrices(self.degree, self.scale)

    def laplacian_matrix(self):
        dx, dy = self.derivative_matrices()
        return dx @ dx + dy @ dy


@lru_cache(maxsize=64)
def _derivative_matrices(k, h):
    n = num_monomials(k)
    dx = np.zeros((n, n))
    dy = np.zeros((n, n))
    for a, (s1, s2) in enumerate(monomial_exponents(k)):
        if s1 > 0:
            dx[monomial_index(s1 - 1, s2), a] = s1 / h
        if s2 > 0:
            dy[monomial_index(s1, s2 - 1), a] = s2 / h
    dx.setflags(write=False)
    dy.setflags(write=False)
    return dx, dy


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, values):
        """Integrate pointwise values; leading axis runs over points."""
        return np.tensordot(self.weights, values, axes=(0, 0))


@lru_cache(maxsize=None)
def gauss_legendre(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def reference_triangle_rule(degree):
    """Collapsed (Duffy) Gauss rule on the triangle (0,0), (1,0), (0,1).

    Gauss-Jacobi(1, 0) in the collapsed direction absorbs the Jacobian,
    so ``n = ceil((degree + 1) / 2)`` points per direction give exactness
    ``2n - 1 >= degree`` with strictly positive weights.
    """
    n = max(1, (degree + 2) // 2)
    tj, wj = roots_jacobi(n, 1.0, 0.0)
    tl, wl = gauss_legendre(n)
    u = 0.5 * (1.0 + tj)
    v = 0.5 * (1.0 + tl)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([uu.ravel(), ((1.0 - uu) * vv).ravel()])
    wts = (0.125 * np.outer(wj, wl)).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def _triangles_rule(corners, degree):
    """Map the reference rule onto triangles given as an (nt, 3, 2) array."""
    ref_pts, ref_wts = reference_triangle_rule(degree)
    a = corners[:, 0, :]
    e1 = corners[:, 1, :] - a
    e2 = corners[:, 2, :] - a
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    pts = (a[:, None, :] + ref_pts[None, :, 0:1] * e1[:, None, :]
           + ref_pts[None, :, 1:2] * e2[:, None, :])
    wts = det[:, None] * ref_wts[None, :]
    return pts.reshape(-1, 2), wts.ravel()


def polygon_quadrature(verts, degree, center=None):
    """Quadrature on a polygon exact for bivariate polynomials up to ``degree``.

    Fans from the centroid when the polygon is star-shaped about it,
    otherwise falls back to an ear-clipping triangulation.
    """
    verts = np.asarray(verts, dtype=float)
    if center is None:
        center = polygon_centroid(verts)
    if is_star_about(verts, center):
        nxt = np.roll(verts, -1, axis=0)
        corners = np.stack([np.broadcast_to(center, verts.shape), verts, nxt], axis=1)
    else:
        tris = ear_clip(verts)
        corners = verts[tris]
    pts, wts = _triangles_rule(corners, degree)
    return QuadratureRule(pts, wts, degree)


def edge_quadrature(a, b, degree):
    """Gauss-Legendre rule on the segment a-b; weights sum to its length."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = np.linalg.norm(b - a)
    if length <= 0.0:
        raise ValueError("degenerate edge: zero length")
    n = max(1, (degree + 2) // 2)
    t, w = gauss_legendre(n)
    s = 0.5 * (1.0 + t)
    pts = a + s[:, None] * (b - a)
    return QuadratureRule(pts, 0.5 * length * w, degree)


def monomial_mass_matrix(basis, verts, quad=None):
    """H[a, b] = integral over the polygon of m_a m_b."""
    if quad is None:
        quad = polygon_quadrature(verts, 2 * basis.degree + 2)
    vals = basis.evaluate(quad.points)
    H = (vals * quad.weights[:, None]).T @ vals
    H = 0.5 * (H + H.T)
    cond = np.linalg.cond(H)
    if cond > 1e15:
        warnings.warn(f"monomial mass matrix is ill-conditioned (cond={cond:.2e})",
                      RuntimeWarning, stacklevel=2)
    return H


def fan_is_positive(verts):
    """True when every centroid-fan triangle has positive orientation."""
    verts = np.asarray(verts, dtype=float)
    if polygon_area(verts) <= 0.0:
        return False
    return bool(np.all(fan_triangle_areas(verts, polygon_centroid(verts)) > 0.0))
