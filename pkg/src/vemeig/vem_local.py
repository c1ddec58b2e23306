"""Local virtual element machinery on a single polygon.

Degrees of freedom of the order-k space on a cell with n_V vertices, in
this fixed order:

* vertex values, vertices counterclockwise;
* per edge (counterclockwise from edge V_0 V_1), the k-1 scaled moments
  (1/|e|) int_e v m_j with m_j = ((x - x_e) . t_e / h_e)^j, where t_e is the
  edge's *global* tangent (lower to higher global vertex index);
* the k(k-1)/2 scaled internal moments (1/|P|) int_P v m_b, m_b in M_{k-2}(P).

Edge traces are degree-k polynomials parametrised by t in [-1, 1] running
along the global tangent, stored in a Legendre basis.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from numpy.polynomial import legendre as npleg

from .geometry import outward_normals, polygon_area, polygon_centroid, polygon_diameter
from .polybasis import (ScaledMonomialBasis, gauss_legendre, monomial_mass_matrix,
                        num_monomials, polygon_quadrature)


class ElementError(RuntimeError):
    """Raised when an element's projector systems cannot be solved."""


@dataclass(frozen=True)
class LocalDofLayout:
    k: int
    n_vertices: int

    @property
    def n_edge_moments(self):
        return self.k - 1

    @property
    def n_internal(self):
        return self.k * (self.k - 1) // 2

    @property
    def size(self):
        return self.n_vertices * self.k + self.n_internal

    @property
    def vertex_dofs(self):
        return np.arange(self.n_vertices)

    def edge_dofs(self, i):
        m = self.k - 1
        return self.n_vertices + i * m + np.arange(m)

    @property
    def internal_dofs(self):
        start = self.n_vertices * self.k
        return np.arange(start, start + self.n_internal)

    def kinds(self):
        """Per-DoF tags: 'vertex', 'edge' or 'internal'."""
        return (["vertex"] * self.n_vertices
                + ["edge"] * (self.n_vertices * (self.k - 1))
                + ["internal"] * self.n_internal)


def local_dof_layout(k, n_vertices):
    if k < 1:
        raise ValueError("polynomial degree k must be >= 1")
    return LocalDofLayout(k, n_vertices)


@lru_cache(maxsize=None)
def edge_dof_matrices(k):
    """Map from Legendre trace coefficients to edge DoFs, and its inverse.

    Rows: [v(t=-1), v(t=+1), moment_0, ..., moment_{k-2}]; the moment of
    order j is (1/2) int_{-1}^{1} v(t) (t/2)^j dt.
    """
    R = np.zeros((k + 1, k + 1))
    R[0] = npleg.legvander(np.array([-1.0]), k)[0]
    R[1] = npleg.legvander(np.array([1.0]), k)[0]
    t, w = gauss_legendre(k + 1)
    P = npleg.legvander(t, k)
    for j in range(k - 1):
        R[2 + j] = 0.5 * (w * (t / 2.0) ** j) @ P
    Rinv = np.linalg.inv(R)
    R.setflags(write=False)
    Rinv.setflags(write=False)
    return R, Rinv


def reconstruct_edge_trace(start_value, end_value, moments, k):
    """Degree-k trace on an edge from its endpoint values and scaled moments.

    Returns a ``numpy.polynomial.Legendre`` in the edge parameter t in
    [-1, 1] (t = -1 at the start vertex).
    """
    moments = np.atleast_1d(np.asarray(moments, dtype=float))
    if len(moments) != k - 1:
        raise ValueError(f"expected {k - 1} edge moments, got {len(moments)}")
    _, Rinv = edge_dof_matrices(k)
    coef = Rinv @ np.concatenate([[start_value, end_value], moments])
    return npleg.Legendre(coef)


def edge_trace_dofs(trace, k):
    """Inverse of reconstruct_edge_trace."""
    R, _ = edge_dof_matrices(k)
    coef = np.zeros(k + 1)
    c = trace.coef[: k + 1]
    coef[: len(c)] = c
    return R @ coef


@dataclass
class ElementOperators:
    """Projector matrices of one element.

    ``*_star`` matrices map local DoFs to scaled-monomial coefficients;
    ``pi_nabla`` and ``pi0`` are the same projectors expressed back in DoFs.
    """
    k: int
    layout: LocalDofLayout
    area: float
    centroid: np.ndarray
    diameter: float
    basis: ScaledMonomialBasis
    H: np.ndarray
    G: np.ndarray
    B: np.ndarray
    D: np.ndarray
    pi_nabla_star: np.ndarray
    pi_nabla: np.ndarray
    pi0_star: np.ndarray
    pi0: np.ndarray
    pi0_grad_x_star: np.ndarray
    pi0_grad_y_star: np.ndarray
    # boundary-plus-interior right-hand sides of the gradient projector
    Rx: np.ndarray = field(default=None, repr=False)
    Ry: np.ndarray = field(default=None, repr=False)
    _extended: object = field(default=None, repr=False, compare=False)

    def extended(self):
        """The same operators in extended precision (np.longdouble), cached.

        Each projector is re-solved by iterative refinement against its
        defining system evaluated in extended precision; used to evaluate
        Rayleigh quotients below double-precision round-off.
        """
        if self._extended is None:
            self._extended = _extended_operators(self)
        return self._extended

    @property
    def G_tilde(self):
        """G with the averaging row zeroed: the pure grad-grad Gram matrix."""
        Gt = self.G.copy()
        Gt[0] = 0.0
        return Gt

    @property
    def H_low(self):
        """Mass matrix of M_{k-1}, the range of the gradient projector."""
        n = num_monomials(self.k - 1)
        return self.H[:n, :n]


def _edge_data(verts, k, orient):
    """Per-edge Gauss points, weights and trace evaluation operators."""
    nV = len(verts)
    t, w = gauss_legendre(k + 1)
    _, Rinv = edge_dof_matrices(k)
    trace_op = npleg.legvander(t, k) @ Rinv
    normals = outward_normals(verts)
    layout = LocalDofLayout(k, nV)
    out = []
    for i in range(nV):
        j = (i + 1) % nV
        if orient[i] > 0:
            a, b, ia, ib = verts[i], verts[j], i, j
        else:
            a, b, ia, ib = verts[j], verts[i], j, i
        he = float(np.linalg.norm(b - a))
        pts = 0.5 * (a + b) + 0.5 * t[:, None] * (b - a)
        idx = np.concatenate([[ia, ib], layout.edge_dofs(i)]).astype(int)
        out.append((pts, 0.5 * he * w, t, w, idx, normals[i]))
    return out, trace_op


def element_operators(verts, k, orient=None):
    """Build G, B, D, H and the projector matrices for one polygon."""
    verts = np.asarray(verts, dtype=float)
    nV = len(verts)
    if orient is None:
        orient = np.ones(nV, dtype=int)
    area = polygon_area(verts)
    if not area > 0.0:
        raise ElementError("element has non-positive area")
    xc = polygon_centroid(verts)
    hP = polygon_diameter(verts)
    basis = ScaledMonomialBasis(k, xc, hP)
    layout = local_dof_layout(k, nV)
    NP = layout.size
    Nk = num_monomials(k)
    Nl = num_monomials(k - 2)
    Nk1 = num_monomials(k - 1)
    internal = layout.internal_dofs

    quad = polygon_quadrature(verts, 2 * k + 2, center=xc)
    H = monomial_mass_matrix(basis, verts, quad)
    edges, trace_op = _edge_data(verts, k, orient)

    # D: DoFs of each scaled monomial
    D = np.zeros((NP, Nk))
    D[:nV] = basis.evaluate(verts)
    for i, (pts, _, t, w, _, _) in enumerate(edges):
        mv = basis.evaluate(pts)
        for j, row in enumerate(layout.edge_dofs(i)):
            D[row] = 0.5 * (w * (t / 2.0) ** j) @ mv
    if Nl:
        D[internal] = H[:Nl] / area

    # B by integration by parts
    B = np.zeros((Nk, NP))
    lap = basis.laplacian_matrix()
    if Nl:
        B[:, internal] -= area * lap[:Nl].T
    dxm, dym = basis.derivative_matrices()
    Rx = np.zeros((Nk1, NP))
    Ry = np.zeros((Nk1, NP))
    if Nl:
        Rx[:, internal] -= area * dxm[:Nl, :Nk1].T
        Ry[:, internal] -= area * dym[:Nl, :Nk1].T
    for pts, wq, _, _, idx, n in edges:
        mv = basis.evaluate(pts)
        gn = basis.gradient(pts) @ n
        B[:, idx] += (gn * wq[:, None]).T @ trace_op
        mw = (mv[:, :Nk1] * wq[:, None]).T @ trace_op
        Rx[:, idx] += n[0] * mw
        Ry[:, idx] += n[1] * mw
    B[0] = 0.0
    if k == 1:
        B[0, :nV] = 1.0 / nV
    else:
        B[0, internal[0]] = 1.0

    grads = basis.gradient(quad.points)
    G = np.einsum("q,qad,qbd->ab", quad.weights, grads, grads)
    G[0] = D[:nV].mean(axis=0) if k == 1 else H[0] / area

    try:
        pi_nabla_star = _elliptic_projector(G, B, D)
        pi0_star = _pi0_from_pi_nabla(H, pi_nabla_star, area, internal, Nl, NP)
        # gradient projector as grad(Pi_nabla v) plus a correction that
        # vanishes on polynomials, so that P_k is reproduced to roundoff
        Xl = pi_nabla_star.astype(np.longdouble)
        resid = np.eye(NP, dtype=np.longdouble) - D.astype(np.longdouble) @ Xl
        Hc1 = sla.cho_factor(H[:Nk1, :Nk1])
        gx = (dxm[:Nk1] @ Xl + sla.cho_solve(Hc1, (Rx @ resid).astype(float))).astype(float)
        gy = (dym[:Nk1] @ Xl + sla.cho_solve(Hc1, (Ry @ resid).astype(float))).astype(float)
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise ElementError(f"projector system is singular: {exc}") from exc

    return ElementOperators(
        k=k, layout=layout, area=area, centroid=xc, diameter=hP, basis=basis,
        H=H, G=G, B=B, D=D,
        pi_nabla_star=pi_nabla_star, pi_nabla=D @ pi_nabla_star,
        pi0_star=pi0_star, pi0=D @ pi0_star,
        pi0_grad_x_star=gx, pi0_grad_y_star=gy, Rx=Rx, Ry=Ry,
    )


def _elliptic_projector(G, B, D, sweeps=2):
    """Solve G X = B, refined against G = B D with extended-precision residuals.

    cond(G) reaches 1e6-1e7 at k = 4; the refinement keeps X D = I to ~1e-12.
    """
    lu = sla.lu_factor(G)
    X = sla.lu_solve(lu, B)
    Bl = B.astype(np.longdouble)
    Gl = Bl @ D.astype(np.longdouble)
    for _ in range(sweeps):
        r = Bl - Gl @ X.astype(np.longdouble)
        X = X + sla.lu_solve(lu, r.astype(float))
    return X


@dataclass
class ExtendedOperators:
    """Extended-precision view of ElementOperators (same attribute names)."""
    k: int
    layout: LocalDofLayout
    area: float
    diameter: float
    H: np.ndarray
    G: np.ndarray
    D: np.ndarray
    pi_nabla_star: np.ndarray
    pi0_star: np.ndarray
    pi0_grad_x_star: np.ndarray
    pi0_grad_y_star: np.ndarray

    @property
    def pi_nabla(self):
        return self.D @ self.pi_nabla_star

    @property
    def pi0(self):
        return self.D @ self.pi0_star

    @property
    def G_tilde(self):
        Gt = self.G.copy()
        Gt[0] = 0.0
        return Gt

    @property
    def H_low(self):
        n = num_monomials(self.k - 1)
        return self.H[:n, :n]


def _refined_solve(A, Al, Rl, sweeps=4):
    """Solve A X = R in extended precision by refinement on a double LU of A."""
    lu = sla.lu_factor(A)
    X = sla.lu_solve(lu, Rl.astype(float)).astype(np.longdouble)
    for _ in range(sweeps):
        X += sla.lu_solve(lu, (Rl - Al @ X).astype(float))
    return X


def _extended_operators(ops):
    LD = np.longdouble
    k = ops.k
    NP = ops.layout.size
    Nl = num_monomials(k - 2)
    Nk1 = num_monomials(k - 1)
    Bl = ops.B.astype(LD)
    Dl = ops.D.astype(LD)
    Hl = ops.H.astype(LD)
    Gl = Bl @ Dl  # equals G up to round-off, including the averaging row
    X = _refined_solve(ops.G, Gl, Bl)
    P0 = X.copy()
    if Nl:
        E = np.zeros((Nl, NP), dtype=LD)
        E[np.arange(Nl), ops.layout.internal_dofs] = ops.area
        P0[:Nl] += _refined_solve(ops.H[:Nl, :Nl], Hl[:Nl, :Nl], E - Hl[:Nl] @ X)
    dxm, dym = ops.basis.derivative_matrices()
    resid = np.eye(NP, dtype=LD) - Dl @ X
    H1, H1l = ops.H[:Nk1, :Nk1], Hl[:Nk1, :Nk1]
    gx = dxm[:Nk1].astype(LD) @ X + _refined_solve(H1, H1l, ops.Rx.astype(LD) @ resid)
    gy = dym[:Nk1].astype(LD) @ X + _refined_solve(H1, H1l, ops.Ry.astype(LD) @ resid)
    return ExtendedOperators(k, ops.layout, ops.area, ops.diameter, Hl, Gl, Dl, X, P0, gx, gy)


def pi0_rhs(H, pi_nabla_star, area, internal, Nl, NP):
    """C[a, i] = int_P phi_i m_a, exact on the enhanced space.

    Low-degree rows come straight from internal moments. For deg m_a in
    {k-1, k}, split m_a into its L2 projection on P_{k-2} (read from the
    internal moments) plus an L2-orthogonal remainder, on which phi_i can
    be replaced by its elliptic projection.
    """
    HP = H @ pi_nabla_star
    C = HP.copy()
    if Nl == 0:
        return C
    E = np.zeros((Nl, NP))
    E[np.arange(Nl), internal] = area
    coef = np.linalg.solve(H[:Nl, :Nl], H[:Nl, Nl:])
    C[:Nl] = E
    C[Nl:] = HP[Nl:] - coef.T @ HP[:Nl] + coef.T @ E
    return C


def _pi0_from_pi_nabla(H, pi_nabla_star, area, internal, Nl, NP):
    """Solve H X = C without inverting the full monomial mass matrix.

    Substituting the rows of C gives X = Pi_nabla* + [H_low^{-1} (E - (H Pi_nabla*)_low); 0],
    i.e. Pi0 v = Pi_nabla v + Pi0_{k-2}(v - Pi_nabla v). Only the degree k-2 block of H is
    factored, which keeps the k = 4 projector well conditioned.
    """
    X = pi_nabla_star.copy()
    if Nl == 0:
        return X
    E = np.zeros((Nl, NP))
    E[np.arange(Nl), internal] = area
    delta = E - H[:Nl] @ pi_nabla_star
    X[:Nl] += sla.cho_solve(sla.cho_factor(H[:Nl, :Nl]), delta)
    return X


def compute_pi_nabla(verts, k, orient=None):
    ops = element_operators(verts, k, orient)
    return ops.G, ops.B, ops.D, ops.pi_nabla_star, ops.pi_nabla


def compute_pi0(verts, k, ops=None, orient=None):
    ops = ops or element_operators(verts, k, orient)
    return ops.pi0_star


def compute_pi0_grad(verts, k, ops=None, orient=None):
    ops = ops or element_operators(verts, k, orient)
    return ops.pi0_grad_x_star, ops.pi0_grad_y_star


def dofs_of_function(f, verts, k, orient=None):
    """Evaluate the local DoFs of a pointwise-defined field ``f(points) -> values``."""
    verts = np.asarray(verts, dtype=float)
    nV = len(verts)
    if orient is None:
        orient = np.ones(nV, dtype=int)
    layout = local_dof_layout(k, nV)
    out = np.zeros(layout.size)
    out[:nV] = f(verts)
    if k == 1:
        return out
    edges, _ = _edge_data(verts, k, orient)
    for i, (pts, _, t, w, _, _) in enumerate(edges):
        fv = f(pts)
        for j, row in enumerate(layout.edge_dofs(i)):
            out[row] = 0.5 * np.sum(w * (t / 2.0) ** j * fv)
    area = polygon_area(verts)
    xc = polygon_centroid(verts)
    basis = ScaledMonomialBasis(k - 2, xc, polygon_diameter(verts))
    quad = polygon_quadrature(verts, 2 * k + 2, center=xc)
    vals = basis.evaluate(quad.points) * f(quad.points)[:, None]
    out[layout.internal_dofs] = quad.integrate(vals) / area
    return out


def polynomial_dofs(coef, ops, orient=None):
    """DoFs of the polynomial sum_a coef[a] m_a of this element's basis."""
    return ops.D @ np.asarray(coef, dtype=float)
