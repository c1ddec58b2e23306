"""Generalized symmetric eigenproblems A x = lambda M x and the SPD source solve."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_LIMIT = 3000
NULL_RTOL = 1e-12
ZERO_MODE_RTOL = 1e-8
RESIDUAL_RTOL = 1e-8
MASS_RCOND_MIN = 1e-6


class EigenSolveError(RuntimeError):
    pass


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    n_filtered: int = 0
    zero_modes: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.zero_modes is None:
            self.zero_modes = np.zeros(len(self.eigenvalues), dtype=bool)

    @property
    def nonzero(self):
        """Eigenvalues with the (Neumann) zero modes removed."""
        return self.eigenvalues[~self.zero_modes]


def _dense(X):
    return X.toarray() if sp.issparse(X) else np.asarray(X, dtype=float)


def _norm1(X):
    return spla.norm(X, 1) if sp.issparse(X) else np.linalg.norm(X, 1)


def solve_gevp(A, M, nev, spd_mass=True, dense=None):
    """Smallest ``nev`` eigenpairs, eigenvectors M-orthonormal.

    With ``spd_mass=False`` the null space of M is deflated first: M is
    diagonalized, and the pencil is reduced to the range of M through the
    Schur complement of A on the null space (these directions carry infinite
    eigenvalues). ``n_filtered`` records the nullity.
    """
    n = A.shape[0]
    if A.shape != M.shape or A.shape[0] != A.shape[1]:
        raise EigenSolveError("A and M must be square and of equal size")
    nev = int(nev)
    if nev < 1:
        raise EigenSolveError("nev must be >= 1")
    if spd_mass:
        if nev > n:
            raise EigenSolveError(f"requested {nev} eigenpairs but only {n} are available")
        use_dense = n <= DENSE_LIMIT if dense is None else dense
        if use_dense:
            Ad, Md = _dense(A), _dense(M)
            if _mass_rcond(Md) > MASS_RCOND_MIN:
                lam, X = sla.eigh(Ad, Md, subset_by_index=[0, nev - 1])
                mode = "dense-cholesky"
            else:
                lam, X = _inverted_pencil(Ad, Md, nev)
                mode = "dense-inverted"
        else:
            lam, X = _shift_invert(A, M, nev)
            mode = "sparse-shift-invert"
        n_filtered = 0
    else:
        lam, X, n_filtered = _deflated(_dense(A), _dense(M), nev)
        mode = "dense-deflated"

    # normalize x^T M x = 1 explicitly; eigh already does up to rounding
    Mx = M @ X
    X = X / np.sqrt(np.einsum("ij,ij->j", X, Mx))
    lam_max = np.abs(lam).max() if len(lam) else 0.0
    zero = np.abs(lam) < ZERO_MODE_RTOL * max(lam_max, 1.0)
    res = _residuals(A, M, lam, X)
    bound = RESIDUAL_RTOL * (_norm1(A) + np.abs(lam) * _norm1(M))
    if np.any(res > bound):
        bad = int(np.argmax(res / bound))
        raise EigenSolveError(f"eigenpair {bad} residual {res[bad]:.3e} exceeds {bound[bad]:.3e}")
    meta = {"mode": mode, "residual_max": float(res.max()) if len(res) else 0.0,
            "null_rtol": NULL_RTOL, "n": n}
    return Spectrum(lam, X, n_filtered, zero, meta)


def _mass_rcond(M):
    """Reciprocal 1-norm condition estimate of M (0 if not positive definite)."""
    c, info = lapack.dpotrf(M, lower=False)
    if info != 0:
        return 0.0
    rcond, info = lapack.dpocon(c, np.linalg.norm(M, 1))
    return float(rcond) if info == 0 else 0.0


def _inverted_pencil(A, M, nev):
    """Largest mu of M x = mu (A + s M) x, i.e. lambda = 1/mu - s.

    Used when M is numerically singular: only A + s M, which stays well
    conditioned, is factored.
    """
    s = 1e-3 * np.linalg.norm(A, 1) / max(np.linalg.norm(M, 1), np.finfo(float).tiny)
    n = A.shape[0]
    mu, X = sla.eigh(M, A + s * M, subset_by_index=[n - nev, n - 1])
    lam = 1.0 / mu[::-1] - s
    return lam, X[:, ::-1]


def _residuals(A, M, lam, X):
    R = A @ X - (M @ X) * lam
    return np.abs(R).sum(axis=0)


def _shift_invert(A, M, nev, sigma=-1.0, refine=2):
    A = sp.csc_matrix(A)
    M = sp.csc_matrix(M)
    lu = spla.splu(sp.csc_matrix(A - sigma * M))
    op = spla.LinearOperator(A.shape, matvec=lu.solve, dtype=float)
    lam, X = spla.eigsh(A, k=nev, M=M, sigma=sigma, which="LM", tol=1e-13, OPinv=op)
    # ARPACK's Ritz vectors can be loose for badly conditioned high-order A:
    # a few block inverse-iteration + Rayleigh-Ritz steps with the same factor
    for _ in range(refine):
        Y = lu.solve(np.asarray(M @ X))
        Y, _ = np.linalg.qr(Y)
        Ar, Mr = Y.T @ (A @ Y), Y.T @ (M @ Y)
        lam, Z = sla.eigh(0.5 * (Ar + Ar.T), 0.5 * (Mr + Mr.T))
        X = Y @ Z
    order = np.argsort(lam)
    return lam[order], X[:, order]


def mass_nullspace(M, rtol=NULL_RTOL):
    """Eigen-split of M into range (values, vectors) and null-space vectors."""
    mu, Q = np.linalg.eigh(M)
    cut = rtol * max(mu.max(), 0.0)
    null = mu <= cut
    return mu[~null], Q[:, ~null], Q[:, null]


def _deflated(A, M, nev):
    mu, Qr, Qn = mass_nullspace(M)
    nullity = Qn.shape[1]
    if nev > len(mu):
        raise EigenSolveError(
            f"requested {nev} eigenpairs but only {len(mu)} finite eigenvalues are available")
    Arr = Qr.T @ A @ Qr
    if nullity:
        Arn = Qr.T @ A @ Qn
        Ann = Qn.T @ A @ Qn
        try:
            c = sla.cho_factor(0.5 * (Ann + Ann.T))
        except np.linalg.LinAlgError as exc:
            raise EigenSolveError("A is singular on the null space of M") from exc
        W = sla.cho_solve(c, Arn.T)
        S = Arr - Arn @ W
    else:
        W = np.zeros((0, len(mu)))
        S = Arr
    S = 0.5 * (S + S.T)
    # the range block of M is still badly conditioned for high k
    lam, Y = _inverted_pencil(S, np.diag(mu), nev)
    # lift: x = Qr y - Qn W y
    X = Qr @ Y - Qn @ (W @ Y)
    return lam, X, nullity


def numerical_rank(M, rtol=NULL_RTOL):
    """Rank by column-pivoted QR (independent of the eigen-split)."""
    R = sla.qr(_dense(M), mode="r", pivoting=True)[0]
    d = np.abs(np.diag(R))
    return int((d > rtol * d.max()).sum()) if d.size else 0


def solve_source(A, rhs):
    """Solve the SPD system A x = rhs (constraints already eliminated)."""
    rhs = np.asarray(rhs, dtype=float)
    n = A.shape[0]
    ones = np.ones(n)
    if n and np.linalg.norm(A @ ones) <= 1e-10 * _norm1(A) * np.sqrt(n):
        raise EigenSolveError(
            "stiffness matrix is singular (constants in the kernel): pure Neumann problems "
            "need a mean-zero gauge, e.g. fix one DoF or add a Lagrange multiplier")
    if sp.issparse(A) and n > DENSE_LIMIT:
        x = spla.splu(sp.csc_matrix(A)).solve(rhs)
    else:
        try:
            x = sla.cho_solve(sla.cho_factor(_dense(A)), rhs)
        except np.linalg.LinAlgError as exc:
            raise EigenSolveError(f"stiffness matrix is not positive definite: {exc}") from exc
    r = np.linalg.norm(A @ x - rhs)
    scale = _norm1(A) * np.linalg.norm(x) + np.linalg.norm(rhs)
    if r > 1e-10 * max(scale, np.finfo(float).tiny) * _cond_hint(A):
        raise EigenSolveError(f"source solve residual {r:.3e} too large")
    return x


def _cond_hint(A):
    # the residual bound is relative; allow for the conditioning of larger systems
    return max(1.0, A.shape[0] / 100.0)
