"""Local VEM stiffness/mass/load and global assembly with Dirichlet elimination."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import polygon_centroid
from .polybasis import ScaledMonomialBasis, num_monomials, polygon_quadrature
from .vem_local import element_operators

BCS = ("dirichlet", "neumann")
MASS_MODES = ("stabilized", "projection")
STAB_KINDS = ("scalar", "diagonal")


class ConfigurationError(ValueError):
    pass


@dataclass
class StabilizationConfig:
    """Stabilization recipe for both bilinear forms.

    ``sigma_override``/``tau_override`` replace the automatic scalar
    parameters; the multipliers scale whichever stabilization term is in use
    (this is what parameter sweeps vary). ``sigma_mode="nonzero"`` averages
    only the nonzero eigenvalues (trace / rank) instead of all of them.
    ``mass_scale`` is the local length-squared used as the floor of the
    diagonal mass recipe: the cell area ("area") or the squared diameter.
    """
    kind: str = "scalar"
    sigma_override: float = None
    tau_override: float = None
    sigma_multiplier: float = 1.0
    tau_multiplier: float = 1.0
    sigma_mode: str = "nonzero"
    tau_mode: str = "nonzero"
    mass_scale: str = "area"

    def __post_init__(self):
        if self.kind not in STAB_KINDS:
            raise ConfigurationError(f"unknown stabilization {self.kind!r}; expected {STAB_KINDS}")
        for name in ("sigma_mode", "tau_mode"):
            if getattr(self, name) not in ("full", "nonzero"):
                raise ConfigurationError(f"{name} must be 'full' or 'nonzero'")
        if self.mass_scale not in ("area", "diameter"):
            raise ConfigurationError("mass_scale must be 'area' or 'diameter'")
        for name in ("sigma_override", "tau_override"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not (self.sigma_multiplier > 0 and self.tau_multiplier > 0):
            raise ConfigurationError("stabilization multipliers must be positive")


@dataclass
class ProblemSpec:
    k: int = 1
    bc: str = "dirichlet"
    mass_mode: str = "stabilized"
    stabilization: StabilizationConfig = field(default_factory=StabilizationConfig)
    # region label -> 2x2 SPD tensor; None means the identity everywhere
    diffusivity: dict = None

    def __post_init__(self):
        if int(self.k) < 1:
            raise ConfigurationError("degree k must be >= 1")
        if self.bc not in BCS:
            raise ConfigurationError(f"unknown boundary condition {self.bc!r}; expected {BCS}")
        if self.mass_mode == "projection-only":
            self.mass_mode = "projection"
        if self.mass_mode not in MASS_MODES:
            raise ConfigurationError(f"unknown mass mode {self.mass_mode!r}; expected {MASS_MODES}")
        if self.diffusivity is not None:
            self.diffusivity = {int(r): _check_tensor(K) for r, K in self.diffusivity.items()}

    def tensor(self, region):
        if self.diffusivity is None:
            return None
        try:
            return self.diffusivity[int(region)]
        except KeyError:
            raise ConfigurationError(f"no diffusivity given for region {region}") from None


def _check_tensor(K):
    K = np.asarray(K, dtype=float)
    if K.shape != (2, 2):
        raise ConfigurationError("diffusivity must be a 2x2 tensor")
    if abs(K[0, 1] - K[1, 0]) > 1e-14 * np.abs(K).max() or not np.all(np.linalg.eigvalsh(K) > 0):
        raise ConfigurationError(f"diffusivity {K.tolist()} is not symmetric positive definite")
    return K


def problem_from_dict(cfg):
    """ProblemSpec from the JSON config layout (keys k, bc, mass_mode, stab, ...)."""
    stab = StabilizationConfig(
        kind=cfg.get("stab", "scalar"),
        sigma_override=cfg.get("sigma_override"),
        tau_override=cfg.get("tau_override"),
        sigma_mode=cfg.get("sigma_mode", "nonzero"),
        tau_mode=cfg.get("tau_mode", "nonzero"),
        mass_scale=cfg.get("mass_scale", "area"),
    )
    diff = cfg.get("diffusivity")
    return ProblemSpec(k=int(cfg.get("k", 1)), bc=cfg.get("bc", "dirichlet"),
                       mass_mode=cfg.get("mass_mode", "stabilized"), stabilization=stab,
                       diffusivity=None if diff is None else {int(r): K for r, K in diff.items()})


def _mean_eig(mat, mode, rank):
    tr = np.trace(mat)
    return tr / (rank if mode == "nonzero" else mat.shape[0])


def consistency_stiffness(ops, K=None):
    if K is None:
        P = ops.pi_nabla_star
        return P.T @ ops.G_tilde @ P
    Hl = ops.H_low
    gx, gy = ops.pi0_grad_x_star, ops.pi0_grad_y_star
    return (K[0, 0] * gx.T @ Hl @ gx + K[0, 1] * gx.T @ Hl @ gy
            + K[1, 0] * gy.T @ Hl @ gx + K[1, 1] * gy.T @ Hl @ gy)


def local_stiffness(ops, K=None, stab=None):
    stab = stab or StabilizationConfig()
    if K is not None:
        K = _check_tensor(K)
    cons = consistency_stiffness(ops, K)
    NP = cons.shape[0]
    R = np.eye(NP, dtype=cons.dtype) - ops.pi_nabla
    if stab.kind == "scalar":
        if stab.sigma_override is not None:
            sigma = stab.sigma_override
        else:
            sigma = _mean_eig(cons, stab.sigma_mode, num_monomials(ops.k) - 1)
        S = (stab.sigma_multiplier * sigma) * (R.T @ R)
    else:
        d = np.maximum(1.0, np.diag(cons).copy())
        S = stab.sigma_multiplier * (R.T * d) @ R
    out = cons + S
    return 0.5 * (out + out.T)


def local_mass(ops, mass_mode="stabilized", stab=None):
    stab = stab or StabilizationConfig()
    P = ops.pi0_star
    proj = P.T @ ops.H @ P
    if mass_mode in ("projection", "projection-only"):
        return 0.5 * (proj + proj.T)
    NP = proj.shape[0]
    h2 = ops.diameter ** 2
    R = np.eye(NP, dtype=proj.dtype) - ops.pi0
    if stab.kind == "scalar":
        if stab.tau_override is not None:
            tau = stab.tau_override
        else:
            tau = _mean_eig(proj / h2, stab.tau_mode, num_monomials(ops.k))
        S = (stab.tau_multiplier * tau * h2) * (R.T @ R)
    else:
        floor = ops.area if stab.mass_scale == "area" else h2
        d = np.maximum(floor, np.diag(proj).copy())
        if stab.tau_override is not None:
            d = np.full(NP, stab.tau_override * floor, dtype=proj.dtype)
        S = stab.tau_multiplier * (R.T * d) @ R
    out = proj + S
    return 0.5 * (out + out.T)


def local_load(verts, ops, f):
    """(Pi0_k f, phi_i)_P for every local basis function phi_i."""
    verts = np.asarray(verts, dtype=float)
    xc = polygon_centroid(verts)
    basis = ScaledMonomialBasis(ops.k, xc, ops.diameter)
    quad = polygon_quadrature(verts, 2 * ops.k + 4, center=xc)
    rhs = quad.integrate(basis.evaluate(quad.points) * f(quad.points)[:, None])
    # pi0_star^T H c with H c = rhs
    return ops.pi0_star.T @ rhs


@dataclass
class AssembledSystem:
    A: sp.csr_matrix
    M: sp.csr_matrix
    dof_map: list
    constrained: np.ndarray
    free: np.ndarray
    n_dofs: int
    k: int
    n_vertex_dofs: int
    n_edge_dofs: int

    @property
    def n_free(self):
        return len(self.free)

    @property
    def A_free(self):
        return self.A[self.free][:, self.free]

    @property
    def M_free(self):
        return self.M[self.free][:, self.free]

    def expand(self, x_free, constrained_values=None):
        """Full DoF vector from free values (constrained DoFs set to 0 or the given values)."""
        x = np.zeros(self.n_dofs) if constrained_values is None else np.array(constrained_values, float)
        x[self.free] = x_free
        return x


def global_dof_count(mesh, k):
    nint = num_monomials(k - 2)
    return mesh.n_vertices + mesh.n_edges * (k - 1) + mesh.n_cells * nint


def cell_dofs(mesh, k, c):
    """Global indices of the local DoFs of cell c (local layout order)."""
    cell = mesh.cells[c]
    nV, nE = mesh.n_vertices, mesh.n_edges
    nint = num_monomials(k - 2)
    parts = [cell]
    if k > 1:
        e = mesh.cell_edges[c]
        parts.append((nV + e[:, None] * (k - 1) + np.arange(k - 1)).ravel())
        parts.append(nV + nE * (k - 1) + c * nint + np.arange(nint))
    return np.concatenate(parts).astype(int)


class OperatorCache:
    """Reuses element operators across congruent, equally oriented cells.

    Operators live in cell-local scaled coordinates, so translated copies
    share them; the key is the vertex loop relative to its first vertex,
    rounded to 1e-12 of the cell size.
    """

    def __init__(self):
        self._store = {}
        self.hits = 0

    def get(self, verts, k, orient):
        rel = verts - verts[0]
        scale = np.abs(rel).max()
        key = (k, tuple(int(o) for o in orient), np.round(rel / scale, 12).tobytes(),
               float(np.format_float_positional(scale, precision=14, unique=False)))
        ops = self._store.get(key)
        if ops is None:
            ops = element_operators(verts, k, orient)
            self._store[key] = ops
        else:
            self.hits += 1
        return ops


def element_ops_iter(mesh, k, cache=None):
    cache = OperatorCache() if cache is None else cache
    for c in range(mesh.n_cells):
        yield c, cache.get(mesh.cell_vertices(c), k, mesh.cell_edge_orientation[c])


def assemble(mesh, spec, cache=None):
    k = spec.k
    if spec.diffusivity is not None:
        missing = set(np.unique(mesh.regions).tolist()) - set(spec.diffusivity)
        if missing:
            raise ConfigurationError(f"no diffusivity given for region(s) {sorted(missing)}")
    n = global_dof_count(mesh, k)
    rows, cols, av, mv = [], [], [], []
    dof_map = []
    for c, ops in element_ops_iter(mesh, k, cache):
        K = spec.tensor(mesh.regions[c])
        if K is not None and np.array_equal(K, np.eye(2)):
            K = None
        Ae = local_stiffness(ops, K, spec.stabilization)
        Me = local_mass(ops, spec.mass_mode, spec.stabilization)
        g = cell_dofs(mesh, k, c)
        dof_map.append(g)
        rows.append(np.repeat(g, len(g)))
        cols.append(np.tile(g, len(g)))
        av.append(Ae.ravel())
        mv.append(Me.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    A = sp.coo_matrix((np.concatenate(av), (rows, cols)), shape=(n, n)).tocsr()
    M = sp.coo_matrix((np.concatenate(mv), (rows, cols)), shape=(n, n)).tocsr()
    A = ((A + A.T) * 0.5).tocsr()
    M = ((M + M.T) * 0.5).tocsr()
    if spec.bc == "dirichlet":
        constrained = boundary_dofs(mesh, k)
    else:
        constrained = np.zeros(0, dtype=int)
    free = np.setdiff1d(np.arange(n), constrained)
    return AssembledSystem(A, M, dof_map, constrained, free, n, k,
                           mesh.n_vertices, mesh.n_edges * (k - 1))


def _extended_locals(mesh, spec, cache):
    """(cell dofs, extended-precision local stiffness, local mass) per cell."""
    local = {}
    for c, ops in element_ops_iter(mesh, spec.k, cache):
        K = spec.tensor(mesh.regions[c])
        if K is not None and np.array_equal(K, np.eye(2)):
            K = None
        key = (id(ops), None if K is None else K.tobytes())
        if key not in local:
            ext = ops.extended()
            local[key] = (local_stiffness(ext, K, spec.stabilization),
                          local_mass(ext, spec.mass_mode, spec.stabilization))
        yield cell_dofs(mesh, spec.k, c), local[key]


def _as_full(system, X):
    X = np.asarray(X, dtype=float)
    full = np.zeros((system.n_dofs,) + X.shape[1:], dtype=np.longdouble)
    full[system.free] = X
    return full


def rayleigh_quotients(mesh, spec, system, X, cache=None):
    """a_h(x, x) / b_h(x, x) per column of X (free DoFs), in extended precision.

    Evaluated element by element from extended-precision local matrices, so
    the result is free of the round-off in the assembled double matrices and
    in the eigensolver; the error is quadratic in the eigenvector error.
    """
    full = _as_full(system, np.atleast_2d(np.asarray(X, dtype=float).T).T)
    num = np.zeros(full.shape[1], dtype=np.longdouble)
    den = np.zeros(full.shape[1], dtype=np.longdouble)
    for dofs, (Ae, Me) in _extended_locals(mesh, spec, cache):
        xe = full[dofs]
        num += np.einsum("ij,ik,kj->j", xe, Ae, xe)
        den += np.einsum("ij,ik,kj->j", xe, Me, xe)
    return num / den


def stiffness_apply(mesh, spec, x, cache=None):
    """A x for a full DoF vector in extended precision (element by element)."""
    x = np.asarray(x).astype(np.longdouble)
    out = np.zeros_like(x)
    for dofs, (Ae, _) in _extended_locals(mesh, spec, cache):
        out[dofs] += Ae @ x[dofs]
    return out


def boundary_dofs(mesh, k):
    bv = np.flatnonzero(mesh.boundary_vertex_flags)
    be = np.flatnonzero(mesh.boundary_edge_flags)
    edge = (mesh.n_vertices + be[:, None] * (k - 1) + np.arange(k - 1)).ravel()
    return np.sort(np.concatenate([bv, edge])).astype(int)


def assemble_load(mesh, k, f, cache=None):
    b = np.zeros(global_dof_count(mesh, k))
    for c, ops in element_ops_iter(mesh, k, cache):
        np.add.at(b, cell_dofs(mesh, k, c), local_load(mesh.cell_vertices(c), ops, f))
    return b


def interpolate(mesh, k, f):
    """Global DoF vector of a pointwise-defined function."""
    from .vem_local import dofs_of_function
    x = np.zeros(global_dof_count(mesh, k))
    for c in range(mesh.n_cells):
        x[cell_dofs(mesh, k, c)] = dofs_of_function(
            f, mesh.cell_vertices(c), k, mesh.cell_edge_orientation[c])
    return x
