import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from conftest import p1_fem, random_polygon, regular_polygon
from vemeig.assembly import (ConfigurationError, OperatorCache, ProblemSpec, StabilizationConfig,
                             assemble, assemble_load, cell_dofs, global_dof_count, interpolate,
                             local_load, local_mass, local_stiffness, problem_from_dict,
                             rayleigh_quotients, stiffness_apply)
from vemeig.eigsolve import numerical_rank, solve_gevp
from vemeig.mesh import MeshFamilySpec, assign_regions, generate_mesh
from vemeig.polybasis import ScaledMonomialBasis, num_monomials, polygon_quadrature
from vemeig.vem_local import element_operators

TRI = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
UNIT = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
MODES = [("scalar", "stabilized"), ("diagonal", "stabilized"), ("scalar", "projection")]


def _spec(k=1, kind="scalar", mass="stabilized", **kw):
    return ProblemSpec(k=k, mass_mode=mass, stabilization=StabilizationConfig(kind=kind), **kw)


# ---------------------------------------------------------------- local matrices

@pytest.mark.parametrize("kind", ["scalar", "diagonal"])
def test_p1_triangle_stiffness(kind):
    ops = element_operators(TRI, 1)
    K = local_stiffness(ops, stab=StabilizationConfig(kind=kind))
    assert np.allclose(K, [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]], atol=1e-12)
    assert np.abs(np.eye(3) - ops.pi_nabla).max() < 1e-14  # stabilization acts on nothing


@pytest.mark.parametrize("kind,mass", MODES)
def test_p1_triangle_mass(kind, mass):
    ops = element_operators(TRI, 1)
    Me = local_mass(ops, mass, StabilizationConfig(kind=kind))
    assert np.allclose(Me, 0.5 / 12 * (np.ones((3, 3)) + np.eye(3)), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4), st.sampled_from(MODES))
def test_local_matrix_identities(seed, k, mode):
    rng = np.random.default_rng(seed)
    V = random_polygon(rng)
    ops = element_operators(V, k, rng.choice([-1, 1], len(V)))
    stab = StabilizationConfig(kind=mode[0])
    K = local_stiffness(ops, stab=stab)
    M = local_mass(ops, mode[1], stab)
    one = ops.D[:, 0]  # DoFs of the constant 1
    eps = np.finfo(float).eps
    assert np.abs(K @ one).max() < 1e-11 * np.abs(K).max()
    # total mass: exact to 1e-11 in extended precision; in double up to the
    # round-off of the (k=4 scalar: ~1e3 |P|) stabilization entries
    Ml = local_mass(ops.extended(), mode[1], stab)
    onel = one.astype(np.longdouble)
    assert abs(float(onel @ Ml @ onel) - ops.area) < 1e-11 * ops.area
    assert abs(one @ M @ one - ops.area) < max(1e-11 * ops.area, 10 * eps * np.abs(M).sum())
    assert np.allclose(K, K.T) and np.allclose(M, M.T)
    if mode[1] == "stabilized":
        # the stiffness kernel is exactly the constants: one zero generalized eigenvalue
        w = sla.eigh(K, M, eigvals_only=True)
        assert abs(w[0]) < 1e-6 * w[1] and w[1] > 0


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_k_consistency(k, rng):
    """a_h(p, q) = int grad p . grad q for polynomials p, q (computed independently)."""
    V = random_polygon(rng)
    ops = element_operators(V, k)
    q = polygon_quadrature(V, 2 * k, center=ops.centroid)
    g = ops.basis.gradient(q.points)
    exact = np.einsum("q,qad,qbd->ab", q.weights, g, g)
    tol = 1e-10 * max(1.0, np.abs(exact).max())
    Dl = ops.D.astype(np.longdouble)
    for kind in ("scalar", "diagonal"):
        stab = StabilizationConfig(kind=kind)
        K = local_stiffness(ops, stab=stab)
        err = np.abs(ops.D.T @ K @ ops.D - exact).max()
        if k <= 3:
            assert err < tol
        else:
            # scalar k=4 entries reach ~1e9: double round-off of K itself dominates
            assert err < 1e3 * np.finfo(float).eps * np.abs(K).max()
        Kl = local_stiffness(ops.extended(), stab=stab)
        assert np.abs((Dl.T @ Kl @ Dl).astype(float) - exact).max() < tol


@pytest.mark.parametrize("k", [1, 2, 3])
def test_mass_consistency(k, rng):
    V = random_polygon(rng)
    ops = element_operators(V, k)
    Me = local_mass(ops)
    assert np.allclose(ops.D.T @ Me @ ops.D, ops.H, atol=1e-11 * ops.area)


def test_projection_mass_rank_on_square():
    ops = element_operators(UNIT, 1)
    s = np.linalg.svd(local_mass(ops, "projection"), compute_uv=False)
    assert (s > 1e-12 * s[0]).sum() == 3


def test_tensor_stiffness_scales():
    ops = element_operators(regular_polygon(6), 2)
    K1 = local_stiffness(ops)
    K2 = local_stiffness(ops, K=2.5 * np.eye(2))
    assert np.allclose(K2, 2.5 * K1, atol=1e-12)


def test_anisotropic_tensor_consistency(rng):
    V = random_polygon(rng)
    ops = element_operators(V, 2)
    Kt = np.array([[2.0, 0.3], [0.3, 0.5]])
    K = local_stiffness(ops, K=Kt)
    q = polygon_quadrature(V, 4, center=ops.centroid)
    g = ops.basis.gradient(q.points)
    exact = np.einsum("q,qad,de,qbe->ab", q.weights, g, Kt, g)
    assert np.abs(ops.D.T @ K @ ops.D - exact).max() < 1e-10 * np.abs(exact).max()


def test_non_spd_tensor_rejected():
    with pytest.raises(ConfigurationError):
        ProblemSpec(diffusivity={0: [[1, 2], [2, 1]]})


def test_overrides_and_diagonal_floor():
    ops = element_operators(regular_polygon(5), 1)
    a = local_mass(ops, stab=StabilizationConfig(tau_override=1e-300))
    b = local_mass(ops, "projection")
    assert np.allclose(a, b)
    s1 = local_stiffness(ops, stab=StabilizationConfig(sigma_override=1.0))
    s2 = local_stiffness(ops, stab=StabilizationConfig(sigma_override=2.0))
    R = np.eye(5) - ops.pi_nabla
    assert np.allclose(s2 - s1, R.T @ R, atol=1e-12)


@pytest.mark.parametrize("cfg", [dict(stab="bogus"), dict(k=0), dict(bc="robin"),
                                 dict(mass_mode="lumped")])
def test_bad_config(cfg):
    with pytest.raises((ConfigurationError, ValueError)):
        problem_from_dict(cfg)


# ---------------------------------------------------------------- load

def test_load_constant_is_mass_column_sum():
    V = regular_polygon(6)
    ops = element_operators(V, 2)
    b = local_load(V, ops, lambda p: 3.0 * np.ones(len(p)))
    assert np.allclose(b, 3.0 * local_mass(ops, "projection").sum(axis=1), atol=1e-13)
    assert np.allclose(local_load(V, ops, lambda p: np.zeros(len(p))), 0.0)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_load_polynomial(k, rng):
    """For f in P_k and polynomial test functions p: b . dofs(p) = int f p."""
    V = random_polygon(rng)
    ops = element_operators(V, k)
    c = rng.normal(size=num_monomials(k))
    basis = ScaledMonomialBasis(k, ops.centroid, ops.diameter)
    f = lambda p: basis.evaluate(p) @ c
    b = local_load(V, ops, f)
    q = polygon_quadrature(V, 2 * k, center=ops.centroid)
    exact = q.integrate(basis.evaluate(q.points) * f(q.points)[:, None])
    assert np.allclose(ops.D.T @ b, exact, atol=1e-10 * np.abs(exact).max())


# ---------------------------------------------------------------- global assembly

def test_single_interior_vertex():
    s = assemble(generate_mesh(MeshFamilySpec("square", 2)), _spec())
    assert s.n_free == 1
    assert s.A_free.toarray()[0, 0] > 0


def test_neumann_constants_in_kernel():
    s = assemble(generate_mesh(MeshFamilySpec("square", 8)), _spec(bc="neumann"))
    assert np.abs(s.A @ np.ones(s.n_dofs)).max() < 1e-10


@pytest.mark.parametrize("n", [4, 8])
@pytest.mark.parametrize("kind,mass", MODES)
def test_p1_equivalence(n, kind, mass):
    mesh = generate_mesh(MeshFamilySpec("triangle", n))
    s = assemble(mesh, _spec(kind=kind, mass=mass))
    A, M = p1_fem(mesh.vertices, [np.asarray(c) for c in mesh.cells])
    assert abs(s.A - A).max() < 1e-12
    assert abs(s.M - M).max() < 1e-12


@pytest.mark.parametrize("k,count", [(1, 25), (2, 25 + 40 + 16), (3, 25 + 80 + 16 * 3)])
def test_dof_count(k, count):
    mesh = generate_mesh(MeshFamilySpec("square", 4))
    assert global_dof_count(mesh, k) == count
    seen = np.unique(np.concatenate([cell_dofs(mesh, k, c) for c in range(mesh.n_cells)]))
    assert len(seen) == count


@pytest.mark.parametrize("family", ["voronoi", "web"])
def test_global_patch_quadratic(family):
    """a_h(I p, I q) equals the exact energy for global polynomials (k=2)."""
    mesh = generate_mesh(MeshFamilySpec(family, 4, seed=1))
    s = assemble(mesh, _spec(k=2, bc="neumann"))
    p = interpolate(mesh, 2, lambda x: x[:, 0] ** 2 - x[:, 0] * x[:, 1])
    q = interpolate(mesh, 2, lambda x: x[:, 1] ** 2 + x[:, 0])
    # int grad(x^2 - xy) . grad(y^2 + x) over the unit square
    exact = 1 - 0.5 - 2 * 0.25
    assert p @ (s.A @ q) == pytest.approx(exact, abs=1e-12)


def test_cache_reuses_translated_cells():
    mesh = generate_mesh(MeshFamilySpec("square", 8))
    cache = OperatorCache()
    a = assemble(mesh, _spec(k=2), cache)
    b = assemble(mesh, _spec(k=2))
    assert cache.hits > 0
    assert abs(a.A - b.A).max() < 1e-13


def test_missing_region_tensor():
    mesh = assign_regions(generate_mesh(MeshFamilySpec("square", 4, "square")), [(1, (-1, -1), (0, 0))])
    with pytest.raises(ConfigurationError):
        assemble(mesh, _spec(diffusivity={0: np.eye(2)}))


def test_interface_coefficient():
    mesh = assign_regions(generate_mesh(MeshFamilySpec("square", 4, "square")), [(1, (-1, -1), (0, 0))])
    s1 = assemble(mesh, _spec(bc="neumann", diffusivity={0: np.eye(2), 1: np.eye(2)}))
    s2 = assemble(mesh, _spec(bc="neumann", diffusivity={0: np.eye(2), 1: 0.1 * np.eye(2)}))
    x = np.array([polygon[0] for polygon in mesh.vertices])  # u = x
    assert x @ (s1.A @ x) == pytest.approx(4.0, abs=1e-12)
    assert x @ (s2.A @ x) == pytest.approx(3.0 + 0.1, abs=1e-12)


@pytest.mark.parametrize("k", [1, 3])
def test_extended_evaluations_match_double(k):
    mesh = generate_mesh(MeshFamilySpec("voronoi", 4, seed=2))
    spec = _spec(k=k)
    cache = OperatorCache()
    s = assemble(mesh, spec, cache)
    sp_ = solve_gevp(s.A_free, s.M_free, 3)
    rq = rayleigh_quotients(mesh, spec, s, sp_.eigenvectors, cache)
    assert np.allclose(rq.astype(float), sp_.eigenvalues, rtol=1e-9)
    x = np.random.default_rng(0).normal(size=s.n_dofs)
    assert np.allclose(stiffness_apply(mesh, spec, x, cache).astype(float), s.A @ x,
                       atol=1e-9 * abs(s.A).max())


def test_projection_mass_nullity_agrees_with_rank():
    mesh = generate_mesh(MeshFamilySpec("square", 4))
    s = assemble(mesh, _spec(mass="projection", bc="neumann"))
    spec = solve_gevp(s.A_free, s.M_free, 3, spd_mass=False)
    assert spec.n_filtered == s.n_free - numerical_rank(s.M_free)
    assert spec.n_filtered == 1


@pytest.mark.parametrize("k", [1, 2, 3])
def test_load_of_one_pairs_to_area(k):
    mesh = generate_mesh(MeshFamilySpec("voronoi", 4, "L-shape", seed=2))
    b = assemble_load(mesh, k, lambda p: np.ones(len(p)))
    one = interpolate(mesh, k, lambda p: np.ones(len(p)))
    assert b @ one == pytest.approx(3.0, abs=1e-12)
