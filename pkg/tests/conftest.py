"""Shared oracles: random polygons, Green-theorem monomial integrals, P1 FEM."""

import numpy as np
import pytest
import scipy.sparse as sp

from vemeig.geometry import edge_lengths, is_star_about, polygon_centroid, polygon_diameter


def random_polygon(rng, gamma=0.25):
    """Shape-regular random star polygon with 3-10 vertices, random size and position."""
    while True:
        n = int(rng.integers(3, 11))
        th = 2 * np.pi * (np.arange(n) + rng.uniform(-0.3, 0.3, n)) / n + rng.uniform(0, 2 * np.pi)
        r = rng.uniform(0.5, 1.0, n)
        V = np.c_[r * np.cos(th), r * np.sin(th)] * rng.uniform(0.01, 10) + rng.normal(size=2) * 5
        g = gamma if n < 6 else gamma / 2
        if edge_lengths(V).min() / polygon_diameter(V) >= g and is_star_about(V, polygon_centroid(V)):
            return V


def regular_polygon(n, radius=1.0, center=(0.0, 0.0), phase=0.0):
    t = phase + 2 * np.pi * np.arange(n) / n
    return np.c_[radius * np.cos(t), radius * np.sin(t)] + np.asarray(center)


def green_monomial_integral(verts, a, b, center=(0.0, 0.0), scale=1.0):
    """int_P ((x-c)/s)^a ((y-c)/s)^b dA via the divergence theorem.

    int_P f = (1/(a+1)) oint X^{a+1} Y^b n_x ds (X, Y shifted/scaled); each
    edge integrand is a polynomial, integrated exactly by Gauss-Legendre.
    """
    V = (np.asarray(verts, dtype=float) - np.asarray(center)) / scale
    t, w = np.polynomial.legendre.leggauss((a + b) // 2 + 2)
    s = 0.5 * (t + 1)
    total = 0.0
    for p, q in zip(V, np.roll(V, -1, axis=0)):
        pts = p + s[:, None] * (q - p)
        # n_x ds = dy
        total += 0.5 * np.sum(w * pts[:, 0] ** (a + 1) * pts[:, 1] ** b) * (q[1] - p[1])
    return total / (a + 1) * scale ** 2


def p1_fem(vertices, triangles, K=None):
    """Plain P1 stiffness and consistent mass matrices (CCW triangles)."""
    K = np.eye(2) if K is None else np.asarray(K)
    n = len(vertices)
    rows, cols, av, mv = [], [], [], []
    for tri in triangles:
        P = vertices[tri]
        T = np.c_[np.ones(3), P]
        area = 0.5 * np.linalg.det(T)
        grads = np.linalg.inv(T)[1:].T  # rows: grad of each hat function
        Ae = area * grads @ K @ grads.T
        Me = area / 12.0 * (np.ones((3, 3)) + np.eye(3))
        for i in range(3):
            for j in range(3):
                rows.append(tri[i])
                cols.append(tri[j])
                av.append(Ae[i, j])
                mv.append(Me[i, j])
    A = sp.csr_matrix((av, (rows, cols)), shape=(n, n))
    M = sp.csr_matrix((mv, (rows, cols)), shape=(n, n))
    return A, M


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, printed as one PASS/FAIL line each at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for name, (ok, detail) in ACCEPTANCE.items():
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
