import json

import numpy as np
import pytest

from vemeig.geometry import polygon_area
from vemeig.mesh import (MeshFamilySpec, MeshFormatError, MeshValidationError, PolygonalMesh,
                         assign_regions, compute_geometry, domain_area, generate_mesh, read_mesh,
                         validate_mesh, write_mesh)


def _cross(v):
    a = np.roll(v, -1, axis=0) - v
    b = np.roll(a, -1, axis=0)
    return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]


def test_square_n8():
    m = generate_mesh(MeshFamilySpec("square", 8))
    assert (m.n_cells, m.n_vertices) == (64, 81)
    g = compute_geometry(m)
    assert np.allclose(g.area, 1 / 64, atol=1e-16)
    assert g.h == pytest.approx(np.sqrt(2) / 8)


def test_triangle_n4():
    m = generate_mesh(MeshFamilySpec("triangle", 4))
    assert m.n_cells == 32
    g = compute_geometry(m)
    assert np.allclose(g.area, 1 / 32)
    for c in range(m.n_cells):
        e = np.sort(np.linalg.norm(np.roll(m.cell_vertices(c), -1, 0) - m.cell_vertices(c), axis=1))
        assert np.allclose(e, [0.25, 0.25, 0.25 * np.sqrt(2)])  # right isosceles


def test_voronoi_n8_seed1():
    m = generate_mesh(MeshFamilySpec("voronoi", 8, seed=1, lloyd_iterations=100))
    assert m.n_cells == 64
    areas = np.array([polygon_area(m.cell_vertices(c)) for c in range(m.n_cells)])
    assert abs(areas.sum() - 1.0) < 1e-12
    for c in range(m.n_cells):
        assert np.all(_cross(m.cell_vertices(c)) > -1e-14)
    assert validate_mesh(m).n_non_star == 0


@pytest.mark.parametrize("family", ["square", "triangle", "voronoi", "web"])
@pytest.mark.parametrize("domain", ["unit-square", "square", "L-shape"])
def test_families_tile_domain(family, domain):
    m = generate_mesh(MeshFamilySpec(family, 4, domain, seed=3))
    g = compute_geometry(m)
    assert g.area.sum() == pytest.approx(domain_area(domain), abs=1e-12)
    # conforming: edges with a single neighbour lie on the domain boundary
    ec = m.edge_cells
    boundary = ec[:, 1] < 0
    mid = g.edge_midpoint[boundary]
    lo, hi = m.vertices.min(axis=0), m.vertices.max(axis=0)
    on_box = (np.isclose(mid, lo).any(axis=1) | np.isclose(mid, hi).any(axis=1)
              | np.isclose(mid, 0.0).any(axis=1))
    assert on_box.all()


@pytest.mark.parametrize("family", ["voronoi", "web"])
def test_deterministic(family):
    a = generate_mesh(MeshFamilySpec(family, 4, seed=7))
    b = generate_mesh(MeshFamilySpec(family, 4, seed=7))
    assert np.array_equal(a.vertices, b.vertices)
    assert all(np.array_equal(x, y) for x, y in zip(a.cells, b.cells))


def test_web_boundary_vertices_stay_on_boundary():
    m = generate_mesh(MeshFamilySpec("web", 6, seed=2))
    bv = m.vertices[m.boundary_vertex_flags]
    assert np.all(np.isclose(bv, 0).any(axis=1) | np.isclose(bv, 1).any(axis=1))
    assert max(len(c) for c in m.cells) == 6


def test_web_displacement_bounded():
    flat = generate_mesh(MeshFamilySpec("web", 4, perturbation_amplitude=0.0))
    moved = generate_mesh(MeshFamilySpec("web", 4, seed=5, perturbation_amplitude=0.3))
    assert flat.n_vertices == moved.n_vertices
    d = np.linalg.norm(flat.vertices - moved.vertices, axis=1)
    # edges of the n=4 triangle mesh are at most sqrt(2)/4 long
    assert d.max() <= 0.3 * np.sqrt(2) / 4 + 1e-12
    assert d.max() > 0


@pytest.mark.parametrize("kw", [dict(family="hex", n=4), dict(family="square", n=0),
                                dict(family="web", n=4, perturbation_amplitude=0.5),
                                dict(family="square", n=4, domain="disk")])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        MeshFamilySpec(**kw)


def test_square_quality():
    q = validate_mesh(generate_mesh(MeshFamilySpec("square", 4)))
    assert q.n_non_star == 0
    assert q.gamma == pytest.approx(1 / np.sqrt(2))


def test_inverted_cell_is_reported():
    m = generate_mesh(MeshFamilySpec("square", 2))
    m.cells[0] = m.cells[0][::-1]
    q = validate_mesh(m)
    assert q.n_non_star == 1
    assert not q.star_flags[0]
    with pytest.raises(MeshValidationError):
        compute_geometry(m)


def test_topology_orientation():
    m = generate_mesh(MeshFamilySpec("square", 2))
    for c in range(m.n_cells):
        cell = m.cells[c]
        for i, e in enumerate(m.cell_edges[c]):
            a, b = cell[i], cell[(i + 1) % len(cell)]
            assert tuple(m.edges[e]) == (min(a, b), max(a, b))
            assert m.cell_edge_orientation[c][i] == (1 if a < b else -1)
    assert m.n_edges == 12
    assert m.boundary_edge_flags.sum() == 8


def test_round_trip(tmp_path):
    m = generate_mesh(MeshFamilySpec("voronoi", 2, seed=4))
    write_mesh(m, tmp_path / "m.json")
    r = read_mesh(tmp_path / "m.json")
    assert np.array_equal(r.vertices, m.vertices)
    assert all(np.array_equal(x, y) for x, y in zip(r.cells, m.cells))


def test_vertex_out_of_range(tmp_path):
    verts = [[i % 3, i // 3] for i in range(9)]
    (tmp_path / "m.json").write_text(json.dumps({"vertices": verts, "cells": [[0, 1, 999]]}))
    with pytest.raises(MeshValidationError, match="vertex index out of range"):
        read_mesh(tmp_path / "m.json")


def test_missing_cells(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"vertices": [[0, 0]]}))
    with pytest.raises(MeshFormatError, match="cells"):
        read_mesh(tmp_path / "m.json")


def test_bad_json_reports_line(tmp_path):
    (tmp_path / "m.json").write_text('{"vertices": [[0, 0]],\n "cells": [[0, 1, 2]')
    with pytest.raises(MeshFormatError, match="line 2"):
        read_mesh(tmp_path / "m.json")


def test_short_cell_rejected():
    with pytest.raises(MeshValidationError):
        PolygonalMesh([[0, 0], [1, 0], [0, 1]], [[0, 1]])


def test_assign_regions():
    m = generate_mesh(MeshFamilySpec("square", 4, "square"))
    assign_regions(m, [(1, (-1, -1), (0, 0))])
    assert m.n_cells == 64 and m.regions.sum() == 16  # cell size 1/n on (-1,1)^2
