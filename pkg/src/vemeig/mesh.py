"""Polygonal meshes: data structure, generators, geometry, quality checks and I/O.

Supported families: structured squares, structured right triangles (each
square split along its (0,0)-(1,1) diagonal), clipped Lloyd-relaxed Voronoi
tessellations, and WEB-like hexagonal meshes. Domains: the unit square,
the square (-1,1)^2 and the L-shape (-1,1)^2 minus (0,1)x(-1,0).
"""

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import (fan_triangle_areas, polygon_area, polygon_centroid, polygon_diameter)

FAMILIES = ("square", "triangle", "voronoi", "web")
DOMAINS = ("unit-square", "square", "L-shape")


class MeshFormatError(ValueError):
    """Malformed mesh file."""


class MeshValidationError(ValueError):
    """Mesh data that violates the structural invariants."""


@dataclass
class PolygonalMesh:
    vertices: np.ndarray
    cells: list
    regions: np.ndarray = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        self.cells = [np.asarray(c, dtype=int) for c in self.cells]
        if self.regions is None:
            self.regions = np.zeros(len(self.cells), dtype=int)
        self.regions = np.asarray(self.regions, dtype=int)
        if len(self.regions) != len(self.cells):
            raise MeshValidationError("regions must have one label per cell")
        nv = len(self.vertices)
        for c, cell in enumerate(self.cells):
            if len(cell) < 3:
                raise MeshValidationError(f"cell {c} has fewer than 3 vertices")
            if cell.min() < 0 or cell.max() >= nv:
                raise MeshValidationError(
                    f"cell {c}: vertex index out of range (mesh has {nv} vertices)")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_edges(self):
        return len(self.edges)

    def cell_vertices(self, c):
        return self.vertices[self.cells[c]]

    @cached_property
    def _topology(self):
        lookup = {}
        edges = []
        edge_cells = []
        cell_edges = []
        cell_orient = []
        for c, cell in enumerate(self.cells):
            ids = np.empty(len(cell), dtype=int)
            orient = np.empty(len(cell), dtype=int)
            for i, a in enumerate(cell):
                b = cell[(i + 1) % len(cell)]
                key = (min(a, b), max(a, b))
                e = lookup.get(key)
                if e is None:
                    e = len(edges)
                    lookup[key] = e
                    edges.append(key)
                    edge_cells.append([c, -1])
                else:
                    if edge_cells[e][1] != -1:
                        raise MeshValidationError(f"edge {key} is shared by more than two cells")
                    edge_cells[e][1] = c
                ids[i] = e
                orient[i] = 1 if a < b else -1
            cell_edges.append(ids)
            cell_orient.append(orient)
        return (np.array(edges, dtype=int).reshape(-1, 2),
                np.array(edge_cells, dtype=int).reshape(-1, 2), cell_edges, cell_orient)

    @property
    def edges(self):
        """Unique edges as (low, high) vertex index pairs."""
        return self._topology[0]

    @property
    def edge_cells(self):
        """Adjacent cells per edge; the second entry is -1 on the boundary."""
        return self._topology[1]

    @property
    def cell_edges(self):
        return self._topology[2]

    @property
    def cell_edge_orientation(self):
        """+1 where the cell's CCW edge runs from the lower to the higher vertex index."""
        return self._topology[3]

    @property
    def boundary_edge_flags(self):
        return self.edge_cells[:, 1] < 0

    @property
    def boundary_vertex_flags(self):
        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[self.edges[self.boundary_edge_flags].ravel()] = True
        return flags


@dataclass
class MeshFamilySpec:
    family: str
    n: int
    domain: str = "unit-square"
    seed: int = 0
    lloyd_iterations: int = 100
    perturbation_amplitude: float = 0.2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown mesh family {self.family!r}; expected one of {FAMILIES}")
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}; expected one of {DOMAINS}")
        if int(self.n) < 1:
            raise ValueError("resolution n must be >= 1")
        if not 0.0 <= self.perturbation_amplitude < 0.5:
            raise ValueError("perturbation_amplitude must lie in [0, 0.5)")
        if self.lloyd_iterations < 0:
            raise ValueError("lloyd_iterations must be >= 0")


@dataclass
class GeometryCache:
    area: np.ndarray
    centroid: np.ndarray
    diameter: np.ndarray
    edge_length: np.ndarray
    edge_midpoint: np.ndarray
    # cell_normals[c][i]: outward unit normal of the i-th local edge of cell c
    cell_normals: list = field(repr=False)

    @property
    def h(self):
        return float(self.diameter.max())


@dataclass
class QualityReport:
    min_area: float
    max_area: float
    gamma: float
    star_flags: np.ndarray
    n_non_star: int


def domain_area(domain):
    return {"unit-square": 1.0, "square": 4.0, "L-shape": 3.0}[domain]


def domain_polygon(domain):
    if domain == "unit-square":
        return np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    if domain == "square":
        return np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    if domain == "L-shape":
        return np.array([[-1, -1], [0, -1], [0, 0], [1, 0], [1, 1], [-1, 1]], dtype=float)
    raise ValueError(f"unknown domain {domain!r}")


def _in_domain(domain, pts):
    x, y = pts[:, 0], pts[:, 1]
    if domain == "unit-square":
        return (x > 0) & (x < 1) & (y > 0) & (y < 1)
    inside = (x > -1) & (x < 1) & (y > -1) & (y < 1)
    if domain == "L-shape":
        inside &= ~((x > 0) & (y < 0))
    return inside


def _structured(domain, n):
    """Grid points and kept quads of cell size 1/n covering the domain."""
    lo, hi = (0.0, 1.0) if domain == "unit-square" else (-1.0, 1.0)
    m = int(round((hi - lo) * n))
    xs = np.linspace(lo, hi, m + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    pts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (m + 1) + i

    quads = []
    for j in range(m):
        for i in range(m):
            center = np.array([[(xs[i] + xs[i + 1]) / 2, (xs[j] + xs[j + 1]) / 2]])
            if not _in_domain(domain, center)[0]:
                continue
            quads.append((vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)))
    return pts, quads


def _compact(pts, cells):
    used = np.unique(np.concatenate([np.asarray(c) for c in cells]))
    remap = -np.ones(len(pts), dtype=int)
    remap[used] = np.arange(len(used))
    return pts[used], [remap[np.asarray(c)] for c in cells]


def square_mesh(n, domain="unit-square"):
    pts, quads = _structured(domain, n)
    verts, cells = _compact(pts, quads)
    return PolygonalMesh(verts, cells)


def triangle_mesh(n, domain="unit-square"):
    pts, quads = _structured(domain, n)
    tris = []
    for a, b, c, d in quads:
        tris.append((a, b, c))
        tris.append((a, c, d))
    verts, cells = _compact(pts, tris)
    return PolygonalMesh(verts, cells)


def _clipped_voronoi_cells(sites, domain):
    """Voronoi cells of ``sites`` intersected with the domain (shapely polygons)."""
    import shapely
    from scipy.spatial import Voronoi

    far = 100.0
    ghosts = np.array([[-far, -far], [far, -far], [far, far], [-far, far]])
    vor = Voronoi(np.vstack([sites, ghosts]))
    dom = shapely.Polygon(domain_polygon(domain))
    polys = []
    for s in range(len(sites)):
        region = vor.regions[vor.point_region[s]]
        polys.append(shapely.Polygon(vor.vertices[region]))
    return shapely.intersection(np.array(polys, dtype=object), dom)


def _random_sites(rng, domain, count):
    lo, hi = (0.0, 1.0) if domain == "unit-square" else (-1.0, 1.0)
    out = np.empty((0, 2))
    while len(out) < count:
        cand = rng.uniform(lo, hi, size=(2 * count, 2))
        out = np.vstack([out, cand[_in_domain(domain, cand)]])
    return out[:count]


def voronoi_mesh(n, domain="unit-square", seed=0, lloyd_iterations=100):
    """Clipped Voronoi mesh with about n^2 sites per unit area, Lloyd-relaxed."""
    import shapely

    rng = np.random.default_rng(seed)
    count = max(2, int(round(domain_area(domain) * n * n)))
    sites = _random_sites(rng, domain, count)
    for _ in range(lloyd_iterations):
        cells = _clipped_voronoi_cells(sites, domain)
        sites = shapely.get_coordinates(shapely.centroid(cells))
    cells = _clipped_voronoi_cells(sites, domain)
    return _mesh_from_polygons(cells, tol=1e-9 / n)


def _mesh_from_polygons(polys, tol):
    """Merge clipped cell polygons into a conforming mesh (shared vertices)."""
    import shapely
    from scipy.spatial import cKDTree

    loops = []
    for p in polys:
        if p.geom_type != "Polygon":
            raise MeshValidationError(f"clipped Voronoi cell is a {p.geom_type}, not a polygon")
        ring = np.asarray(shapely.get_coordinates(p.exterior))[:-1]
        if polygon_area(ring) < 0:
            ring = ring[::-1]
        loops.append(ring)
    allpts = np.vstack(loops)
    tree = cKDTree(allpts)
    parent = np.arange(len(allpts))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in sorted(tree.query_pairs(tol)):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(allpts))])
    uniq, inv = np.unique(roots, return_inverse=True)
    verts = allpts[uniq]
    cells = []
    start = 0
    for ring in loops:
        ids = inv[start:start + len(ring)]
        start += len(ring)
        keep = [ids[i] for i in range(len(ids)) if ids[i] != ids[(i + 1) % len(ids)]]
        cells.append(keep)
    return PolygonalMesh(verts, cells)


def web_mesh(n, domain="unit-square", seed=0, amplitude=0.2, max_retries=5):
    """Hexagonal WEB-like mesh from the structured triangle mesh.

    Every triangle gains its three edge midpoints as vertices; the midpoints
    of interior edges are pushed along the edge normal by a uniform random
    offset in [-amplitude, amplitude] * h_e.
    """
    base = triangle_mesh(n, domain)
    edges = base.edges
    a = base.vertices[edges[:, 0]]
    b = base.vertices[edges[:, 1]]
    mid = 0.5 * (a + b)
    t = b - a
    he = np.linalg.norm(t, axis=1)
    normal = np.column_stack([-t[:, 1], t[:, 0]]) / he[:, None]
    interior = ~base.boundary_edge_flags
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=len(edges))
    nv = base.n_vertices
    cells = []
    for c, cell in enumerate(base.cells):
        loop = []
        for i, v in enumerate(cell):
            loop.append(v)
            loop.append(nv + base.cell_edges[c][i])
        cells.append(loop)
    amp = amplitude
    for _ in range(max_retries + 1):
        offset = (amp * u * he * interior)[:, None] * normal
        verts = np.vstack([base.vertices, mid + offset])
        mesh = PolygonalMesh(verts, cells)
        if all(polygon_area(mesh.cell_vertices(c)) > 0 and _is_simple(mesh.cell_vertices(c))
               for c in range(mesh.n_cells)):
            return mesh
        amp *= 0.5
    raise MeshValidationError("WEB perturbation keeps producing inverted cells")


def _segments_cross(p1, p2, q1, q2):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _is_simple(verts):
    n = len(verts)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(verts[i], verts[(i + 1) % n], verts[j], verts[(j + 1) % n]):
                return False
    return True


def generate_mesh(spec):
    if spec.family == "square":
        return square_mesh(spec.n, spec.domain)
    if spec.family == "triangle":
        return triangle_mesh(spec.n, spec.domain)
    if spec.family == "voronoi":
        return voronoi_mesh(spec.n, spec.domain, spec.seed, spec.lloyd_iterations)
    return web_mesh(spec.n, spec.domain, spec.seed, spec.perturbation_amplitude)


def assign_regions(mesh, boxes):
    """Label cells by centroid membership in axis-aligned boxes.

    ``boxes`` is a sequence of (label, (xmin, ymin), (xmax, ymax)); later
    boxes win. Cells outside every box keep label 0.
    """
    cent = np.array([polygon_centroid(mesh.cell_vertices(c)) for c in range(mesh.n_cells)])
    labels = np.zeros(mesh.n_cells, dtype=int)
    for label, lo, hi in boxes:
        inside = np.all((cent >= np.asarray(lo)) & (cent <= np.asarray(hi)), axis=1)
        labels[inside] = int(label)
    mesh.regions = labels
    return mesh


def compute_geometry(mesh):
    nc = mesh.n_cells
    area = np.empty(nc)
    cent = np.empty((nc, 2))
    diam = np.empty(nc)
    normals = []
    for c in range(nc):
        v = mesh.cell_vertices(c)
        area[c] = polygon_area(v)
        if not area[c] > 0.0:
            raise MeshValidationError(f"cell {c} is degenerate or clockwise (area {area[c]:.3e})")
        cent[c] = polygon_centroid(v)
        diam[c] = polygon_diameter(v)
        t = np.roll(v, -1, axis=0) - v
        nrm = np.column_stack([t[:, 1], -t[:, 0]])
        normals.append(nrm / np.linalg.norm(nrm, axis=1)[:, None])
    p = mesh.vertices[mesh.edges]
    elen = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    return GeometryCache(area, cent, diam, elen, p.mean(axis=1), normals)


def validate_mesh(mesh):
    areas = np.array([polygon_area(mesh.cell_vertices(c)) for c in range(mesh.n_cells)])
    star = np.zeros(mesh.n_cells, dtype=bool)
    gamma = np.inf
    for c in range(mesh.n_cells):
        v = mesh.cell_vertices(c)
        hP = polygon_diameter(v)
        he = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
        gamma = min(gamma, he.min() / hP)
        if areas[c] > 0:
            star[c] = bool(np.all(fan_triangle_areas(v, polygon_centroid(v)) > 0))
    return QualityReport(float(areas.min()), float(areas.max()), float(gamma),
                         star, int((~star).sum()))


def write_mesh(mesh, path):
    doc = {
        "vertices": mesh.vertices.tolist(),
        "cells": [c.tolist() for c in mesh.cells],
        "regions": mesh.regions.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def read_mesh(path):
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MeshFormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise MeshFormatError(f"{path}: top-level value must be an object")
    for key in ("vertices", "cells"):
        if key not in doc:
            raise MeshFormatError(f"{path}: missing field {key!r}")
    try:
        verts = np.asarray(doc["vertices"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise MeshFormatError(f"{path}: field 'vertices': {exc}") from exc
    if verts.ndim != 2 or verts.shape[1] != 2:
        raise MeshFormatError(f"{path}: field 'vertices' must be a list of [x, y] pairs")
    cells = doc["cells"]
    if not isinstance(cells, list) or not all(
            isinstance(c, list) and all(isinstance(i, int) for i in c) for c in cells):
        raise MeshFormatError(f"{path}: field 'cells' must be a list of integer lists")
    regions = doc.get("regions")
    return PolygonalMesh(verts, cells, regions)
