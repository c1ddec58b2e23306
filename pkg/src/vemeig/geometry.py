"""Elementary planar polygon geometry shared by the mesh and quadrature code."""

import numpy as np


def polygon_area(verts):
    """Signed area (positive for counterclockwise vertex order)."""
    x, y = verts[:, 0], verts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * np.sum(x * yn - xn * y)


def polygon_centroid(verts):
    """Area centroid by the shoelace moment formulas."""
    x, y = verts[:, 0], verts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * np.sum(cross)
    if area == 0.0:
        raise ValueError("degenerate polygon: zero area")
    cx = np.sum((x + xn) * cross) / (6.0 * area)
    cy = np.sum((y + yn) * cross) / (6.0 * area)
    return np.array([cx, cy])


def polygon_diameter(verts):
    """Largest pairwise vertex distance."""
    diff = verts[:, None, :] - verts[None, :, :]
    return float(np.sqrt((diff ** 2).sum(axis=-1)).max())


def edge_lengths(verts):
    return np.linalg.norm(np.roll(verts, -1, axis=0) - verts, axis=1)


def outward_normals(verts):
    """Unit outward normals of the edges (V_i, V_{i+1}) of a CCW polygon."""
    t = np.roll(verts, -1, axis=0) - verts
    n = np.column_stack([t[:, 1], -t[:, 0]])
    return n / np.linalg.norm(n, axis=1)[:, None]


def triangle_area(a, b, c):
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))


def fan_triangle_areas(verts, center):
    """Signed areas of the triangles (center, V_i, V_{i+1})."""
    a = verts - center
    b = np.roll(verts, -1, axis=0) - center
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def is_star_about(verts, center, rtol=1e-12):
    areas = fan_triangle_areas(verts, center)
    scale = max(abs(polygon_area(verts)), np.finfo(float).tiny)
    return bool(np.all(areas > rtol * scale))


def _point_in_triangle(p, a, b, c):
    eps = -1e-14
    return (triangle_area(a, b, p) >= eps and triangle_area(b, c, p) >= eps
            and triangle_area(c, a, p) >= eps)


def ear_clip(verts):
    """Triangulate a simple CCW polygon; returns an (n-2, 3) index array."""
    idx = list(range(len(verts)))
    tris = []
    guard = 0
    while len(idx) > 3:
        n = len(idx)
        for j in range(n):
            i0, i1, i2 = idx[j - 1], idx[j], idx[(j + 1) % n]
            a, b, c = verts[i0], verts[i1], verts[i2]
            if triangle_area(a, b, c) <= 0.0:
                continue
            others = (verts[m] for m in idx if m not in (i0, i1, i2))
            if any(_point_in_triangle(p, a, b, c) for p in others):
                continue
            tris.append((i0, i1, i2))
            idx.pop(j)
            break
        else:
            raise ValueError("ear clipping failed: polygon is not simple or not CCW")
        guard += 1
        if guard > 10 * len(verts):
            raise ValueError("ear clipping did not terminate")
    tris.append(tuple(idx))
    return np.array(tris, dtype=int)
