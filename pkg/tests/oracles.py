"""Independent reference implementations used to pin expected values.

Everything here recomputes quantities through a different route than the
package (plain loops, closed forms, shapely geometry, dense algebra) so
tests never compare an implementation against itself.
"""

import numpy as np
from shapely.geometry import LineString, Point, Polygon


def shoelace_area(points):
    x = np.asarray(points)[:, 0]
    y = np.asarray(points)[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def loop_vertex_normals(points):
    """Weighted vertex normals from the definition, with plain loops."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    seg_normal = []
    seg_len = []
    for j in range(n):
        e = pts[(j + 1) % n] - pts[j]
        ln = float(np.hypot(*e))
        seg_len.append(ln)
        seg_normal.append(np.array([e[1], -e[0]]) / ln)
    omega = np.zeros((n, 2))
    star = np.zeros(n)
    for k in range(n):
        adj = [(k - 1) % n, k]
        star[k] = sum(seg_len[j] for j in adj)
        omega[k] = sum(seg_len[j] * seg_normal[j] for j in adj) / star[k]
    return omega, star, np.asarray(seg_normal), np.asarray(seg_len)


def lumped_curvature_system(points):
    """Assemble the lumped curvature identity directly and solve it.

    Builds the 2K x K lumped normal mass and the position Laplacian from
    their definitions with loops, then solves the overdetermined system
    in the least-squares sense.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    omega, star, _, seg_len = loop_vertex_normals(pts)
    M = np.zeros((2 * n, n))
    rhs = np.zeros(2 * n)
    for k in range(n):
        M[2 * k: 2 * k + 2, k] = 0.5 * star[k] * omega[k]
        lap = (pts[k] - pts[k - 1]) / seg_len[(k - 1) % n] + (
            pts[k] - pts[(k + 1) % n]
        ) / seg_len[k]
        rhs[2 * k: 2 * k + 2] = -lap
    kappa, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return kappa


def shapely_classify(tri_coords, interface_points):
    """Per-triangle label using shapely closure intersections."""
    poly = Polygon(interface_points)
    boundary = LineString(
        np.vstack([interface_points, interface_points[:1]])
    )
    labels = []
    for tri in tri_coords:
        t = Polygon(tri)
        if t.intersects(boundary):
            labels.append(2)
        elif poly.contains(t.centroid):
            labels.append(0)
        else:
            labels.append(1)
    return np.asarray(labels, dtype=np.int8)


def shapely_contains(interface_points, pts):
    poly = Polygon(interface_points)
    return np.array([poly.contains(Point(*p)) for p in np.atleast_2d(pts)])


def shapely_clip_area(tri, interface_points):
    return Polygon(interface_points).intersection(Polygon(tri)).area


def gauss_segment_integral(f, a, b, order=10):
    """High-order Gauss rule along the segment from a to b."""
    x, w = np.polynomial.legendre.leggauss(order)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = float(np.hypot(*(b - a)))
    pts = a[None, :] + 0.5 * (x[:, None] + 1.0) * (b - a)[None, :]
    vals = np.array([f(p) for p in pts])
    return 0.5 * length * float(w @ vals)


def p2_value_at(tri, node, point):
    """P2 basis value on a physical triangle, local node order as in the
    package (vertices, then midpoints opposite each vertex)."""
    v0, v1, v2 = np.asarray(tri, dtype=float)
    M = np.column_stack([v1 - v0, v2 - v0])
    xi, eta = np.linalg.solve(M, np.asarray(point, dtype=float) - v0)
    l = np.array([1 - xi - eta, xi, eta])
    if node < 3:
        return l[node] * (2 * l[node] - 1)
    i = node - 3
    return 4 * l[(i + 1) % 3] * l[(i + 2) % 3]
