"""Conforming bulk triangulations of rectangular domains with a moving
interface.

Meshes come from a structured grid of squares, each split into two
right-isosceles triangles with alternating diagonals, and are refined by
newest-vertex bisection: every triangle stores its vertices so that the
refinement edge is the one opposite vertex 0. Bisecting a right-isosceles
triangle across its hypotenuse yields two right-isosceles children, so
the minimum angle stays at 45 degrees for the whole hierarchy.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, GeometryError, ResourceLimitError

#: Default ceiling on the number of triangles produced by refinement.
ELEMENT_BUDGET = 2_000_000

#: Classification labels.
INTERIOR, EXTERIOR, INTERFACIAL = 0, 1, 2

_GEOM_TOL = 1e-12


@dataclass(frozen=True)
class Domain:
    """Axis-aligned rectangle with an optional axis-aligned rectangular hole."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float
    hole: tuple | None = None  # (xmin, xmax, ymin, ymax)

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ConfigError("empty rectangle")
        if self.hole is not None:
            hx0, hx1, hy0, hy1 = self.hole
            if not (hx1 > hx0 and hy1 > hy0):
                raise ConfigError("empty hole rectangle")
            if not (
                self.xmin < hx0 and hx1 < self.xmax
                and self.ymin < hy0 and hy1 < self.ymax
            ):
                raise ConfigError("hole must lie strictly inside the rectangle")

    @property
    def area(self) -> float:
        a = (self.xmax - self.xmin) * (self.ymax - self.ymin)
        if self.hole is not None:
            hx0, hx1, hy0, hy1 = self.hole
            a -= (hx1 - hx0) * (hy1 - hy0)
        return a

    @property
    def hole_area(self) -> float:
        if self.hole is None:
            return 0.0
        hx0, hx1, hy0, hy1 = self.hole
        return (hx1 - hx0) * (hy1 - hy0)

    def contains(self, points, tol=_GEOM_TOL):
        """Closure membership test for an array of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = (
            (pts[:, 0] >= self.xmin - tol)
            & (pts[:, 0] <= self.xmax + tol)
            & (pts[:, 1] >= self.ymin - tol)
            & (pts[:, 1] <= self.ymax + tol)
        )
        if self.hole is not None:
            hx0, hx1, hy0, hy1 = self.hole
            in_hole = (
                (pts[:, 0] > hx0 + tol)
                & (pts[:, 0] < hx1 - tol)
                & (pts[:, 1] > hy0 + tol)
                & (pts[:, 1] < hy1 - tol)
            )
            inside &= ~in_hole
        return inside


def unit_square_domain():
    return Domain(-1.0, 1.0, -1.0, 1.0)


def holed_square_domain():
    return Domain(-1.0, 1.0, -1.0, 1.0, hole=(-1 / 3, 1 / 3, -1 / 3, 1 / 3))


class BulkMesh:
    """Triangulation with bisection history.

    ``triangles[t] = (v0, v1, v2)`` is counterclockwise with the
    refinement edge between ``v1`` and ``v2`` (opposite the newest
    vertex ``v0``).
    """

    def __init__(self, vertices, triangles, domain, parent=None, generation=None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.domain = domain
        nt = len(self.triangles)
        self.parent = (
            np.full(nt, -1, dtype=np.int64) if parent is None else np.asarray(parent)
        )
        self.generation = (
            np.zeros(nt, dtype=np.int64)
            if generation is None
            else np.asarray(generation)
        )
        self._cache = {}
        if np.any(self.signed_areas() <= 0.0):
            raise GeometryError("mesh contains non-positively oriented triangles")

    # -- derived tables (computed once per mesh) -----------------------------

    def _cached(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    def tri_coords(self):
        return self._cached("tri_coords", lambda: self.vertices[self.triangles])

    def signed_areas(self):
        def build():
            c = self.vertices[self.triangles]
            return 0.5 * _cross2(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

        return self._cached("areas", build)

    def barycenters(self):
        return self._cached(
            "barycenters", lambda: self.tri_coords().mean(axis=1)
        )

    def diameters(self):
        def build():
            c = self.tri_coords()
            l0 = np.linalg.norm(c[:, 1] - c[:, 2], axis=1)
            l1 = np.linalg.norm(c[:, 2] - c[:, 0], axis=1)
            l2 = np.linalg.norm(c[:, 0] - c[:, 1], axis=1)
            return np.maximum(np.maximum(l0, l1), l2)

        return self._cached("diameters", build)

    def _edge_tables(self):
        def build():
            t = self.triangles
            # edge i is opposite local vertex i
            raw = np.concatenate(
                [t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=0
            )
            key = np.minimum(raw[:, 0], raw[:, 1]) * len(self.vertices) + np.maximum(
                raw[:, 0], raw[:, 1]
            )
            uniq, inv = np.unique(key, return_inverse=True)
            nt = len(t)
            tri2edge = inv.reshape(3, nt).T
            edges = np.column_stack([uniq // len(self.vertices),
                                     uniq % len(self.vertices)])
            counts = np.bincount(inv, minlength=len(uniq))
            edge2tri = np.full((len(uniq), 2), -1, dtype=np.int64)
            order = np.argsort(inv, kind="stable")
            tri_of = np.tile(np.arange(nt), 3)[order]
            pos = np.zeros(len(uniq), dtype=np.int64)
            starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
            edge2tri[:, 0] = tri_of[starts]
            has2 = counts == 2
            edge2tri[has2, 1] = tri_of[starts[has2] + 1]
            return edges, tri2edge, edge2tri

        return self._cached("edge_tables", build)

    @property
    def edges(self):
        return self._edge_tables()[0]

    @property
    def tri2edge(self):
        return self._edge_tables()[1]

    @property
    def edge2tri(self):
        return self._edge_tables()[2]

    def boundary_edge_mask(self):
        return self._cached(
            "boundary_edges", lambda: self.edge2tri[:, 1] == -1
        )

    def boundary_vertex_mask(self):
        def build():
            mask = np.zeros(len(self.vertices), dtype=bool)
            mask[self.edges[self.boundary_edge_mask()].ravel()] = True
            return mask

        return self._cached("boundary_vertices", build)

    def min_angle(self) -> float:
        c = self.tri_coords()
        angles = []
        for i in range(3):
            u = c[:, (i + 1) % 3] - c[:, i]
            v = c[:, (i + 2) % 3] - c[:, i]
            cosa = np.einsum("tc,tc->t", u, v) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
            )
            angles.append(np.arccos(np.clip(cosa, -1.0, 1.0)))
        return float(np.min(angles))

    def __len__(self):
        return len(self.triangles)

    # -- point location ------------------------------------------------------

    def _kdtree(self):
        return self._cached("kdtree", lambda: cKDTree(self.barycenters()))

    def barycentric(self, tri_ids, points):
        """Barycentric coordinates of points w.r.t. the given triangles."""
        c = self.vertices[self.triangles[tri_ids]]
        v0 = c[:, 1] - c[:, 0]
        v1 = c[:, 2] - c[:, 0]
        d = points - c[:, 0]
        det = _cross2(v0, v1)
        l1 = _cross2(d, v1) / det
        l2 = _cross2(v0, d) / det
        return np.column_stack([1.0 - l1 - l2, l1, l2])

    def locate_point(self, point, tol=1e-12):
        """Containing triangle and barycentric coordinates of one point.

        Nearby triangles are probed through a barycenter KD-tree with a
        brute-force fallback, so points on shared edges resolve to the
        lowest-index triangle among the owners.
        """
        point = np.asarray(point, dtype=float)
        if not self.domain.contains(point[None, :])[0]:
            raise GeometryError(f"point {point} outside the domain closure")
        k = min(32, len(self.triangles))
        _, cand = self._kdtree().query(point, k=k)
        cand = np.sort(np.atleast_1d(cand))
        bary = self.barycentric(cand, point[None, :].repeat(len(cand), axis=0))
        ok = np.nonzero(bary.min(axis=1) >= -tol)[0]
        if ok.size == 0:
            cand = np.arange(len(self.triangles))
            bary = self.barycentric(cand, point[None, :].repeat(len(cand), axis=0))
            ok = np.nonzero(bary.min(axis=1) >= -tol)[0]
            if ok.size == 0:
                raise GeometryError(f"no triangle contains point {point}")
        best = ok[0]
        return int(cand[best]), bary[best]

    # -- serialization -------------------------------------------------------

    def dump(self, path, labels=None):
        """Plain-text mesh dump with optional per-element classification."""
        with open(path, "w") as fh:
            fh.write(f"{len(self.vertices)} {len(self.triangles)}\n")
            for x, y in self.vertices:
                fh.write(f"{x:.16e} {y:.16e}\n")
            for i, (a, b, c) in enumerate(self.triangles):
                if labels is None:
                    fh.write(f"{a} {b} {c}\n")
                else:
                    fh.write(f"{a} {b} {c} {int(labels[i])}\n")


@dataclass(frozen=True)
class ElementClassification:
    """Disjoint interior/exterior/interfacial partition of the triangles."""

    labels: np.ndarray  # int8 per triangle

    @property
    def interior(self):
        return self.labels == INTERIOR

    @property
    def exterior(self):
        return self.labels == EXTERIOR

    @property
    def interfacial(self):
        return self.labels == INTERFACIAL

    def counts(self):
        return {
            "interior": int(np.sum(self.interior)),
            "exterior": int(np.sum(self.exterior)),
            "interfacial": int(np.sum(self.interfacial)),
        }

    def key(self) -> bytes:
        return self.labels.tobytes()


def build_rectangle_mesh(domain: Domain, h: float) -> BulkMesh:
    """Uniform criss-cross triangulation with triangle diameter at most h.

    Squares are split along alternating diagonals. For holed domains the
    grid is chosen so the hole boundary falls on grid lines.
    """
    if h <= 0.0:
        raise ConfigError("mesh size h must be positive")
    wx = domain.xmax - domain.xmin
    wy = domain.ymax - domain.ymin
    target = h / np.sqrt(2.0) * (1.0 + 1e-12)
    nx = max(1, int(np.ceil(wx / target - 1e-12)))
    ny = max(1, int(np.ceil(wy / target - 1e-12)))
    if domain.hole is not None:
        nx = _align_subdivision(nx, wx, domain.hole[0] - domain.xmin,
                                domain.hole[1] - domain.xmin)
        ny = _align_subdivision(ny, wy, domain.hole[2] - domain.ymin,
                                domain.hole[3] - domain.ymin)

    xs = np.linspace(domain.xmin, domain.xmax, nx + 1)
    ys = np.linspace(domain.ymin, domain.ymax, ny + 1)
    vid = lambda i, j: j * (nx + 1) + i
    tris = []
    for j in range(ny):
        for i in range(nx):
            cx = 0.5 * (xs[i] + xs[i + 1])
            cy = 0.5 * (ys[j] + ys[j + 1])
            if domain.hole is not None:
                hx0, hx1, hy0, hy1 = domain.hole
                if hx0 < cx < hx1 and hy0 < cy < hy1:
                    continue
            p00, p10 = vid(i, j), vid(i + 1, j)
            p01, p11 = vid(i, j + 1), vid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                # diagonal p00 -- p11, right angles at p10 / p01
                tris.append((p10, p11, p00))
                tris.append((p01, p00, p11))
            else:
                # diagonal p10 -- p01
                tris.append((p00, p10, p01))
                tris.append((p11, p01, p10))
    tris = np.asarray(tris, dtype=np.int64)

    grid = np.column_stack(
        [np.tile(xs, ny + 1), np.repeat(ys, nx + 1)]
    )
    used = np.unique(tris)
    remap = np.full(len(grid), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return BulkMesh(grid[used], remap[tris], domain)


def _align_subdivision(n, width, off0, off1):
    """Smallest n' >= n for which both hole offsets land on grid lines."""
    for cand in range(n, 16 * n + 1):
        ok = True
        for off in (off0, off1):
            steps = off / width * cand
            if abs(steps - round(steps)) > 1e-9:
                ok = False
                break
        if ok:
            return cand
    raise ConfigError("cannot align grid with the hole boundary")


def _edge_keys(tris):
    """Per-triangle int64 keys of the three edges, edge i opposite vertex i."""
    a = np.stack([tris[:, 1], tris[:, 2], tris[:, 0]], axis=1)
    b = np.stack([tris[:, 2], tris[:, 0], tris[:, 1]], axis=1)
    lo = np.minimum(a, b).astype(np.int64)
    hi = np.maximum(a, b).astype(np.int64)
    return (lo << 32) | hi


def refine_marked(mesh: BulkMesh, marked, budget=ELEMENT_BUDGET) -> BulkMesh:
    """Bisect the marked triangles, with conforming closure.

    The refinement edges of all marked triangles are bisected; the
    closure recursively marks neighbours so no hanging nodes remain. The
    returned mesh records, per triangle, the index of its source triangle
    in ``mesh`` and its bisection generation.
    """
    marked = np.asarray(marked)
    if marked.dtype == bool:
        marked = np.nonzero(marked)[0]
    if marked.size == 0:
        return mesh

    tris = mesh.triangles
    origin = np.arange(len(tris), dtype=np.int64)
    gen = mesh.generation.copy()
    verts = mesh.vertices

    keys = _edge_keys(tris)
    split = np.unique(keys[marked, 0])
    # closure to a fixpoint: any triangle touching a split edge must also
    # split its own refinement edge
    while True:
        touched = np.isin(keys, split).any(axis=1)
        grown = np.union1d(split, keys[touched, 0])
        if grown.size == split.size:
            break
        split = grown

    new_keys = np.empty(0, dtype=np.int64)
    new_ids = np.empty(0, dtype=np.int64)

    while True:
        keys = _edge_keys(tris)
        touched = np.isin(keys, split).any(axis=1)
        if not touched.any():
            break
        refk = keys[touched, 0]
        if not np.isin(refk, split).all():
            raise GeometryError("bisection closure failed")  # pragma: no cover

        need = np.setdiff1d(np.unique(refk), new_keys)
        if need.size:
            a = need >> 32
            b = need & 0xFFFFFFFF
            mids = 0.5 * (verts[a] + verts[b])
            ids = len(verts) + np.arange(need.size, dtype=np.int64)
            verts = np.vstack([verts, mids])
            new_keys = np.concatenate([new_keys, need])
            new_ids = np.concatenate([new_ids, ids])
            order = np.argsort(new_keys)
            new_keys, new_ids = new_keys[order], new_ids[order]

        mid = new_ids[np.searchsorted(new_keys, refk)]
        tt = tris[touched]
        child_a = np.column_stack([mid, tt[:, 0], tt[:, 1]])
        child_b = np.column_stack([mid, tt[:, 2], tt[:, 0]])
        tris = np.vstack([tris[~touched], child_a, child_b])
        origin = np.concatenate(
            [origin[~touched], origin[touched], origin[touched]]
        )
        gen = np.concatenate([gen[~touched], gen[touched] + 1, gen[touched] + 1])
        if len(tris) > budget:
            raise ResourceLimitError(
                f"refinement exceeded the element budget ({budget})"
            )

    return BulkMesh(verts, tris, mesh.domain, origin, gen)


def interface_distance(points, interface) -> np.ndarray:
    """Distance from each point to the closed polygonal interface."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = interface.vertices
    e = interface.edge_vectors
    ee = np.einsum("jc,jc->j", e, e)
    d = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("pjc,jc->pj", d, e) / ee[None, :], 0.0, 1.0)
    proj = d - t[:, :, None] * e[None, :, :]
    return np.sqrt(np.einsum("pjc,pjc->pj", proj, proj).min(axis=1))


def adaptation_targets(mesh: BulkMesh, interface, h_f, h_c, fine_band=0.5):
    """Per-element diameter targets around the interface.

    Interfacial elements and elements within ``fine_band * h_f`` of the
    interface get the fine size; beyond that the target grows linearly
    with distance, clamped at ``h_c``, grading the mesh geometrically.
    The extra band keeps the mesh valid while the interface sweeps
    forward between refinement events.
    """
    labels = classify_elements(mesh, interface).labels
    dist = interface_distance(mesh.barycenters(), interface)
    target = np.clip(dist - fine_band * h_f, h_f, h_c)
    target[labels == INTERFACIAL] = h_f
    return target


def adapt_to_interface(
    mesh: BulkMesh,
    interface,
    h_f: float,
    h_c: float,
    budget=ELEMENT_BUDGET,
    fine_band=0.5,
) -> BulkMesh:
    """Refine until interfacial elements are finer than ``h_f``.

    Returns the input mesh object unchanged when no refinement is needed,
    so the operation is idempotent.
    """
    if h_f > h_c:
        raise ConfigError("h_f must not exceed h_c")
    current = mesh
    while True:
        diam = current.diameters()
        target = adaptation_targets(current, interface, h_f, h_c, fine_band)
        marked = diam > target * (1.0 + 1e-12)
        if not np.any(marked):
            return current
        current = refine_marked(current, marked, budget=budget)


def classify_elements(mesh: BulkMesh, interface) -> ElementClassification:
    """Partition triangles into interior, exterior and interfacial.

    A triangle is interfacial when its closure meets the interface;
    remaining triangles are labelled by an even-odd test of their
    barycenter against the polygon.
    """
    if not np.all(mesh.domain.contains(interface.vertices)):
        raise GeometryError("interface vertex outside the domain closure")

    labels = np.full(len(mesh.triangles), EXTERIOR, dtype=np.int8)
    crossed = _crossed_triangles(mesh, interface)
    labels[crossed] = INTERFACIAL
    rest = ~crossed
    inside = interface.contains_points(mesh.barycenters()[rest])
    idx = np.nonzero(rest)[0]
    labels[idx[inside]] = INTERIOR
    return ElementClassification(labels)


def _crossed_triangles(mesh: BulkMesh, interface):
    """Boolean mask of triangles whose closure intersects the interface."""
    tc = mesh.tri_coords()
    tmin = tc.min(axis=1)
    tmax = tc.max(axis=1)
    sa = interface.vertices
    sb = np.roll(sa, -1, axis=0)
    smin = np.minimum(sa, sb)
    smax = np.maximum(sa, sb)

    tol = 1e-12 * max(
        mesh.domain.xmax - mesh.domain.xmin, mesh.domain.ymax - mesh.domain.ymin
    )
    overlap = (
        (tmin[:, None, 0] <= smax[None, :, 0] + tol)
        & (tmax[:, None, 0] >= smin[None, :, 0] - tol)
        & (tmin[:, None, 1] <= smax[None, :, 1] + tol)
        & (tmax[:, None, 1] >= smin[None, :, 1] - tol)
    )
    t_idx, s_idx = np.nonzero(overlap)
    crossed = np.zeros(len(mesh.triangles), dtype=bool)
    if t_idx.size == 0:
        return crossed

    tri = tc[t_idx]
    p1 = sa[s_idx]
    p2 = sb[s_idx]

    # endpoint of a segment inside the closed triangle
    for pt in (p1, p2):
        bary = _bary_of(tri, pt)
        crossed_pairs = bary.min(axis=1) >= -tol
        crossed[t_idx[crossed_pairs]] = True

    # triangle corner on the closed segment
    for i in range(3):
        v = tri[:, i]
        d = _cross2(p2 - p1, v - p1)
        seglen2 = np.einsum("pc,pc->p", p2 - p1, p2 - p1)
        t_par = np.einsum("pc,pc->p", v - p1, p2 - p1) / seglen2
        on = (np.abs(d) <= tol * np.sqrt(seglen2)) & (t_par >= -tol) & (
            t_par <= 1 + tol
        )
        crossed[t_idx[on]] = True

    # proper crossing of the segment with a triangle edge
    for i in range(3):
        a = tri[:, (i + 1) % 3]
        b = tri[:, (i + 2) % 3]
        d1 = _cross2(b - a, p1 - a)
        d2 = _cross2(b - a, p2 - a)
        d3 = _cross2(p2 - p1, a - p1)
        d4 = _cross2(p2 - p1, b - p1)
        hit = (d1 * d2 < 0) & (d3 * d4 < 0)
        crossed[t_idx[hit]] = True

    return crossed


def _bary_of(tri, pts):
    v0 = tri[:, 1] - tri[:, 0]
    v1 = tri[:, 2] - tri[:, 0]
    d = pts - tri[:, 0]
    det = _cross2(v0, v1)
    l1 = _cross2(d, v1) / det
    l2 = _cross2(v0, d) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def discrete_viscosity(
    classification: ElementClassification, mu_minus: float, mu_plus: float
) -> np.ndarray:
    """Per-element viscosity: inner, outer, or their mean on cut elements."""
    if mu_minus <= 0.0 or mu_plus <= 0.0:
        raise ConfigError("viscosities must be positive")
    mu = np.empty(len(classification.labels))
    mu[classification.interior] = mu_minus
    mu[classification.exterior] = mu_plus
    mu[classification.interfacial] = 0.5 * (mu_minus + mu_plus)
    return mu


def locate_point(mesh: BulkMesh, point, tol=1e-12):
    return mesh.locate_point(point, tol=tol)


class DofLayout:
    """Degree-of-freedom maps for a velocity/pressure element pair.

    Velocity is vector P2 (vertices plus edge midpoints, two components
    interleaved as ``2 * node + component``). Pressure is P1, P0 or
    P1 + P0, optionally enriched with one extra inner-phase indicator
    degree of freedom appended last.
    """

    PAIRS = ("p2p1", "p2p0", "p2p1p0")

    def __init__(self, mesh: BulkMesh, element="p2p1", xfem=False):
        if element not in self.PAIRS:
            raise ConfigError(f"unknown element pair '{element}'")
        self.mesh = mesh
        self.element = element
        self.xfem = bool(xfem)

        nv = len(mesh.vertices)
        ne = len(mesh.edges)
        nt = len(mesh.triangles)
        self.n_scalar_p2 = nv + ne
        self.n_velocity = 2 * self.n_scalar_p2

        emid = 0.5 * (
            mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]]
        )
        self.p2_coords = np.vstack([mesh.vertices, emid])
        # local P2 ordering: vertices then opposite-edge midpoints
        self.tri_p2 = np.column_stack([mesh.triangles, nv + mesh.tri2edge])

        bmask = np.zeros(self.n_scalar_p2, dtype=bool)
        bmask[: nv][mesh.boundary_vertex_mask()] = True
        bmask[nv:][mesh.boundary_edge_mask()] = True
        self.boundary_p2 = bmask
        self.dirichlet_velocity = np.repeat(bmask, 2)

        if element == "p2p1":
            self.n_p1, self.n_p0 = nv, 0
        elif element == "p2p0":
            self.n_p1, self.n_p0 = 0, nt
        else:
            self.n_p1, self.n_p0 = nv, nt
        self.n_pressure_std = self.n_p1 + self.n_p0
        self.n_pressure = self.n_pressure_std + (1 if self.xfem else 0)
        self.xfem_index = self.n_pressure_std if self.xfem else None

        # pinned pressure dofs: one for the constant mode, plus one P0 dof
        # for the P1/P0 constant redundancy of the composite pair
        if element == "p2p1p0":
            self.pressure_pins = (self.n_p1, 0)
        else:
            self.pressure_pins = (0,)

    def pressure_unit_mass(self, areas):
        """Integrals of the standard pressure basis functions over the domain."""
        w = np.zeros(self.n_pressure_std)
        if self.n_p1:
            np.add.at(
                w[: self.n_p1],
                self.mesh.triangles.ravel(),
                np.repeat(areas / 3.0, 3),
            )
        if self.n_p0:
            w[self.n_p1:] = areas
        return w


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
