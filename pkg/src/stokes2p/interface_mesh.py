"""Closed polygonal interface curves and their discrete geometry.

The interface is an oriented closed polygon. Vertices are stored in
counterclockwise chain order around the inner phase, so segment ``j``
connects vertex ``j`` to vertex ``(j+1) % K``. Per-segment unit normals
point out of the inner phase, and each vertex carries a length-weighted
average of its two adjacent segment normals together with the measure of
its two-segment star. These weighted normals drive the lumped inner
products used by the evolution scheme.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AssumptionViolation, ContractError, GeometryError

#: Threshold for the singular-value ratio of the vertex-normal matrix.
SPAN_RANK_TOL = 1e-10

#: Lumped vertex masses below this are treated as singular.
LUMPED_MASS_TOL = 1e-14


@dataclass(frozen=True)
class VertexNormalField:
    """Weighted vertex normals and the data they are built from.

    ``omega[k]`` is the length-weighted average of the two segment normals
    adjacent to vertex ``k`` and ``star_measure[k]`` is the total length of
    those two segments. ``span_ratio`` is the ratio of the two singular
    values of the 2 x K matrix of vertex normals; the nondegeneracy
    assumption requires it to exceed ``SPAN_RANK_TOL``.
    """

    omega: np.ndarray          # (K, 2)
    star_measure: np.ndarray   # (K,)
    segment_normals: np.ndarray  # (J, 2)
    span_ratio: float

    @property
    def span_ok(self) -> bool:
        return self.span_ratio > SPAN_RANK_TOL


class InterfaceMesh:
    """Oriented closed polygonal curve.

    Parameters
    ----------
    vertices : (K, 2) array
        Vertex coordinates.
    segments : (J, 2) int array, optional
        Vertex index pairs. If omitted the vertices are taken to be in
        chain order. Arbitrary segment orderings are accepted and
        canonicalized: the constructor rebuilds the counterclockwise
        chain, so after construction ``segments[j] == (j, (j+1) % K)``.
    check_simple : bool
        Run the O(K^2) self-intersection sweep (on by default).

    Raises
    ------
    GeometryError
        Degenerate segments, open or multiply-connected curves, or a
        self-intersecting polygon.
    """

    def __init__(self, vertices, segments=None, check_simple=True):
        vertices = np.asarray(vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ContractError("vertices must be a (K, 2) array")
        K = len(vertices)
        if K < 3:
            raise GeometryError("a closed polygon needs at least 3 vertices")

        if segments is not None:
            vertices = self._chain_order(vertices, np.asarray(segments, dtype=int))

        # enforce counterclockwise orientation (inner phase on the left)
        if _signed_area(vertices) < 0.0:
            vertices = vertices[::-1].copy()

        self.vertices = vertices
        self.segments = np.column_stack(
            [np.arange(K), np.roll(np.arange(K), -1)]
        )

        e = np.roll(vertices, -1, axis=0) - vertices
        self.edge_vectors = e
        self.lengths = np.hypot(e[:, 0], e[:, 1])
        bad = np.nonzero(self.lengths <= 0.0)[0]
        if bad.size:
            raise GeometryError(f"degenerate segment {bad[0]} has zero length")

        if check_simple and not self._is_simple():
            raise GeometryError("interface polygon is self-intersecting")

    @staticmethod
    def _chain_order(vertices, segments):
        """Rebuild the vertex array in closed-chain order."""
        K = len(vertices)
        if segments.shape != (K, 2):
            raise GeometryError(
                "closed curve requires as many segments as vertices"
            )
        counts = np.bincount(segments.ravel(), minlength=K)
        if not np.all(counts == 2):
            raise GeometryError("every vertex must belong to exactly 2 segments")
        neighbors = [[] for _ in range(K)]
        for a, b in segments:
            neighbors[a].append(b)
            neighbors[b].append(a)
        order = [0, neighbors[0][0]]
        while len(order) < K:
            prev, cur = order[-2], order[-1]
            nxt = neighbors[cur][1] if neighbors[cur][0] == prev else neighbors[cur][0]
            if nxt == 0:
                break
            order.append(nxt)
        if len(order) != K or sorted(order) != list(range(K)):
            raise GeometryError("segments do not form a single closed chain")
        return vertices[order]

    def _is_simple(self):
        """Proper-crossing sweep over all non-adjacent segment pairs."""
        K = len(self.vertices)
        p = self.vertices
        q = np.roll(p, -1, axis=0)
        # side[i, j] of segment i's endpoints relative to segment j and back
        dp = _pair_side(p, q, p)
        dq = _pair_side(p, q, q)
        proper = (dp * dq < 0) & (dp.T * dq.T < 0)
        idx = np.arange(K)
        gap = np.abs(idx[:, None] - idx[None, :])
        adj = (gap <= 1) | (gap == K - 1)
        return not np.any(proper & ~adj)

    # -- basic measures ----------------------------------------------------

    def __len__(self):
        return len(self.vertices)

    @property
    def num_segments(self):
        return len(self.vertices)

    def total_length(self) -> float:
        return float(self.lengths.sum())

    def diameter_max(self) -> float:
        return float(self.lengths.max())

    def equidistribution_ratio(self) -> float:
        """Longest segment over shortest segment (>= 1)."""
        return float(self.lengths.max() / self.lengths.min())

    def enclosed_area(self) -> float:
        """Area of the inner phase via the boundary flux of the position field."""
        mid = 0.5 * (self.vertices + np.roll(self.vertices, -1, axis=0))
        ln = self.scaled_normals()
        area = 0.5 * float(np.einsum("jc,jc->", ln, mid))
        if area <= 0.0:
            raise GeometryError("enclosed area is not positive")
        return area

    def is_convex(self) -> bool:
        e = self.edge_vectors
        turns = _cross(e, np.roll(e, -1, axis=0))
        return bool(np.all(turns >= -1e-14 * self.lengths.max() ** 2))

    # -- normals -----------------------------------------------------------

    def scaled_normals(self):
        """Per-segment outward normals scaled by segment length."""
        e = self.edge_vectors
        return np.column_stack([e[:, 1], -e[:, 0]])

    def segment_normals(self):
        """Per-segment outward unit normals (rotate the direction by -90 deg)."""
        return self.scaled_normals() / self.lengths[:, None]

    def vertex_normals(self, require_span=True) -> VertexNormalField:
        """Length-weighted vertex normals and star measures.

        Raises :class:`AssumptionViolation` when the vertex normals do not
        span the plane (singular-value ratio below ``SPAN_RANK_TOL``),
        unless ``require_span`` is False.
        """
        ln = self.scaled_normals()
        ln_prev = np.roll(ln, 1, axis=0)
        star = self.lengths + np.roll(self.lengths, 1)
        omega = (ln + ln_prev) / star[:, None]
        sv = np.linalg.svd(omega.T, compute_uv=False)
        ratio = float(sv[1] / sv[0]) if sv[0] > 0 else 0.0
        if require_span and ratio <= SPAN_RANK_TOL:
            raise AssumptionViolation(
                f"vertex normals span ratio {ratio:.3e} below {SPAN_RANK_TOL:.1e}"
            )
        return VertexNormalField(
            omega=omega,
            star_measure=star,
            segment_normals=ln / self.lengths[:, None],
            span_ratio=ratio,
        )

    # -- inner products and curvature ---------------------------------------

    def lumped_inner(self, v, w) -> float:
        """Vertex-lumped inner product of two piecewise linear fields.

        Each field is given by per-vertex values, either scalars of shape
        (K,) or vectors of shape (K, 2). Every segment contributes half its
        length times the endpoint values of ``v . w``.
        """
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        K = len(self.vertices)
        if v.shape[0] != K or w.shape[0] != K or v.shape != w.shape:
            raise ContractError(
                f"per-vertex value shapes {v.shape} and {w.shape} do not match "
                f"the {K} mesh vertices"
            )
        vw = v * w if v.ndim == 1 else np.einsum("kc,kc->k", v, w)
        star = self.lengths + np.roll(self.lengths, 1)
        return float(0.5 * np.dot(star, vw))

    def curve_laplacian(self, values=None):
        """Difference-quotient Laplacian of a per-vertex field along the curve.

        For the position field this is the assembled stiffness action
        whose vertex components must align with the weighted normals for a
        discrete constant-curvature polygon.
        """
        x = self.vertices if values is None else np.asarray(values, dtype=float)
        d_next = (x - np.roll(x, -1, axis=0)) / self.lengths[:, None]
        d_prev = (x - np.roll(x, 1, axis=0)) / np.roll(self.lengths, 1)[:, None]
        return d_next + d_prev

    def discrete_curvature(self) -> np.ndarray:
        """Per-vertex curvature from the lumped curvature identity.

        Solves the vertex-normal projection of the curvature equation with
        the identity position field; negative on convex inner phases.
        """
        field = self.vertex_normals()
        mass = 0.5 * field.star_measure * np.einsum(
            "kc,kc->k", field.omega, field.omega
        )
        if np.any(np.abs(mass) < LUMPED_MASS_TOL):
            k = int(np.argmin(np.abs(mass)))
            raise GeometryError(
                f"singular lumped curvature mass at vertex {k}: {mass[k]:.3e}"
            )
        rhs = np.einsum("kc,kc->k", self.curve_laplacian(), field.omega)
        return -rhs / mass

    # -- queries -----------------------------------------------------------

    def contains_points(self, points) -> np.ndarray:
        """Even-odd crossing test for an array of points, vectorized."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        a = self.vertices
        b = np.roll(a, -1, axis=0)
        x, y = pts[:, 0][:, None], pts[:, 1][:, None]
        ay, by = a[:, 1][None, :], b[:, 1][None, :]
        ax, bx = a[:, 0][None, :], b[:, 0][None, :]
        straddle = (ay <= y) != (by <= y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = ax + (y - ay) * (bx - ax) / (by - ay)
        hits = straddle & (x < xi)
        return hits.sum(axis=1) % 2 == 1

    def moved(self, new_vertices, check_simple=True) -> "InterfaceMesh":
        """New mesh with the same connectivity and moved vertices."""
        return InterfaceMesh(new_vertices, check_simple=check_simple)

    # -- serialization -------------------------------------------------------

    def dump(self, path):
        """Write the plain-text polyline format (bit-exact round trip)."""
        with open(path, "w") as fh:
            fh.write(f"{len(self.vertices)} {len(self.segments)}\n")
            for x, y in self.vertices:
                fh.write(f"{x:.16e} {y:.16e}\n")
            for a, b in self.segments:
                fh.write(f"{a} {b}\n")

    @classmethod
    def load(cls, path) -> "InterfaceMesh":
        with open(path) as fh:
            nv, ne = (int(s) for s in fh.readline().split())
            verts = np.array(
                [[float(s) for s in fh.readline().split()] for _ in range(nv)]
            )
            segs = np.array(
                [[int(s) for s in fh.readline().split()] for _ in range(ne)]
            )
        return cls(verts, segs)


def _signed_area(vertices):
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _pair_side(p, q, r):
    """Side of point r_i relative to each directed segment (p_j, q_j)."""
    e = q - p
    return _cross(e[None, :, :], r[:, None, :] - p[None, :, :])


def segment_normals(mesh: InterfaceMesh) -> np.ndarray:
    """Outward unit normals per segment."""
    return mesh.segment_normals()


def vertex_normals(mesh: InterfaceMesh, require_span=True) -> VertexNormalField:
    """Weighted vertex normal field; raises on nondegeneracy failure."""
    return mesh.vertex_normals(require_span=require_span)


def lumped_inner(mesh: InterfaceMesh, v, w) -> float:
    return mesh.lumped_inner(v, w)


def enclosed_area(mesh: InterfaceMesh) -> float:
    return mesh.enclosed_area()


def equidistribution_ratio(mesh: InterfaceMesh) -> float:
    return mesh.equidistribution_ratio()


def discrete_curvature_standalone(mesh: InterfaceMesh) -> np.ndarray:
    return mesh.discrete_curvature()
