"""Assembly of the coupled velocity/pressure/interface system.

Bulk blocks use vector P2 velocities with a degree-4 triangle rule (exact
for every polynomial integrand appearing here). Interface pairings are
integrated exactly by splitting each interface segment at its crossings
with bulk element edges and applying a Gauss rule per sub-piece, since
the integrands are only piecewise polynomial along a segment.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .bulk_mesh import BulkMesh, DofLayout
from .errors import ConfigError, GeometryError
from .interface_mesh import InterfaceMesh, VertexNormalField

# 6-point, degree-4 triangle rule (barycentric points, weights sum to 1)
_TRI_A = 0.445948490915965
_TRI_B = 0.091576213509771
_TRI_WA = 0.223381589678011
_TRI_WB = 0.109951743655322
TRI_QUAD_BARY = np.array(
    [
        [1 - 2 * _TRI_A, _TRI_A, _TRI_A],
        [_TRI_A, 1 - 2 * _TRI_A, _TRI_A],
        [_TRI_A, _TRI_A, 1 - 2 * _TRI_A],
        [1 - 2 * _TRI_B, _TRI_B, _TRI_B],
        [_TRI_B, 1 - 2 * _TRI_B, _TRI_B],
        [_TRI_B, _TRI_B, 1 - 2 * _TRI_B],
    ]
)
TRI_QUAD_W = np.array([_TRI_WA] * 3 + [_TRI_WB] * 3)


def p2_values(bary):
    """P2 basis values at barycentric points; vertices then opposite midpoints."""
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    return np.stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l1 * l2,
            4 * l2 * l0,
            4 * l0 * l1,
        ],
        axis=-1,
    )


def p2_bary_gradients(bary):
    """Derivatives of the P2 basis w.r.t. the barycentric coordinates."""
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    z = np.zeros_like(l0)
    rows = [
        [4 * l0 - 1, z, z],
        [z, 4 * l1 - 1, z],
        [z, z, 4 * l2 - 1],
        [z, 4 * l2, 4 * l1],
        [4 * l2, z, 4 * l0],
        [4 * l1, 4 * l0, z],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def _bary_gradients(mesh: BulkMesh):
    """Physical gradients of the barycentric coordinates, (T, 3, 2)."""
    c = mesh.tri_coords()
    twoA = 2.0 * mesh.signed_areas()
    g = np.empty((len(mesh.triangles), 3, 2))
    for i in range(3):
        e = c[:, (i + 2) % 3] - c[:, (i + 1) % 3]
        g[:, i, 0] = -e[:, 1] / twoA
        g[:, i, 1] = e[:, 0] / twoA
    return g


def p2_physical_gradients(mesh: BulkMesh, bary=TRI_QUAD_BARY):
    """Gradients of the 6 P2 basis functions at quadrature points, (T, Q, 6, 2)."""
    dldx = _bary_gradients(mesh)  # (T, 3, 2)
    dNdl = p2_bary_gradients(bary)  # (Q, 6, 3)
    return np.einsum("qnl,tlc->tqnc", dNdl, dldx)


def viscous_block(mesh: BulkMesh, dofs: DofLayout, mu_elem, subset=None):
    """Rate-of-strain form ``2 (mu D(u), D(v))`` over vector P2.

    With ``subset`` (element indices) only those elements contribute, which
    supports incremental updates when the discrete viscosity changes on a
    few reclassified elements.
    """
    mu_elem = np.asarray(mu_elem, dtype=float)
    areas = mesh.signed_areas()
    if subset is not None:
        subset = np.asarray(subset)
        grads = np.einsum(
            "qnl,tlc->tqnc", p2_bary_gradients(TRI_QUAD_BARY),
            _bary_gradients(mesh)[subset],
        )
        scale = mu_elem[subset] * areas[subset]
        nodes = dofs.tri_p2[subset]
    else:
        grads = p2_physical_gradients(mesh)  # (T, Q, 6, 2)
        scale = mu_elem * areas
        nodes = dofs.tri_p2
    wq = TRI_QUAD_W

    # G[m, n, a, b] = int mu d_a(phi_m) d_b(phi_n)
    G = np.einsum("q,tqma,tqnb,t->tmnab", wq, grads, grads, scale, optimize=True)
    Gxx, Gxy = G[..., 0, 0], G[..., 0, 1]
    Gyx, Gyy = G[..., 1, 0], G[..., 1, 1]

    nu = dofs.n_velocity
    rows_m = 2 * nodes[:, :, None]
    cols_n = 2 * nodes[:, None, :]

    def coo(block_rows, block_cols, vals):
        return (
            np.broadcast_to(block_rows, vals.shape).ravel(),
            np.broadcast_to(block_cols, vals.shape).ravel(),
            vals.ravel(),
        )

    r00, c00, v00 = coo(rows_m, cols_n, 2 * Gxx + Gyy)
    r01, c01, v01 = coo(rows_m, cols_n + 1, Gyx)
    r10, c10, v10 = coo(rows_m + 1, cols_n, Gxy)
    r11, c11, v11 = coo(rows_m + 1, cols_n + 1, 2 * Gyy + Gxx)
    return sp.coo_matrix(
        (
            np.concatenate([v00, v01, v10, v11]),
            (
                np.concatenate([r00, r01, r10, r11]),
                np.concatenate([c00, c01, c10, c11]),
            ),
        ),
        shape=(nu, nu),
    ).tocsr()


def assemble_stokes(mesh: BulkMesh, dofs: DofLayout, mu_elem, f_nodal=None):
    """Viscous block, divergence block and body-force load vector.

    Returns ``(A, B, rhs_f)`` where ``A`` is the symmetric rate-of-strain
    form ``2 (mu D(u), D(v))`` over vector P2, ``B`` holds the pairings
    ``(psi_c, div phi)`` for the standard pressure basis, and ``rhs_f``
    integrates the P2-interpolated body force against the velocity basis.
    """
    areas = mesh.signed_areas()
    grads = p2_physical_gradients(mesh)  # (T, Q, 6, 2)
    wq = TRI_QUAD_W
    nodes = dofs.tri_p2  # (T, 6)
    nu = dofs.n_velocity
    A = viscous_block(mesh, dofs, mu_elem)

    # divergence pairings for the standard pressure space
    vals = p2_values(TRI_QUAD_BARY)  # (Q, 6)
    rows, cols, data = [], [], []
    if dofs.n_p1:
        # P1 basis values at the quadrature points are the barycentrics
        Bp1 = np.einsum(
            "q,qk,tqnc,t->tknc", wq, TRI_QUAD_BARY, grads, areas, optimize=True
        )
        prows = mesh.triangles[:, :, None]  # (T, 3, 1)
        for c in range(2):
            rows.append(np.broadcast_to(prows, Bp1.shape[:3]).ravel())
            cols.append(
                np.broadcast_to(2 * nodes[:, None, :] + c, Bp1.shape[:3]).ravel()
            )
            data.append(Bp1[..., c].ravel())
    if dofs.n_p0:
        Bp0 = np.einsum("q,tqnc,t->tnc", wq, grads, areas, optimize=True)
        trow = dofs.n_p1 + np.arange(len(mesh.triangles))[:, None]
        for c in range(2):
            rows.append(np.broadcast_to(trow, Bp0.shape[:2]).ravel())
            cols.append((2 * nodes + c).ravel())
            data.append(Bp0[..., c].ravel())
    B = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dofs.n_pressure_std, nu),
    ).tocsr()

    rhs = np.zeros(nu)
    if f_nodal is not None:
        f_nodal = np.asarray(f_nodal, dtype=float)
        M = np.einsum("q,qm,qn,t->tmn", wq, vals, vals, areas, optimize=True)
        fe = f_nodal[nodes]  # (T, 6, 2)
        load = np.einsum("tmn,tnc->tmc", M, fe)
        for c in range(2):
            np.add.at(rhs, (2 * nodes + c).ravel(), load[..., c].ravel())
    return A, B, rhs


def assemble_load(mesh: BulkMesh, dofs: DofLayout, f_nodal) -> np.ndarray:
    """Load vector of a P2-interpolated body force, (n_velocity,)."""
    areas = mesh.signed_areas()
    vals = p2_values(TRI_QUAD_BARY)
    M = np.einsum(
        "q,qm,qn,t->tmn", TRI_QUAD_W, vals, vals, areas, optimize=True
    )
    fe = np.asarray(f_nodal, dtype=float)[dofs.tri_p2]
    load = np.einsum("tmn,tnc->tmc", M, fe)
    rhs = np.zeros(dofs.n_velocity)
    for c in range(2):
        np.add.at(rhs, (2 * dofs.tri_p2 + c).ravel(), load[..., c].ravel())
    return rhs


@dataclass
class SurfaceQuadrature:
    """Gauss points along the interface, split at bulk-edge crossings.

    Every point carries its physical position, arc-length weight, the
    bulk triangle containing it with barycentric coordinates, and the
    interface segment with the segment parameter in [0, 1].
    """

    points: np.ndarray   # (P, 2)
    weights: np.ndarray  # (P,)
    tri: np.ndarray      # (P,)
    bary: np.ndarray     # (P, 3)
    seg: np.ndarray      # (P,)
    t: np.ndarray        # (P,)


def _candidate_pairs(mesh: BulkMesh, interface: InterfaceMesh):
    """(tri, seg) pairs with overlapping bounding boxes."""
    tc = mesh.tri_coords()
    tmin, tmax = tc.min(axis=1), tc.max(axis=1)
    sa = interface.vertices
    sb = np.roll(sa, -1, axis=0)
    smin, smax = np.minimum(sa, sb), np.maximum(sa, sb)
    tol = 1e-12
    overlap = (
        (tmin[:, None, 0] <= smax[None, :, 0] + tol)
        & (tmax[:, None, 0] >= smin[None, :, 0] - tol)
        & (tmin[:, None, 1] <= smax[None, :, 1] + tol)
        & (tmax[:, None, 1] >= smin[None, :, 1] - tol)
    )
    return np.nonzero(overlap)


def build_surface_quadrature(
    mesh: BulkMesh, interface: InterfaceMesh, order: int = 3
) -> SurfaceQuadrature:
    """Exact-split Gauss quadrature along the interface polygon.

    Each segment is cut at its intersections with candidate triangle
    edges; a Gauss rule of the given order is laid on every sub-piece and
    each point is assigned to the triangle containing the sub-piece
    midpoint (lowest triangle index on ties).
    """
    if order < 1:
        raise ConfigError("quadrature order must be at least 1")
    t_idx, s_idx = _candidate_pairs(mesh, interface)
    if t_idx.size == 0:
        raise GeometryError("interface does not overlap the bulk mesh")

    sa = interface.vertices
    sb = np.roll(sa, -1, axis=0)
    p1, p2 = sa[s_idx], sb[s_idx]
    tri = mesh.tri_coords()[t_idx]

    # segment parameters of crossings with candidate triangle edges
    cut_t = [np.zeros(0)]
    cut_s = [np.zeros(0, dtype=np.int64)]
    for i in range(3):
        a = tri[:, (i + 1) % 3]
        b = tri[:, (i + 2) % 3]
        den = _cross2(p2 - p1, b - a)
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = _cross2(a - p1, b - a) / den
            ss = _cross2(a - p1, p2 - p1) / den
        ok = (
            (np.abs(den) > 1e-14)
            & (tt > 1e-12)
            & (tt < 1 - 1e-12)
            & (ss > -1e-12)
            & (ss < 1 + 1e-12)
        )
        cut_t.append(tt[ok])
        cut_s.append(s_idx[ok])
    cut_t = np.concatenate(cut_t)
    cut_s = np.concatenate(cut_s)

    K = len(interface)
    gx, gw = np.polynomial.legendre.leggauss(order)  # on [-1, 1]

    # sorted per-segment breakpoints including the segment endpoints
    all_s = np.concatenate([cut_s, np.arange(K), np.arange(K)])
    all_t = np.concatenate([cut_t, np.zeros(K), np.ones(K)])
    order_idx = np.lexsort((all_t, all_s))
    all_s, all_t = all_s[order_idx], all_t[order_idx]
    same_seg = all_s[1:] == all_s[:-1]
    gap = all_t[1:] - all_t[:-1]
    piece = same_seg & (gap > 1e-12)
    pieces_seg = all_s[:-1][piece]
    pieces_lo = all_t[:-1][piece]
    pieces_hi = all_t[1:][piece]
    # absorb sub-resolution slivers so the pieces exactly tile [0, 1]
    ends = np.concatenate([np.nonzero(pieces_seg[1:] != pieces_seg[:-1])[0],
                           [len(pieces_seg) - 1]])
    starts = np.concatenate([[0], ends[:-1] + 1])
    pieces_lo[starts] = 0.0
    pieces_hi[ends] = 1.0
    inner = np.ones(len(pieces_seg), dtype=bool)
    inner[starts] = False
    pieces_lo[inner] = pieces_hi[np.nonzero(inner)[0] - 1]

    mid_t = 0.5 * (pieces_lo + pieces_hi)
    mid_xy = sa[pieces_seg] + mid_t[:, None] * (sb - sa)[pieces_seg]
    piece_tri = _locate_many(mesh, mid_xy, t_idx, s_idx, pieces_seg)

    # Gauss points per piece
    npc = len(pieces_seg)
    half = 0.5 * (pieces_hi - pieces_lo)
    t_pts = (
        mid_t[:, None] + half[:, None] * gx[None, :]
    ).ravel()
    seg_pts = np.repeat(pieces_seg, order)
    tri_pts = np.repeat(piece_tri, order)
    w_pts = (
        half[:, None] * gw[None, :] * interface.lengths[pieces_seg][:, None]
    ).ravel()
    xy = sa[seg_pts] + t_pts[:, None] * (sb - sa)[seg_pts]
    bary = mesh.barycentric(tri_pts, xy)
    return SurfaceQuadrature(
        points=xy, weights=w_pts, tri=tri_pts, bary=bary, seg=seg_pts, t=t_pts
    )


def _locate_many(mesh, pts, cand_t, cand_s, pt_seg):
    """Containing triangle per point among its segment's candidate triangles."""
    order = np.argsort(cand_s, kind="stable")
    cs, ct = cand_s[order], cand_t[order]
    counts = np.bincount(cs, minlength=int(cand_s.max()) + 1)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    reps = counts[pt_seg]
    pt_of_pair = np.repeat(np.arange(len(pts)), reps)
    pair_starts = np.concatenate([[0], np.cumsum(reps)[:-1]])
    offs = np.arange(int(reps.sum())) - np.repeat(pair_starts, reps)
    tri_of_pair = ct[starts[pt_seg[pt_of_pair]] + offs]

    bary = mesh.barycentric(tri_of_pair, pts[pt_of_pair])
    ok = bary.min(axis=1) >= -1e-12
    result = np.full(len(pts), -1, dtype=np.int64)
    # lowest triangle index wins ties
    sel = np.nonzero(ok)[0]
    if sel.size:
        ord2 = np.lexsort((tri_of_pair[sel], pt_of_pair[sel]))
        sel = sel[ord2]
        first_pts, first_idx = np.unique(pt_of_pair[sel], return_index=True)
        result[first_pts] = tri_of_pair[sel][first_idx]
    if np.any(result < 0):
        i = int(np.nonzero(result < 0)[0][0])
        raise GeometryError(
            f"no bulk triangle contains interface quadrature point {pts[i]}"
        )
    return result


def assemble_surface_tension(
    quad: SurfaceQuadrature, dofs: DofLayout, segment_normals
) -> sp.csr_matrix:
    """Pairing of interface hat functions times the normal with velocity.

    Entry (k, a) integrates ``chi_k (nu . phi_a)`` over the interface with
    the split-exact quadrature; the same matrix enters the momentum and
    the interface-motion equations, which keeps the two couplings exact
    transposes of each other by construction.
    """
    K = len(segment_normals)
    phi = p2_values(quad.bary)  # (P, 6)
    nodes = dofs.tri_p2[quad.tri]  # (P, 6)
    nu_pts = segment_normals[quad.seg]  # (P, 2)
    chi = np.stack([1.0 - quad.t, quad.t], axis=1)  # (P, 2) endpoints k, k+1
    krows = np.stack([quad.seg, (quad.seg + 1) % K], axis=1)

    data = np.einsum("p,pe,pc,pn->penc", quad.weights, chi, nu_pts, phi)
    rows = np.broadcast_to(krows[:, :, None, None], data.shape)
    cols = (
        2 * nodes[:, None, :, None] + np.arange(2)[None, None, None, :]
    )
    cols = np.broadcast_to(cols, data.shape)
    return sp.coo_matrix(
        (data.ravel(), (rows.ravel(), cols.ravel())),
        shape=(K, dofs.n_velocity),
    ).tocsr()


def assemble_vector_pairing(
    quad: SurfaceQuadrature, dofs: DofLayout, num_vertices: int
) -> sp.csr_matrix:
    """Pairing of vector interface hats with velocity (componentwise)."""
    K = num_vertices
    phi = p2_values(quad.bary)
    nodes = dofs.tri_p2[quad.tri]
    chi = np.stack([1.0 - quad.t, quad.t], axis=1)
    krows = np.stack([quad.seg, (quad.seg + 1) % K], axis=1)

    data = np.einsum("p,pe,pn->pen", quad.weights, chi, phi)
    data = np.repeat(data[:, :, None, :], 2, axis=2)  # component c
    rows = 2 * krows[:, :, None, None] + np.arange(2)[None, None, :, None]
    rows = np.broadcast_to(rows, data.shape)
    cols = 2 * nodes[:, None, None, :] + np.arange(2)[None, None, :, None]
    cols = np.broadcast_to(cols, data.shape)
    return sp.coo_matrix(
        (data.ravel(), (rows.ravel(), cols.ravel())),
        shape=(2 * K, dofs.n_velocity),
    ).tocsr()


def assemble_interface_blocks(
    interface: InterfaceMesh, normals: VertexNormalField
):
    """Lumped normal-projection, curve stiffness and full curve mass.

    ``M_lump`` maps a vector vertex field to its weighted-normal lumped
    pairing per vertex; its transpose is the lumped curvature mass.
    ``K_curve`` is the componentwise difference-quotient stiffness of the
    polygon, with constant fields as kernel. ``M_full`` is the exact
    piecewise-linear mass matrix used by the vector-curvature variant.
    """
    K = len(interface)
    w = 0.5 * normals.star_measure[:, None] * normals.omega  # (K, 2)
    rows = np.repeat(np.arange(K), 2)
    cols = (2 * np.arange(K)[:, None] + np.arange(2)[None, :]).ravel()
    M_lump = sp.coo_matrix((w.ravel(), (rows, cols)), shape=(K, 2 * K)).tocsr()

    nxt = (np.arange(K) + 1) % K
    inv_l = 1.0 / interface.lengths
    r, c, v = [], [], []
    for comp in range(2):
        a = 2 * np.arange(K) + comp
        b = 2 * nxt + comp
        r += [a, a, b, b]
        c += [a, b, a, b]
        v += [inv_l, -inv_l, -inv_l, inv_l]
    K_curve = sp.coo_matrix(
        (np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
        shape=(2 * K, 2 * K),
    ).tocsr()

    l6 = interface.lengths / 6.0
    r, c, v = [], [], []
    for comp in range(2):
        a = 2 * np.arange(K) + comp
        b = 2 * nxt + comp
        r += [a, a, b, b]
        c += [a, b, a, b]
        v += [2 * l6, l6, l6, 2 * l6]
    M_full = sp.coo_matrix(
        (np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
        shape=(2 * K, 2 * K),
    ).tocsr()
    return M_lump, K_curve, M_full


def assemble_xfem_row(
    quad: SurfaceQuadrature,
    dofs: DofLayout,
    pairing: sp.csr_matrix,
    interface: InterfaceMesh,
) -> np.ndarray:
    """Divergence pairing with the inner-phase indicator function.

    Written purely through boundary integrals of ``Omega_-``: the
    interface part is the column sum of the surface-tension pairing
    (hat functions sum to one), and on holed domains the enclosed part of
    the outer boundary contributes an edge-quadrature flux, which lands on
    constrained velocity dofs and thus on the right-hand side.
    """
    row = np.asarray(pairing.sum(axis=0)).ravel()
    mesh = dofs.mesh
    if mesh.domain.hole is not None:
        for edge, nodal in _boundary_edge_normals(dofs):
            mid = 0.5 * (mesh.vertices[edge[0]] + mesh.vertices[edge[1]])
            if interface.contains_points(mid[None, :])[0]:
                for node, wgt, n in nodal:
                    row[2 * node] += wgt * n[0]
                    row[2 * node + 1] += wgt * n[1]
    return row


def _boundary_edge_normals(dofs: DofLayout):
    """Boundary edges with Simpson weights for the P2 trace flux."""
    mesh = dofs.mesh
    bmask = mesh.boundary_edge_mask()
    eids = np.nonzero(bmask)[0]
    out = []
    for e in eids:
        a, b = mesh.edges[e]
        owner = mesh.edge2tri[e, 0]
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        tvec = pb - pa
        length = np.hypot(*tvec)
        n = np.array([tvec[1], -tvec[0]]) / length
        centroid = mesh.vertices[mesh.triangles[owner]].mean(axis=0)
        if np.dot(n, centroid - 0.5 * (pa + pb)) > 0:
            n = -n
        mid_node = len(mesh.vertices) + e
        nodal = [
            (a, length / 6.0, n),
            (b, length / 6.0, n),
            (mid_node, 2.0 * length / 3.0, n),
        ]
        out.append(((a, b), nodal))
    return out


def boundary_flux(dofs: DofLayout, g_values: np.ndarray) -> float:
    """Flux of the P2 boundary trace through the whole domain boundary."""
    total = 0.0
    for _, nodal in _boundary_edge_normals(dofs):
        for node, wgt, n in nodal:
            total += wgt * (
                g_values[2 * node] * n[0] + g_values[2 * node + 1] * n[1]
            )
    return total


@dataclass
class CoupledSystem:
    """Assembled sparse blocks of one time step.

    ``B`` stacks the divergence pairings of the standard pressure basis
    and, when enabled, the inner-phase enrichment row; the momentum block
    uses its transpose, so the two appearances of every pairing are the
    same matrix. ``N`` couples curvature to velocity and appears
    transposed in the momentum equation.
    """

    dofs: DofLayout
    interface: InterfaceMesh
    normals: VertexNormalField
    tau: float
    gamma: float
    scheme: str
    A: sp.csr_matrix
    B: sp.csr_matrix
    N: sp.csr_matrix
    M_lump: sp.csr_matrix
    K_curve: sp.csr_matrix
    M_full: sp.csr_matrix
    rhs_f: np.ndarray
    x_prev: np.ndarray
    pressure_unit: np.ndarray
    domain_area: float
    N_vec: sp.csr_matrix | None = None
    g_values: np.ndarray | None = None
    div_rhs: np.ndarray | None = None


def inner_phase_area(interface: InterfaceMesh, domain) -> float:
    """Area of the inner phase inside the domain (hole excluded)."""
    area = interface.enclosed_area()
    if domain.hole is None:
        return area
    hx0, hx1, hy0, hy1 = domain.hole
    corners = np.array([[hx0, hy0], [hx1, hy0], [hx1, hy1], [hx0, hy1]])
    inside = interface.contains_points(corners)
    if inside.all():
        return area - domain.hole_area
    if not inside.any():
        return area
    raise GeometryError("domain hole straddles the interface")


def build_coupled_system(
    mesh: BulkMesh,
    interface: InterfaceMesh,
    dofs: DofLayout,
    mu_elem,
    gamma: float,
    tau: float,
    scheme: str = "main",
    f_nodal=None,
    quad: SurfaceQuadrature | None = None,
    bulk_blocks=None,
) -> CoupledSystem:
    """Assemble all blocks of the coupled system on the current geometry.

    ``bulk_blocks`` may carry precomputed ``(A, B, rhs_f)`` from a previous
    step on the same mesh and classification.
    """
    if scheme not in ("main", "dziuk"):
        raise ConfigError(f"unknown scheme '{scheme}'")
    normals = interface.vertex_normals()
    if quad is None:
        quad = build_surface_quadrature(mesh, interface)
    if bulk_blocks is None:
        A, B_std, rhs_f = assemble_stokes(mesh, dofs, mu_elem, f_nodal)
    else:
        A, B_std, rhs_f = bulk_blocks
    N = assemble_surface_tension(quad, dofs, normals.segment_normals)

    pressure_unit = dofs.pressure_unit_mass(mesh.signed_areas())
    if dofs.xfem:
        row = assemble_xfem_row(quad, dofs, N, interface)
        B = sp.vstack([B_std, sp.csr_matrix(row[None, :])], format="csr")
        pressure_unit = np.append(
            pressure_unit, inner_phase_area(interface, mesh.domain)
        )
    else:
        B = B_std

    M_lump, K_curve, M_full = assemble_interface_blocks(interface, normals)
    N_vec = (
        assemble_vector_pairing(quad, dofs, len(interface))
        if scheme == "dziuk"
        else None
    )
    return CoupledSystem(
        dofs=dofs,
        interface=interface,
        normals=normals,
        tau=tau,
        gamma=gamma,
        scheme=scheme,
        A=A,
        B=B,
        N=N,
        M_lump=M_lump,
        K_curve=K_curve,
        M_full=M_full,
        rhs_f=rhs_f,
        x_prev=interface.vertices.ravel().copy(),
        pressure_unit=pressure_unit,
        domain_area=mesh.domain.area,
        N_vec=N_vec,
    )


def apply_dirichlet(system: CoupledSystem, g_nodal=None) -> CoupledSystem:
    """Fix boundary velocity dofs and set the compatibility right-hand side.

    ``g_nodal`` holds boundary velocity values per P2 node, (n, 2); only
    boundary nodes are read. The divergence rows receive the flux of the
    interpolated boundary datum weighted by each pressure basis integral,
    which reduces to zero for homogeneous data.
    """
    from dataclasses import replace

    d = system.dofs
    g_values = np.zeros(d.n_velocity)
    if g_nodal is not None:
        g_nodal = np.asarray(g_nodal, dtype=float)
        bnodes = np.nonzero(d.boundary_p2)[0]
        g_values[2 * bnodes] = g_nodal[bnodes, 0]
        g_values[2 * bnodes + 1] = g_nodal[bnodes, 1]
    flux = boundary_flux(d, g_values) if g_nodal is not None else 0.0
    div_rhs = system.pressure_unit * (flux / system.domain_area)
    return replace(system, g_values=g_values, div_rhs=div_rhs)


def write_matrix(path, mat: sp.spmatrix):
    """Coordinate-format text dump with deterministic row-major ordering."""
    coo = mat.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {v:.16e}\n")


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
