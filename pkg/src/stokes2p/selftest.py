"""Built-in oracle suite: independent cross-checks of the core operations.

Each check recomputes a quantity through a second, independent route
(closed forms, exact monomial integration, exact polygon clipping, dense
solves) and compares against the production path at a fixed tolerance.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import assembly as asm
from . import linear_solver as lsv
from . import verification as vf
from .bulk_mesh import BulkMesh, Domain, DofLayout, build_rectangle_mesh, \
    classify_elements, discrete_viscosity, unit_square_domain
from .interface_mesh import InterfaceMesh


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def _poly_mul(p, q):
    out = {}
    for (a1, b1), c1 in p.items():
        for (a2, b2), c2 in q.items():
            key = (a1 + a2, b1 + b2)
            out[key] = out.get(key, 0.0) + c1 * c2
    return out


def _poly_diff(p, var):
    out = {}
    for (a, b), c in p.items():
        if var == 0 and a > 0:
            out[(a - 1, b)] = out.get((a - 1, b), 0.0) + c * a
        if var == 1 and b > 0:
            out[(a, b - 1)] = out.get((a, b - 1), 0.0) + c * b
    return out


def _poly_integrate_t0(p):
    """Exact integral over the unit right triangle via factorials."""
    total = 0.0
    for (a, b), c in p.items():
        total += c * math.factorial(a) * math.factorial(b) / math.factorial(
            a + b + 2
        )
    return total


def _p2_reference_polys():
    x = {(1, 0): 1.0}
    y = {(0, 1): 1.0}
    l0 = {(0, 0): 1.0, (1, 0): -1.0, (0, 1): -1.0}
    two = lambda p: {k: 2 * v for k, v in p.items()}
    minus1 = lambda p: {**p, (0, 0): p.get((0, 0), 0.0) - 1.0}
    return [
        _poly_mul(l0, minus1(two(l0))),
        _poly_mul(x, minus1(two(x))),
        _poly_mul(y, minus1(two(y))),
        {(1, 1): 4.0},
        {k: 4 * v for k, v in _poly_mul(y, l0).items()},
        {k: 4 * v for k, v in _poly_mul(x, l0).items()},
    ]


def check_polygon_curvature():
    """Regular polygons have the closed-form constant discrete curvature."""
    worst = 0.0
    for n in (8, 32, 128):
        for r in (0.5, 1.0):
            th = 2 * np.pi * np.arange(n) / n
            mesh = InterfaceMesh(r * np.column_stack([np.cos(th), np.sin(th)]))
            kappa = mesh.discrete_curvature()
            exact = -1.0 / (r * np.cos(np.pi / n))
            worst = max(worst, float(np.abs(kappa - exact).max() / abs(exact)))
    return CheckResult(
        "polygon_curvature_closed_form", worst <= 1e-10,
        f"max rel err {worst:.2e} (tol 1e-10)",
    )


def check_curvature_limit():
    n, r = 512, 0.5
    th = 2 * np.pi * np.arange(n) / n
    mesh = InterfaceMesh(r * np.column_stack([np.cos(th), np.sin(th)]))
    err = float(np.abs(mesh.discrete_curvature() + 2.0).max())
    return CheckResult(
        "curvature_circle_limit", err <= 1e-4, f"|kappa + 2| = {err:.2e}"
    )


def check_shoelace():
    rng = np.random.default_rng(42)
    worst = 0.0
    for n in (64, 128):
        th = 2 * np.pi * np.arange(n) / n
        rad = 0.5 + 0.08 * np.cos(3 * th) + 0.01 * rng.standard_normal(n)
        pts = rad[:, None] * np.column_stack([np.cos(th), np.sin(th)])
        mesh = InterfaceMesh(pts)
        x, y = pts[:, 0], pts[:, 1]
        shoelace = 0.5 * abs(
            np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)
        )
        worst = max(
            worst, abs(mesh.enclosed_area() - shoelace) / shoelace
        )
    return CheckResult(
        "shoelace_area", worst <= 1e-13, f"max rel diff {worst:.2e}"
    )


def check_element_matrix():
    """P2 viscous element matrix against exact monomial integration."""
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    mesh = BulkMesh(verts, np.array([[0, 1, 2]]), Domain(0, 1, 0, 1))
    dofs = DofLayout(mesh, "p2p1")
    A, B, _ = asm.assemble_stokes(mesh, dofs, np.array([1.0]))

    polys = _p2_reference_polys()
    grads = [
        (_poly_diff(p, 0), _poly_diff(p, 1)) for p in polys
    ]
    nodes = dofs.tri_p2[0]
    worst = 0.0
    for m in range(6):
        for n in range(6):
            gm, gn = grads[m], grads[n]
            gxx = _poly_integrate_t0(_poly_mul(gm[0], gn[0]))
            gxy = _poly_integrate_t0(_poly_mul(gm[0], gn[1]))
            gyx = _poly_integrate_t0(_poly_mul(gm[1], gn[0]))
            gyy = _poly_integrate_t0(_poly_mul(gm[1], gn[1]))
            expect = {
                (0, 0): 2 * gxx + gyy,
                (0, 1): gyx,
                (1, 0): gxy,
                (1, 1): 2 * gyy + gxx,
            }
            for (c, d), val in expect.items():
                got = A[2 * nodes[m] + c, 2 * nodes[n] + d]
                worst = max(worst, abs(got - val))
    return CheckResult(
        "element_matrix_bruteforce", worst <= 1e-13,
        f"max abs diff {worst:.2e}",
    )


def check_xfem_row():
    """Surface-integral enrichment row against exact cut-cell integration."""
    mesh = build_rectangle_mesh(unit_square_domain(), 2**0.5 / 4)
    n = 64
    th = 2 * np.pi * np.arange(n) / n
    interface = InterfaceMesh(
        0.5 * np.column_stack([np.cos(th), np.sin(th)])
    )
    dofs = DofLayout(mesh, "p2p1", xfem=True)
    quad = asm.build_surface_quadrature(mesh, interface)
    vn = interface.vertex_normals()
    pairing = asm.assemble_surface_tension(quad, dofs, vn.segment_normals)
    row = asm.assemble_xfem_row(quad, dofs, pairing, interface)
    oracle = xfem_volume_oracle(mesh, dofs, interface)
    err = float(np.abs(row - oracle).max())
    return CheckResult(
        "xfem_row_vs_cutcell", err <= 1e-10, f"max abs diff {err:.2e}"
    )


def xfem_volume_oracle(mesh, dofs, interface):
    """Volume integrals of div(phi) over the inner phase by exact clipping."""
    cls = classify_elements(mesh, interface)
    row = np.zeros(dofs.n_velocity)
    dldx = asm._bary_gradients(mesh)
    for t in range(len(mesh.triangles)):
        if cls.labels[t] == 1:  # exterior
            continue
        tri = mesh.vertices[mesh.triangles[t]]
        if cls.labels[t] == 0:  # interior: whole triangle
            area = mesh.signed_areas()[t]
            centroid = tri.mean(axis=0)
        else:
            area, centroid = triangle_polygon_clip_centroid(tri, interface)
            if area == 0.0:
                continue
        bary = mesh.barycentric(np.array([t]), centroid[None, :])
        dN = asm.p2_bary_gradients(bary)[0]  # (6, 3)
        grad = dN @ dldx[t]  # (6, 2): gradients are linear, exact at centroid
        for ln in range(6):
            node = dofs.tri_p2[t, ln]
            row[2 * node] += area * grad[ln, 0]
            row[2 * node + 1] += area * grad[ln, 1]
    return row


def triangle_polygon_clip_centroid(tri, interface):
    """(area, centroid) of triangle ∩ polygon for a convex polygon."""
    poly = [np.asarray(p, dtype=float) for p in tri]
    verts = interface.vertices
    nxt = np.roll(verts, -1, axis=0)
    for a, b in zip(verts, nxt):
        e = b - a
        signs = [e[0] * (p[1] - a[1]) - e[1] * (p[0] - a[0]) for p in poly]
        if all(s >= 0 for s in signs):
            continue
        if all(s <= 0 for s in signs):
            return 0.0, np.zeros(2)
        out = []
        m = len(poly)
        for i in range(m):
            p, q = poly[i], poly[(i + 1) % m]
            sp, sq = signs[i], signs[(i + 1) % m]
            if sp >= 0:
                out.append(p)
            if (sp > 0 > sq) or (sp < 0 < sq):
                out.append(p + (sp / (sp - sq)) * (q - p))
        poly = out
        if len(poly) < 3:
            return 0.0, np.zeros(2)
    x = np.array([p[0] for p in poly])
    y = np.array([p[1] for p in poly])
    cross = x * np.roll(y, -1) - np.roll(x, -1) * y
    area = 0.5 * cross.sum()
    if abs(area) < 1e-300:
        return 0.0, np.zeros(2)
    cx = np.sum((x + np.roll(x, -1)) * cross) / (6 * area)
    cy = np.sum((y + np.roll(y, -1)) * cross) / (6 * area)
    return abs(area), np.array([cx, cy])


def check_solver_equivalence():
    """Monolithic and curvature-eliminated solves agree."""
    mesh = build_rectangle_mesh(unit_square_domain(), 2**0.5 / 2)
    n = 24
    th = 2 * np.pi * np.arange(n) / n
    rad = 0.5 + 0.05 * np.cos(2 * th)
    interface = InterfaceMesh(
        rad[:, None] * np.column_stack([np.cos(th), np.sin(th)])
    )
    worst = 0.0
    for xfem in (False, True):
        dofs = DofLayout(mesh, "p2p1", xfem=xfem)
        cls = classify_elements(mesh, interface)
        mu = discrete_viscosity(cls, 1.0, 1.0)
        system = asm.build_coupled_system(
            mesh, interface, dofs, mu, gamma=1.0, tau=1e-2
        )
        system = asm.apply_dirichlet(system, None)
        U1, P1, X1, k1, _ = lsv.solve_coupled(system)
        U2, P2, X2, k2 = lsv.solve_eliminated(system)
        worst = max(
            worst,
            float(np.abs(U1 - U2).max()),
            float(np.abs(P1 - P2).max()),
            float(np.abs(X1 - X2).max()),
            float(np.abs(k1 - k2).max()),
        )
    return CheckResult(
        "monolithic_vs_eliminated", worst <= 1e-10,
        f"max abs solution diff {worst:.2e}",
    )


def check_normal_identities():
    """Lumped normal pairings agree with exact segment integrals."""
    rng = np.random.default_rng(7)
    worst = 0.0
    for n in (17, 40):
        th = np.sort(rng.uniform(0, 2 * np.pi, n))
        th += np.linspace(0, 1e-3, n)  # guard against duplicates
        rad = 0.6 + 0.1 * np.cos(2 * th)
        mesh = InterfaceMesh(
            rad[:, None] * np.column_stack([np.cos(th), np.sin(th)])
        )
        vn = mesh.vertex_normals()
        v = rng.standard_normal((n, 2))
        w = rng.standard_normal(n)
        # identity: lumped pairing with the segment normal equals the
        # pairing with the weighted vertex normal
        lhs = 0.0
        for j in range(n):
            ln = mesh.lengths[j]
            nu = vn.segment_normals[j]
            for k in (j, (j + 1) % n):
                lhs += 0.5 * ln * w[k] * float(v[k] @ nu)
        rhs = mesh.lumped_inner(v, w[:, None] * vn.omega)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-14))
        # lumped vs exact integral of v . nu
        exact = 0.0
        for j in range(n):
            ln = mesh.lengths[j]
            nu = vn.segment_normals[j]
            exact += ln * float(nu @ (v[j] + v[(j + 1) % n])) / 2.0
        lumped = mesh.lumped_inner(v, vn.omega)
        worst = max(worst, abs(lumped - exact) / max(abs(exact), 1e-14))
    return CheckResult(
        "weighted_normal_identities", worst <= 1e-12,
        f"max rel diff {worst:.2e}",
    )


def check_surface_quadrature():
    mesh = build_rectangle_mesh(unit_square_domain(), 2**0.5 / 4)
    n = 64
    th = 2 * np.pi * np.arange(n) / n
    interface = InterfaceMesh(0.5 * np.column_stack([np.cos(th), np.sin(th)]))
    quad = asm.build_surface_quadrature(mesh, interface)
    per_seg = np.bincount(quad.seg, weights=quad.weights, minlength=n)
    err = float(np.abs(per_seg - interface.lengths).max())
    tot = abs(quad.weights.sum() - interface.total_length())
    return CheckResult(
        "surface_quadrature_weights", err <= 1e-14 and tot <= 1e-13,
        f"per-segment {err:.2e}, total {tot:.2e}",
    )


def check_cut_quadrature():
    """Integrating the squared inner-phase indicator recovers the area."""
    n = 128
    th = 2 * np.pi * np.arange(n) / n
    interface = InterfaceMesh(0.5 * np.column_stack([np.cos(th), np.sin(th)]))
    mesh = build_rectangle_mesh(unit_square_domain(), 2**0.5 / 8)
    dofs = DofLayout(mesh, "p2p1", xfem=True)
    cls = classify_elements(mesh, interface)

    class FakeObs:
        pass

    obs = FakeObs()
    obs.mesh = mesh
    obs.dofs = dofs
    obs.classification = cls
    obs.interface_prev = interface
    obs.P = np.zeros(dofs.n_pressure)
    obs.lam = 1.0

    class ZeroSol:
        domain = unit_square_domain()

        def lam(self, t):
            return 0.0

        def radius(self, t):
            return 10.0  # circle far away: no exact-pressure jump in domain

        def inner_area(self, t):
            return 0.0

    err2 = vf.pressure_l2_error(obs, ZeroSol(), 0.0) ** 2
    diff = abs(err2 - interface.enclosed_area())
    return CheckResult(
        "cut_quadrature_indicator", diff <= 1e-6,
        f"|int chi^2 - area| = {diff:.2e} (tol 1e-6)",
    )


ALL_CHECKS = (
    check_polygon_curvature,
    check_curvature_limit,
    check_shoelace,
    check_element_matrix,
    check_xfem_row,
    check_solver_equivalence,
    check_normal_identities,
    check_surface_quadrature,
    check_cut_quadrature,
)


def run_selftest(name_filter=None):
    """Run the oracle suite; returns the list of CheckResult."""
    results = []
    for fn in ALL_CHECKS:
        if name_filter and name_filter not in fn.__name__:
            continue
        results.append(fn())
    return results
