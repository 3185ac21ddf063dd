import numpy as np
import pytest

from conftest import regular_polygon, wavy_polygon
from oracles import loop_vertex_normals, lumped_curvature_system, shoelace_area
from stokes2p.errors import AssumptionViolation, ContractError, GeometryError
from stokes2p.interface_mesh import InterfaceMesh


def test_segment_normals_axis_aligned():
    sq = InterfaceMesh(np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]]))
    nu = sq.segment_normals()
    assert np.allclose(nu[0], [0, -1])
    assert np.allclose(nu[1], [1, 0])


def test_segment_normal_diagonal():
    tri = InterfaceMesh(np.array([[1.0, 0], [0, 1], [-1, -1]]))
    nu = tri.segment_normals()
    # first segment (1,0) -> (0,1) has outward normal along (1,1)
    assert np.allclose(nu[0], np.array([1.0, 1.0]) / np.sqrt(2))


def test_segment_normals_point_outward():
    mesh = regular_polygon(17, r=0.8)
    nu = mesh.segment_normals()
    mids = 0.5 * (mesh.vertices + np.roll(mesh.vertices, -1, axis=0))
    assert np.all(np.einsum("jc,jc->j", nu, mids) > 0)


def test_orientation_canonicalized():
    cw = InterfaceMesh(np.array([[0.0, 0], [0, 1], [1, 1], [1, 0]]))
    assert cw.enclosed_area() == pytest.approx(1.0)
    # scrambled segment list is rebuilt into a chain
    pts = np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]])
    segs = np.array([[2, 3], [1, 2], [0, 1], [3, 0]])
    mesh = InterfaceMesh(pts, segs)
    assert mesh.enclosed_area() == pytest.approx(1.0)
    assert np.all(mesh.segments[:, 1] == np.roll(mesh.segments[:, 0], -1))


def test_vertex_normals_square_corner():
    # diamond with corners on the axes; at (1, 0) both segments have
    # length sqrt(2), so the weighted normal is (cos(pi/4), 0)
    mesh = InterfaceMesh(np.array([[1.0, 0], [0, 1], [-1, 0], [0, -1]]))
    vn = mesh.vertex_normals()
    k = int(np.argmax(mesh.vertices[:, 0]))
    assert np.allclose(vn.omega[k], [np.cos(np.pi / 4), 0.0], atol=1e-14)


@pytest.mark.parametrize("n", [4, 8, 16])
def test_vertex_normals_ngon_against_loop_oracle(n):
    mesh = regular_polygon(n, r=1.0)
    vn = mesh.vertex_normals()
    omega_o, star_o, seg_o, _ = loop_vertex_normals(mesh.vertices)
    assert np.allclose(vn.omega, omega_o, atol=1e-14)
    assert np.allclose(vn.star_measure, star_o, atol=1e-14)
    assert np.allclose(vn.segment_normals, seg_o, atol=1e-14)
    radial = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1)[:, None]
    assert np.allclose(vn.omega, np.cos(np.pi / n) * radial, atol=1e-13)


def test_vertex_normal_collinear_segments():
    pts = np.array([[0.0, 0], [1, 0], [2, 0], [2, 1], [0, 1]])
    mesh = InterfaceMesh(pts)
    vn = mesh.vertex_normals()
    k = int(np.argmin(np.abs(mesh.vertices[:, 0] - 1.0)
                      + np.abs(mesh.vertices[:, 1])))
    assert np.allclose(vn.omega[k], [0, -1], atol=1e-14)


def test_vertex_normals_span_violation():
    # a needle-like polygon has weighted normals spanning only one line
    eps = 1e-15
    pts = np.array([[0.0, 0.0], [1.0, -eps], [2.0, 0.0], [1.0, eps]])
    mesh = InterfaceMesh(pts)
    with pytest.raises(AssumptionViolation):
        mesh.vertex_normals()
    field = mesh.vertex_normals(require_span=False)
    assert not field.span_ok


def test_lumped_inner_basics():
    mesh = regular_polygon(12, r=0.5)
    ones = np.ones(12)
    assert mesh.lumped_inner(ones, ones) == pytest.approx(
        mesh.total_length(), rel=1e-14
    )
    assert mesh.lumped_inner(ones, np.zeros(12)) == 0.0
    assert mesh.total_length() == pytest.approx(
        12 * 2 * 0.5 * np.sin(np.pi / 12), rel=1e-14
    )


def test_lumped_inner_shape_mismatch():
    mesh = regular_polygon(8)
    with pytest.raises(ContractError):
        mesh.lumped_inner(np.ones(8), np.ones(7))


def test_enclosed_area_examples():
    sq = InterfaceMesh(np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]]))
    assert sq.enclosed_area() == pytest.approx(1.0, abs=1e-15)
    for n, r in ((16, 0.8), (64, 0.5)):
        mesh = regular_polygon(n, r)
        assert mesh.enclosed_area() == pytest.approx(
            0.5 * n * r**2 * np.sin(2 * np.pi / n), rel=1e-14
        )
    mesh = regular_polygon(64, 0.5)
    assert abs(mesh.enclosed_area() - shoelace_area(mesh.vertices)) < 1e-14


def test_enclosed_area_shoelace_property():
    for seed in range(4):
        mesh = wavy_polygon(seed=seed)
        oracle = shoelace_area(mesh.vertices)
        assert abs(mesh.enclosed_area() - oracle) / oracle < 1e-13


def test_equidistribution_ratio():
    assert regular_polygon(10).equidistribution_ratio() == pytest.approx(1.0)
    rect = InterfaceMesh(np.array([[0.0, 0], [2, 0], [2, 1], [0, 1]]))
    assert rect.equidistribution_ratio() == pytest.approx(2.0)


@pytest.mark.parametrize("n", [8, 32, 128])
def test_discrete_curvature_ngon(n):
    r = 0.5
    mesh = regular_polygon(n, r)
    kappa = mesh.discrete_curvature()
    oracle = lumped_curvature_system(mesh.vertices)
    closed = -1.0 / (r * np.cos(np.pi / n))
    assert np.allclose(kappa, oracle, atol=1e-10)
    assert np.allclose(kappa, closed, rtol=1e-12)
    # constant across vertices
    assert kappa.max() - kappa.min() < 1e-12 * abs(closed)


def test_discrete_curvature_limit():
    mesh = regular_polygon(512, 0.5)
    assert np.abs(mesh.discrete_curvature() + 2.0).max() < 1e-4


def test_discrete_curvature_translation_invariance():
    base = wavy_polygon(seed=1)
    shifted = InterfaceMesh(base.vertices + np.array([0.31, -4.2]))
    assert np.allclose(
        base.discrete_curvature(), shifted.discrete_curvature(), atol=1e-11
    )


def test_rigid_rotation_equivariance():
    base = wavy_polygon(seed=2)
    th = 0.7
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    rot = InterfaceMesh(base.vertices @ R.T)
    assert rot.enclosed_area() == pytest.approx(base.enclosed_area(), rel=1e-12)
    assert np.allclose(rot.lengths, base.lengths, rtol=1e-12)
    assert np.allclose(
        rot.discrete_curvature(), base.discrete_curvature(), atol=1e-11
    )
    vb = base.vertex_normals()
    vr = rot.vertex_normals()
    assert np.allclose(vr.omega, vb.omega @ R.T, atol=1e-12)
    assert np.allclose(vr.segment_normals, vb.segment_normals @ R.T, atol=1e-12)


def test_normal_identities_random_meshes():
    rng = np.random.default_rng(11)
    for seed in range(3):
        mesh = wavy_polygon(n=30, seed=seed)
        vn = mesh.vertex_normals()
        v = rng.standard_normal((30, 2))
        w = rng.standard_normal(30)
        # lumped pairing with segment normals equals pairing with omega
        lhs = 0.0
        for j in range(30):
            nu = vn.segment_normals[j]
            for k in (j, (j + 1) % 30):
                lhs += 0.5 * mesh.lengths[j] * w[k] * float(v[k] @ nu)
        rhs = mesh.lumped_inner(v, w[:, None] * vn.omega)
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))
        # lumped equals exact integration of v . nu
        exact = sum(
            mesh.lengths[j]
            * float(vn.segment_normals[j] @ (v[j] + v[(j + 1) % 30]))
            / 2.0
            for j in range(30)
        )
        assert abs(mesh.lumped_inner(v, vn.omega) - exact) < 1e-12 * max(
            1.0, abs(exact)
        )


def test_rejects_bad_geometry():
    with pytest.raises(GeometryError):
        InterfaceMesh(np.array([[0.0, 0], [1, 1], [1, 0], [0, 1]]))  # bowtie
    with pytest.raises(GeometryError):
        InterfaceMesh(np.array([[0.0, 0], [1, 0], [1, 0], [0, 1]]))  # zero edge
    with pytest.raises(GeometryError):
        pts = np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]])
        segs = np.array([[0, 1], [1, 0], [2, 3], [3, 2]])  # two loops
        InterfaceMesh(pts, segs)


def test_dump_roundtrip_bitexact(tmp_path):
    mesh = wavy_polygon(seed=3)
    path = tmp_path / "interface.txt"
    mesh.dump(path)
    back = InterfaceMesh.load(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.segments, mesh.segments)
    path2 = tmp_path / "again.txt"
    back.dump(path2)
    assert path.read_text() == path2.read_text()


def test_contains_points():
    mesh = regular_polygon(64, 0.5)
    pts = np.array([[0.0, 0.0], [0.49, 0.0], [0.51, 0.0], [0.9, 0.9]])
    assert list(mesh.contains_points(pts)) == [True, True, False, False]
