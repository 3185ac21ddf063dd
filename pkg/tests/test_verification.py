import math

import numpy as np
import pytest

from conftest import regular_polygon
from oracles import shapely_clip_area
from stokes2p import time_stepper as ts
from stokes2p import verification as vf
from stokes2p.config import RunConfig
from stokes2p.errors import ContractError, GeometryError


def test_exact_stationary_values():
    sol = vf.ExactSolution.stationary()
    u, p, r, lam = vf.exact_eval(sol, np.array([0.1, 0.1]), 0.7)
    assert lam == 2.0
    assert r == 0.5
    assert np.all(u == 0.0)
    # p = 2 [chi - L2(Omega_-)/4] with the point inside
    assert p == pytest.approx(2.0 * (1 - (np.pi * 0.25) / 4.0))


def test_exact_expanding_values():
    sol = vf.ExactSolution.expanding()
    assert sol.radius(1.0) == pytest.approx(math.sqrt(0.55))
    u, p, r, lam = vf.exact_eval(sol, np.array([0.9, 0.0]), 1.0)
    assert np.allclose(u, [0.15 / 0.9, 0.0])
    assert lam == pytest.approx(1.0 / math.sqrt(0.55))
    with pytest.raises(GeometryError):
        vf.exact_eval(sol, np.array([0.0, 0.0]), 1.0)


def test_exact_jump_decomposition():
    # viscosity contrast adds a separate jump component to the pressure
    sol = vf.ExactSolution.expanding(mu_minus=0.1, mu_plus=1.0)
    curvature_jump = 1.0 / math.sqrt(0.55)
    viscous_jump = 2 * 0.15 * 0.9 / 0.55
    assert curvature_jump == pytest.approx(1.35, abs=0.01)
    assert viscous_jump == pytest.approx(0.49, abs=0.01)
    assert sol.lam(1.0) == pytest.approx(curvature_jump + viscous_jump)


def test_lambda_reduces_to_curvature_when_equal_viscosity():
    sol = vf.ExactSolution.expanding(mu_minus=1.0, mu_plus=1.0)
    for t in (0.0, 0.5, 1.0):
        assert sol.lam(t) == pytest.approx(sol.gamma / sol.radius(t))


def _trajectory(problem="stationary_bubble", **kw):
    cfg = RunConfig(problem=problem, **kw).resolved()
    sol = vf.ExactSolution.for_config(cfg)
    out = []
    ts.run(cfg, g=sol.boundary_velocity(), observers=[out.append])
    return out, sol, cfg


def test_error_interface_basics():
    traj, sol, _ = _trajectory(tau=1e-2, t_end=0.02, xfem=True)
    assert vf.error_interface_Linf(traj, sol) < 1e-10
    # displacing a vertex radially by delta moves the error to delta
    obs = traj[-1]
    verts = obs.interface_new.vertices.copy()
    verts[3] *= 1 + 2e-3 / np.linalg.norm(verts[3])
    obs.interface_new = obs.interface_new.moved(verts)
    assert vf.error_interface_Linf(traj, sol) == pytest.approx(2e-3, rel=1e-6)


def test_error_interface_relabeling_invariance():
    traj, sol, _ = _trajectory(tau=1e-2, t_end=0.01, xfem=True)
    obs = traj[-1]
    base = vf.error_interface_Linf(traj, sol)
    rolled = np.roll(obs.interface_new.vertices, 17, axis=0)
    obs.interface_new = obs.interface_new.moved(rolled)
    assert vf.error_interface_Linf(traj, sol) == pytest.approx(base, abs=1e-14)


def test_error_velocity_basics():
    traj, sol, _ = _trajectory(tau=1e-2, t_end=0.02, xfem=True)
    assert vf.error_velocity_Linf(traj, sol) < 1e-10
    # injecting the exact field gives zero error
    obs = traj[-1]
    u = sol.velocity(obs.dofs.p2_coords, obs.t)
    obs.U = np.empty(obs.dofs.n_velocity)
    obs.U[0::2] = u[:, 0]
    obs.U[1::2] = u[:, 1]
    assert vf.error_velocity_Linf([obs], sol) == 0.0


def test_error_pressure_smooth_exact():
    # with zero surface tension both pressures vanish identically
    traj, sol, cfg = _trajectory(tau=1e-2, t_end=0.02, xfem=False, gamma=0.0)
    err = vf.error_pressure_L2(traj, sol, cfg.tau, mode="full")
    assert err < 1e-10


def test_error_pressure_split_requires_enrichment():
    traj, sol, cfg = _trajectory(tau=1e-2, t_end=0.01, xfem=False)
    with pytest.raises(ContractError):
        vf.error_pressure_L2(traj, sol, cfg.tau, mode="split")
    with pytest.raises(ContractError):
        vf.error_pressure_L2(traj, sol, cfg.tau, mode="bogus")


def test_error_pressure_depth_stability():
    # quadrature dominance: one extra subdivision level changes the
    # pressure error by well under a percent
    traj, sol, cfg = _trajectory(tau=1e-2, t_end=0.01, xfem=False)
    obs = traj[-1]
    e4 = vf.pressure_l2_error(obs, sol, obs.t, depth=4)
    e5 = vf.pressure_l2_error(obs, sol, obs.t, depth=5)
    assert abs(e5 - e4) / e4 < 0.01


def test_cut_quadrature_recovers_indicator_area():
    from stokes2p.selftest import check_cut_quadrature

    res = check_cut_quadrature()
    assert res.ok, res.detail


def test_clip_matches_shapely_on_fine_polygon():
    circle = regular_polygon(128)
    rng = np.random.default_rng(12)
    for _ in range(25):
        c = rng.uniform(-0.6, 0.6, size=2)
        tri = c + 0.15 * rng.standard_normal((3, 2))
        e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
        if abs(e1[0] * e2[1] - e1[1] * e2[0]) < 1e-3:
            continue
        ours = vf.triangle_polygon_clip(tri, circle)
        assert ours == pytest.approx(
            shapely_clip_area(tri, circle.vertices), abs=1e-12
        )


def test_star_contains_matches_eo_test():
    circle = regular_polygon(48, r=0.45)
    rng = np.random.default_rng(9)
    pts = rng.uniform(-1, 1, size=(4000, 2))
    assert np.array_equal(
        vf.star_contains(circle, pts), circle.contains_points(pts)
    )


def test_divergence_free_interpolant_rate():
    # the expanding velocity is divergence free; its P2 interpolant's
    # discrete divergence decays at second order
    from stokes2p import assembly as asm
    from stokes2p.bulk_mesh import (
        DofLayout,
        build_rectangle_mesh,
        holed_square_domain,
    )

    sol = vf.ExactSolution.expanding()
    norms = []
    hs = [1 / 6, 1 / 12, 1 / 24]
    for h in hs:
        mesh = build_rectangle_mesh(holed_square_domain(), h)
        dofs = DofLayout(mesh, "p2p1")
        _, B, _ = asm.assemble_stokes(mesh, dofs, np.ones(len(mesh)))
        u = sol.velocity(dofs.p2_coords, 0.0)
        uvec = np.empty(dofs.n_velocity)
        uvec[0::2] = u[:, 0]
        uvec[1::2] = u[:, 1]
        r = B @ uvec
        w = dofs.pressure_unit_mass(mesh.signed_areas())
        norms.append(math.sqrt(float(np.sum(r**2 / w))))
    rate1 = math.log2(norms[0] / norms[1])
    rate2 = math.log2(norms[1] / norms[2])
    assert rate1 > 1.5 and rate2 > 1.5


def test_single_level_report(tmp_path):
    rep = vf.convergence_study("stationary", [0], element="p2p1", xfem=True,
                               out_path=tmp_path / "table.csv")
    assert len(rep.levels) == 1
    assert rep.fitted_rate("err_X") is None
    assert rep.successive_rates("err_X") == [None]
    text = (tmp_path / "table.csv").read_text().splitlines()
    assert text[0].startswith("level,h_label,tau,err_X")
    assert len(text) == 2


def test_level_config_ladders():
    cfg0 = vf.level_config("stationary", 0)
    assert cfg0.n_gamma == 64 and cfg0.tau == 1e-2
    cfg1 = vf.level_config("expanding_uniform", 1)
    assert cfg1.n_gamma == 151 and cfg1.tau == pytest.approx(1e-3)
    cfg2 = vf.level_config("expanding_adaptive", 2)
    assert cfg2.n_gamma == 302
    assert cfg2.h_c == pytest.approx(8 * cfg2.h_f)
