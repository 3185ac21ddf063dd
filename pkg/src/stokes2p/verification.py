"""Exact radial solutions, error norms and convergence studies.

The two benchmark solutions are a stationary circular bubble (zero
velocity, piecewise constant pressure) and an expanding bubble driven by
a prescribed radial boundary velocity on a domain with a square hole
around the origin. Errors follow the space-time norms of the studies:
max-norm over vertices and time for the interface, max-norm over P2
nodes and time for velocity, and an l2-in-time, L2-in-space norm for the
discontinuous pressure, integrated with subdivision quadrature on cut
elements.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import time_stepper as ts
from .bulk_mesh import Domain, holed_square_domain, unit_square_domain
from .config import RunConfig
from .errors import ConfigError, ContractError, GeometryError
from .interface_mesh import InterfaceMesh

#: Recursive subdivision depth for cut-element quadrature.
CUT_DEPTH = 4


# -- exact solutions ---------------------------------------------------------


@dataclass(frozen=True)
class ExactSolution:
    """Radially symmetric reference solutions on the benchmark domains."""

    kind: str  # "stationary" | "expanding"
    r0: float
    gamma: float
    mu_minus: float
    mu_plus: float
    alpha: float
    domain: Domain

    @classmethod
    def stationary(cls, r0=0.5, gamma=1.0, mu_minus=1.0, mu_plus=1.0):
        return cls("stationary", r0, gamma, mu_minus, mu_plus, 0.0,
                   unit_square_domain())

    @classmethod
    def expanding(cls, r0=0.5, gamma=1.0, mu_minus=1.0, mu_plus=1.0,
                  alpha=0.15):
        return cls("expanding", r0, gamma, mu_minus, mu_plus, alpha,
                   holed_square_domain())

    @classmethod
    def for_config(cls, config: RunConfig):
        if config.problem == "stationary_bubble":
            return cls.stationary(config.radius, config.gamma,
                                  config.mu_minus, config.mu_plus)
        if config.problem == "expanding_bubble":
            return cls.expanding(config.radius, config.gamma,
                                 config.mu_minus, config.mu_plus,
                                 config.alpha)
        raise ConfigError(f"no exact solution for problem '{config.problem}'")

    def radius(self, t: float) -> float:
        if self.kind == "stationary":
            return self.r0
        return math.sqrt(self.r0**2 + 2.0 * self.alpha * t)

    def lam(self, t: float) -> float:
        r = self.radius(t)
        if self.kind == "stationary":
            return self.gamma / r
        return self.gamma / r + 2.0 * self.alpha * (
            self.mu_plus - self.mu_minus
        ) / r**2

    def inner_area(self, t: float) -> float:
        """Area of the inner phase (hole excluded on holed domains)."""
        return math.pi * self.radius(t) ** 2 - self.domain.hole_area

    def velocity(self, pts, t: float) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "stationary":
            return np.zeros_like(pts)
        r2 = np.einsum("pc,pc->p", pts, pts)
        if np.any(r2 == 0.0):
            raise GeometryError("expanding velocity is singular at the origin")
        return self.alpha * pts / r2[:, None]

    def pressure(self, pts, t: float) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        inside = np.einsum("pc,pc->p", pts, pts) < self.radius(t) ** 2
        return self.lam(t) * (
            inside.astype(float) - self.inner_area(t) / self.domain.area
        )

    def pressure_const(self, t: float) -> float:
        """The continuous part of the pressure (a constant for these tests)."""
        return -self.lam(t) * self.inner_area(t) / self.domain.area

    def boundary_velocity(self):
        """Boundary-datum callable, or None for homogeneous conditions."""
        if self.kind == "stationary":
            return None

        alpha = self.alpha

        def g(pts):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            r2 = np.einsum("pc,pc->p", pts, pts)
            return alpha * pts / r2[:, None]

        return g


def exact_eval(sol: ExactSolution, z, t: float):
    """Pointwise exact values ``(u, p, r, lam)`` at one point."""
    z = np.asarray(z, dtype=float)
    u = sol.velocity(z[None, :], t)[0]
    p = sol.pressure(z[None, :], t)[0]
    return u, float(p), sol.radius(t), sol.lam(t)


# -- geometric helpers for cut-element quadrature ----------------------------


def _subdivision_corners(depth: int) -> np.ndarray:
    """Barycentric corners of the 4**depth uniform subtriangles, (S, 3, 3)."""

    def rec(tri, d):
        if d == 0:
            return [tri]
        v0, v1, v2 = tri
        m01, m12, m20 = 0.5 * (v0 + v1), 0.5 * (v1 + v2), 0.5 * (v2 + v0)
        out = []
        for child in (
            (v0, m01, m20),
            (m01, v1, m12),
            (m20, m12, v2),
            (m01, m12, m20),
        ):
            out.extend(rec(np.asarray(child), d - 1))
        return out

    return np.asarray(rec(np.eye(3), depth))


_SUB_CACHE = {}


def subdivision_corners(depth: int) -> np.ndarray:
    if depth not in _SUB_CACHE:
        _SUB_CACHE[depth] = _subdivision_corners(depth)
    return _SUB_CACHE[depth]


def star_contains(interface: InterfaceMesh, pts) -> np.ndarray:
    """Point-in-polygon for star-shaped (about the origin) polygons.

    The benchmark interfaces are near-circles around the origin, so one
    angular bisection plus a single edge-side test decides membership.
    Falls back to the even-odd test when the star property fails.
    """
    v = interface.vertices
    ang = np.arctan2(v[:, 1], v[:, 0])
    rolled = np.argmin(ang)
    ang = np.roll(ang, -rolled)
    if np.any(np.diff(ang) <= 0):
        return interface.contains_points(pts)
    verts = np.roll(v, -rolled, axis=0)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    j = np.searchsorted(ang, theta, side="right") - 1
    j = j % len(verts)
    a = verts[j]
    b = verts[(j + 1) % len(verts)]
    cross = (b[:, 0] - a[:, 0]) * (pts[:, 1] - a[:, 1]) - (
        b[:, 1] - a[:, 1]
    ) * (pts[:, 0] - a[:, 0])
    return cross >= 0.0


def triangle_polygon_clip(tri, interface: InterfaceMesh):
    """Exact area of ``triangle ∩ polygon`` for a convex polygon.

    Successive half-plane clipping against the polygon edges; the convex
    hypothesis makes the intersection of half-planes equal the polygon.
    """
    poly = [np.asarray(p, dtype=float) for p in tri]
    verts = interface.vertices
    nxt = np.roll(verts, -1, axis=0)
    for a, b in zip(verts, nxt):
        e = b - a
        signs = [e[0] * (p[1] - a[1]) - e[1] * (p[0] - a[0]) for p in poly]
        if all(s >= 0 for s in signs):
            continue
        if all(s <= 0 for s in signs):
            return 0.0
        out = []
        n = len(poly)
        for i in range(n):
            p, q = poly[i], poly[(i + 1) % n]
            sp, sq = signs[i], signs[(i + 1) % n]
            if sp >= 0:
                out.append(p)
            if (sp > 0 > sq) or (sp < 0 < sq):
                out.append(p + (sp / (sp - sq)) * (q - p))
        poly = out
        if len(poly) < 3:
            return 0.0
    x = np.array([p[0] for p in poly])
    y = np.array([p[1] for p in poly])
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


# -- error accumulation ------------------------------------------------------


def _pressure_corner_values(obs):
    """Per-element corner values of the standard pressure part, (T, 3)."""
    dofs = obs.dofs
    tris = obs.mesh.triangles
    vals = np.zeros((len(tris), 3))
    if dofs.n_p1:
        vals += obs.P[tris]
    if dofs.n_p0:
        vals += obs.P[dofs.n_p1 + np.arange(len(tris))][:, None]
    return vals


def pressure_l2_error(obs, sol: ExactSolution, t: float, depth=CUT_DEPTH,
                      exact_indicator_area=True) -> float:
    """One-step ``L2(Omega)`` error of the full discontinuous pressure.

    Uncut elements use an exact degree-2 rule. Elements cut by the
    discrete interface or by the exact circle are subdivided ``depth``
    times; the exact-pressure phase is frozen per subtriangle through its
    barycenter, and the square of the enrichment indicator is corrected
    to the exact clipped area so that pure-indicator integrands are
    integrated exactly.
    """
    mesh, dofs = obs.mesh, obs.dofs
    interface = obs.interface_prev
    lam_d = obs.lam if obs.lam is not None else 0.0
    lam_ex = sol.lam(t)
    r_ex = sol.radius(t)
    frac = sol.inner_area(t) / sol.domain.area

    corners = mesh.tri_coords()
    areas = mesh.signed_areas()
    pvals = _pressure_corner_values(obs)
    labels = obs.classification.labels

    # a triangle sees the circle jump iff its closest point to the origin
    # is inside the circle radius while some vertex is outside
    radii = np.linalg.norm(corners, axis=2)
    rmax = radii.max(axis=1)
    dmin = np.full(len(corners), np.inf)
    for i in range(3):
        a = corners[:, i]
        b = corners[:, (i + 1) % 3]
        e = b - a
        tpar = np.clip(
            -np.einsum("tc,tc->t", a, e) / np.einsum("tc,tc->t", e, e), 0, 1
        )
        close = a + tpar[:, None] * e
        dmin = np.minimum(dmin, np.linalg.norm(close, axis=1))
    circle_cut = (dmin <= r_ex) & (rmax >= r_ex)
    cut = obs.classification.interfacial | circle_cut
    total = 0.0

    # uncut elements: all jumps constant per element, integrand quadratic
    un = ~cut
    if np.any(un):
        chi_poly = (labels[un] == 0).astype(float)  # interior of the polygon
        inside_circle = (
            np.linalg.norm(corners[un].mean(axis=1), axis=1) < r_ex
        ).astype(float)
        p_ex = lam_ex * (inside_circle - frac)
        # degree-2 edge-midpoint rule
        cv = pvals[un]
        mids = 0.5 * (cv + np.roll(cv, -1, axis=1))
        diff = mids + (lam_d * chi_poly - p_ex)[:, None]
        total += float(np.einsum("t,tq->", areas[un] / 3.0, diff**2))

    if np.any(cut):
        sub = subdivision_corners(depth)  # (S, 3, 3)
        ecorners = corners[cut]  # (E, 3, 2)
        sub_phys = np.einsum("sab,ebc->esac", sub, ecorners)  # (E,S,3,2)
        sub_area = areas[cut][:, None] / 4.0**depth
        centers = sub_phys.mean(axis=2)  # (E, S, 2)
        in_circle = (
            np.einsum("esc,esc->es", centers, centers) < r_ex**2
        ).astype(float)
        p_sub = lam_ex * (in_circle - frac)  # (E, S)
        qpts = 0.5 * (sub_phys + np.roll(sub_phys, -1, axis=2))  # (E,S,3,2)
        flat = qpts.reshape(-1, 2)
        chi_pts = star_contains(interface, flat).astype(float).reshape(
            qpts.shape[:3]
        )
        # linear interpolation of the standard pressure at the points
        v0 = ecorners[:, 0]
        M = np.stack([ecorners[:, 1] - v0, ecorners[:, 2] - v0], axis=2)
        Minv = np.linalg.inv(M)
        loc = np.einsum(
            "ecd,esqd->esqc", Minv, qpts - v0[:, None, None, :]
        )
        pv = pvals[cut]
        p_std = (
            pv[:, 0][:, None, None]
            + loc[..., 0] * (pv[:, 1] - pv[:, 0])[:, None, None]
            + loc[..., 1] * (pv[:, 2] - pv[:, 0])[:, None, None]
        )
        diff = p_std + lam_d * chi_pts - p_sub[:, :, None]
        total += float(
            np.einsum("es,esq->", sub_area / 3.0, diff**2)
        )
        if lam_d != 0.0 and exact_indicator_area:
            quad_area = float(
                np.einsum("es,esq->", sub_area / 3.0, chi_pts)
            )
            if interface.is_convex():
                exact_area = sum(
                    triangle_polygon_clip(tc, interface) for tc in ecorners
                )
                total += lam_d**2 * (exact_area - quad_area)
    return math.sqrt(max(total, 0.0))


def pressure_split_l2_error(obs, sol: ExactSolution, t: float) -> float:
    """One-step ``L2`` error of the continuous pressure part (enriched runs)."""
    if obs.lam is None:
        raise ContractError("split pressure error requires the enriched space")
    mesh = obs.mesh
    areas = mesh.signed_areas()
    pvals = _pressure_corner_values(obs)
    mids = 0.5 * (pvals + np.roll(pvals, -1, axis=1))
    diff = mids - sol.pressure_const(t)
    return math.sqrt(float(np.einsum("t,tq->", areas / 3.0, diff**2)))


class ErrorObserver:
    """Accumulates the study error norms over a run."""

    def __init__(self, sol: ExactSolution, tau: float, split=False):
        self.sol = sol
        self.tau = tau
        self.split = split
        self.err_X = 0.0
        self.err_U = 0.0
        self.sum_P2 = 0.0
        self.sum_Pc2 = 0.0
        self.err_lam = 0.0

    def __call__(self, obs):
        t = obs.t
        r = self.sol.radius(t)
        radii = np.linalg.norm(obs.interface_new.vertices, axis=1)
        self.err_X = max(self.err_X, float(np.abs(radii - r).max()))

        u_ex = self.sol.velocity(obs.dofs.p2_coords, t)
        du = np.column_stack([obs.U[0::2], obs.U[1::2]]) - u_ex
        self.err_U = max(self.err_U, float(np.hypot(du[:, 0], du[:, 1]).max()))

        self.sum_P2 += self.tau * pressure_l2_error(obs, self.sol, t) ** 2
        if self.split and obs.lam is not None:
            self.sum_Pc2 += (
                self.tau * pressure_split_l2_error(obs, self.sol, t) ** 2
            )
            self.err_lam = max(
                self.err_lam, abs(obs.lam - self.sol.lam(t))
            )

    @property
    def err_P(self):
        return math.sqrt(self.sum_P2)

    @property
    def err_Pc(self):
        return math.sqrt(self.sum_Pc2)


def error_interface_Linf(trajectory, sol: ExactSolution) -> float:
    """Max over steps and vertices of the distance to the exact circle."""
    err = 0.0
    for obs in trajectory:
        radii = np.linalg.norm(obs.interface_new.vertices, axis=1)
        err = max(err, float(np.abs(radii - sol.radius(obs.t)).max()))
    return err


def error_velocity_Linf(trajectory, sol: ExactSolution) -> float:
    """Max over steps and P2 nodes of the velocity error magnitude."""
    err = 0.0
    for obs in trajectory:
        u_ex = sol.velocity(obs.dofs.p2_coords, obs.t)
        du = np.column_stack([obs.U[0::2], obs.U[1::2]]) - u_ex
        err = max(err, float(np.hypot(du[:, 0], du[:, 1]).max()))
    return err


def error_pressure_L2(trajectory, sol: ExactSolution, tau: float,
                      mode="full"):
    """Space-time pressure error, full or split into parts.

    ``full`` returns the discontinuous-pressure error. ``split`` (enriched
    runs only) returns ``(err_Pc, err_lambda)``.
    """
    if mode == "full":
        s = 0.0
        for obs in trajectory:
            s += tau * pressure_l2_error(obs, sol, obs.t) ** 2
        return math.sqrt(s)
    if mode == "split":
        s = 0.0
        lam_err = 0.0
        for obs in trajectory:
            if obs.lam is None:
                raise ContractError(
                    "split pressure error requires the enriched space"
                )
            s += tau * pressure_split_l2_error(obs, sol, obs.t) ** 2
            lam_err = max(lam_err, abs(obs.lam - sol.lam(obs.t)))
        return math.sqrt(s), lam_err
    raise ContractError(f"unknown pressure error mode '{mode}'")


# -- convergence studies -----------------------------------------------------


@dataclass
class LevelResult:
    level: int
    h_label: float
    tau: float
    err_X: float
    err_U: float
    err_P: float
    err_Pc: float | None = None
    err_lam: float | None = None


@dataclass
class ErrorReport:
    """Per-level errors with successive and least-squares fitted rates."""

    levels: list = field(default_factory=list)

    def successive_rates(self, attr):
        vals = [getattr(l, attr) for l in self.levels]
        out = [None]
        for a, b in zip(vals[:-1], vals[1:]):
            out.append(
                math.log2(a / b) if (a and b and a > 0 and b > 0) else None
            )
        return out

    def fitted_rate(self, attr):
        """Least-squares slope of log(err) against log(h)."""
        vals = [getattr(l, attr) for l in self.levels]
        labels = [l.h_label for l in self.levels]  # resolution ~ 1/h
        pts = [
            (math.log(1.0 / lb), math.log(v))
            for lb, v in zip(labels, vals)
            if v and v > 0
        ]
        if len(pts) < 2:
            return None
        x = np.array([p[0] for p in pts])
        y = np.array([p[1] for p in pts])
        return float(np.polyfit(x, y, 1)[0])

    def write_csv(self, path):
        split = self.levels and self.levels[0].err_Pc is not None
        cols = ["level", "h_label", "tau", "err_X", "err_U", "err_P"]
        if split:
            cols += ["err_Pc", "err_lambda"]
        cols += ["rate_X", "rate_U", "rate_P"]
        rates = {a: self.successive_rates("err_" + a) for a in "XUP"}
        tmp = str(path) + ".tmp"
        with open(tmp, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i, lv in enumerate(self.levels):
                row = [
                    str(lv.level),
                    f"{lv.h_label:.6g}",
                    f"{lv.tau:.6e}",
                    f"{lv.err_X:.6e}",
                    f"{lv.err_U:.6e}",
                    f"{lv.err_P:.6e}",
                ]
                if split:
                    row += [f"{lv.err_Pc:.6e}", f"{lv.err_lam:.6e}"]
                for a in "XUP":
                    r = rates[a][i]
                    row.append("" if r is None else f"{r:.6e}")
                fh.write(",".join(row) + "\n")
        os.replace(tmp, path)


STUDIES = ("stationary", "expanding_uniform", "expanding_adaptive")


def level_config(study: str, level: int, element="p2p1", xfem=True,
                 scheme="main") -> RunConfig:
    """Run configuration of one refinement level of a named study.

    The level ladders mirror the reported experiments: the stationary
    study halves a uniform mesh with interface resolution an eighth of
    the bulk size; the expanding studies additionally shrink the time
    step tenfold per level, with either a uniform bulk mesh or adaptive
    refinement eight times finer at the interface.
    """
    if study == "stationary":
        h = 2**0.5 / (4 * 2**level)
        return RunConfig(
            problem="stationary_bubble", element=element, xfem=xfem,
            scheme=scheme, n_gamma=64 * 2**level, radius=0.5,
            h_f=h, h_c=h, tau=1e-2, t_end=1.0,
        )
    if study == "expanding_uniform":
        h = 1.0 / (3 * 2**level)
        n = int(round(8 * math.pi / h))  # 2*pi*R / (h/8) with R = 1/2
        return RunConfig(
            problem="expanding_bubble", element=element, xfem=xfem,
            scheme=scheme, domain="square_with_hole",
            n_gamma=n, radius=0.5, h_f=h, h_c=h,
            tau=10.0 ** (-2 - level), t_end=1.0,
        )
    if study == "expanding_adaptive":
        h_f = 1.0 / (24 * 2**level)
        n = int(round(math.pi / h_f))  # 2*pi*R / h_f with R = 1/2
        return RunConfig(
            problem="expanding_bubble", element=element, xfem=xfem,
            scheme=scheme, domain="square_with_hole",
            mu_minus=0.1, mu_plus=1.0,
            n_gamma=n, radius=0.5, h_f=h_f, h_c=8 * h_f,
            tau=10.0 ** (-2 - level), t_end=1.0,
        )
    raise ConfigError(f"unknown study '{study}'")


def _study_h_label(study, level):
    """Mesh resolution label: sqrt(2)/h, 1/h or 1/h_f per study."""
    if study == "stationary":
        return float(4 * 2**level)
    if study == "expanding_uniform":
        return float(3 * 2**level)
    return float(24 * 2**level)


def run_level(study: str, level: int, element="p2p1", xfem=True,
              scheme="main", mu=None) -> LevelResult:
    cfg = level_config(study, level, element, xfem, scheme)
    if mu is not None:
        from dataclasses import replace

        cfg = replace(cfg, mu_minus=mu[0], mu_plus=mu[1])
    cfg = cfg.resolved()
    sol = ExactSolution.for_config(cfg)
    observer = ErrorObserver(sol, cfg.tau, split=xfem)
    ts.run(cfg, g=sol.boundary_velocity(), observers=[observer])
    return LevelResult(
        level=level,
        h_label=_study_h_label(study, level),
        tau=cfg.tau,
        err_X=observer.err_X,
        err_U=observer.err_U,
        err_P=observer.err_P,
        err_Pc=observer.err_Pc if xfem else None,
        err_lam=observer.err_lam if xfem else None,
    )


def convergence_study(study: str, levels, element="p2p1", xfem=True,
                      scheme="main", mu=None, out_path=None) -> ErrorReport:
    """Run the listed levels of a study and collect the error table."""
    if study not in STUDIES:
        raise ConfigError(f"study must be one of {STUDIES}")
    report = ErrorReport()
    for level in levels:
        report.levels.append(
            run_level(study, level, element, xfem, scheme, mu)
        )
    if out_path:
        report.write_csv(out_path)
    return report
