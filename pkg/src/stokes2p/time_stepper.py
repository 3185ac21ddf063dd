"""Time integration of the coupled interface/flow evolution.

Each step assembles and solves the implicit coupled system on the
current geometry, then moves the interface vertices to the computed
positions. Bulk classification is checked every step; the adapted mesh,
degree-of-freedom maps and bulk matrices are rebuilt only when the set
of cut elements changes, and the sparse factorization is reused through
defect correction while the system drifts slowly.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import assembly as asm
from .bulk_mesh import (
    DofLayout,
    adapt_to_interface,
    build_rectangle_mesh,
    classify_elements,
    discrete_viscosity,
    holed_square_domain,
    unit_square_domain,
)
from .errors import ConfigError, Stokes2pError
from .interface_mesh import InterfaceMesh
from .linear_solver import LUCache, solve_coupled

#: Diagnostics CSV schema, one row per step.
DIAG_COLUMNS = (
    "m",
    "t",
    "length",
    "dissipation",
    "work",
    "area",
    "umax",
    "kmin",
    "kmax",
    "equi_ratio",
    "vol_proj_res",
)

#: Relative slack allowed in the per-step energy certificate.
STABILITY_SLACK = 1e-10


class StabilityError(Stokes2pError):
    """The discrete energy certificate failed for a closed system."""


@dataclass
class StepDiagnostics:
    m: int
    t: float
    length: float
    dissipation: float
    work: float
    area: float
    umax: float
    kmin: float
    kmax: float
    equi_ratio: float
    vol_proj_res: float
    lam: float | None = None

    def csv_row(self) -> str:
        vals = [f"{self.m}"]
        for name in DIAG_COLUMNS[1:]:
            vals.append(f"{getattr(self, name):.12e}")
        return ",".join(vals)


@dataclass
class RunState:
    interface: InterfaceMesh
    bulk: "object"
    m: int
    t: float


@dataclass
class ObserverData:
    """Everything an error/diagnostic observer needs after one step."""

    m: int
    t: float
    interface_prev: InterfaceMesh
    interface_new: InterfaceMesh
    mesh: object
    classification: object
    dofs: DofLayout
    U: np.ndarray
    P: np.ndarray
    kappa: np.ndarray
    lam: float | None
    diagnostics: StepDiagnostics


def make_initial_interface(kind: str, n: int, radius: float) -> InterfaceMesh:
    """Initial polygonal circle approximations.

    ``uniform_circle`` places n vertices uniformly on the circle.
    ``fig4_nonuniform`` resolves only the lower semicircle with n-1
    uniformly spaced vertices and represents the whole upper half by the
    single vertex (0, radius), giving a strongly nonuniform polygon.
    """
    if n < 8:
        raise ConfigError("interface needs at least 8 vertices")
    if radius <= 0:
        raise ConfigError("radius must be positive")
    if kind == "uniform_circle":
        th = 2.0 * np.pi * np.arange(n) / n
        pts = radius * np.column_stack([np.cos(th), np.sin(th)])
    elif kind == "fig4_nonuniform":
        th = np.pi + np.pi * np.arange(n - 1) / (n - 2)
        lower = radius * np.column_stack([np.cos(th), np.sin(th)])
        pts = np.vstack([lower, [0.0, radius]])
    else:
        raise ConfigError(f"unknown initial interface '{kind}'")
    return InterfaceMesh(pts)


def domain_for(name: str):
    if name == "square":
        return unit_square_domain()
    if name == "square_with_hole":
        return holed_square_domain()
    raise ConfigError(f"unknown domain '{name}'")


class _Epoch:
    """Per-mesh cache of dof maps, bulk matrices and the factorization."""

    def __init__(self, mesh, cls, dofs, mu_elem, bulk_blocks, g_nodal, full_size):
        self.mesh = mesh
        self.cls = cls
        self.dofs = dofs
        self.mu_elem = mu_elem
        self.bulk_blocks = bulk_blocks
        self.g_nodal = g_nodal
        self.full_size = full_size
        self.lu = LUCache()


class Stepper:
    """Drives the evolution for one run configuration.

    ``g`` is an optional boundary velocity, called as ``g(points) ->
    (n, 2)``; ``f`` an optional body force ``f(points, t) -> (n, 2)``.
    The energy certificate is asserted per step whenever both are absent.

    Classification runs every step. When only element labels flip, the
    viscous block is delta-updated in place; when new cut elements exceed
    the fine target, the mesh is refined incrementally; once incremental
    growth passes ``GROWTH_LIMIT`` the mesh is rebuilt from the coarse
    base, which coarsens the refined wake left behind by the interface.
    """

    GROWTH_LIMIT = 1.35

    def __init__(self, config, g=None, f=None):
        self.cfg = config
        self.g = g
        self.f = f
        self.domain = domain_for(config.domain)
        self.base = build_rectangle_mesh(self.domain, config.h_c)
        self.epoch = None
        self.matrix_jumped = False
        self.check_stability = g is None and f is None

    def _ensure_epoch(self, interface):
        cfg = self.cfg
        self.matrix_jumped = False
        if self.epoch is None:
            mesh = adapt_to_interface(self.base, interface, cfg.h_f, cfg.h_c)
            return self._build_epoch(mesh, interface, full=True)

        mesh = self.epoch.mesh
        cls = classify_elements(mesh, interface)
        if cls.key() == self.epoch.cls.key():
            return self.epoch

        fine_ok = not np.any(
            mesh.diameters()[cls.interfacial] > cfg.h_f * (1 + 1e-12)
        )
        if fine_ok:
            self.matrix_jumped = self._update_viscosity(cls)
            return self.epoch

        if len(mesh) > self.GROWTH_LIMIT * self.epoch.full_size:
            mesh = adapt_to_interface(self.base, interface, cfg.h_f, cfg.h_c)
            return self._build_epoch(mesh, interface, full=True)
        mesh = adapt_to_interface(mesh, interface, cfg.h_f, cfg.h_c)
        return self._build_epoch(mesh, interface, full=False)

    def _build_epoch(self, mesh, interface, full):
        cfg = self.cfg
        cls = classify_elements(mesh, interface)
        dofs = DofLayout(mesh, cfg.element, xfem=cfg.xfem)
        mu_elem = discrete_viscosity(cls, cfg.mu_minus, cfg.mu_plus)
        blocks = asm.assemble_stokes(mesh, dofs, mu_elem, None)
        g_nodal = None
        if self.g is not None:
            g_nodal = np.zeros((dofs.n_scalar_p2, 2))
            bn = np.nonzero(dofs.boundary_p2)[0]
            g_nodal[bn] = self.g(dofs.p2_coords[bn])
        full_size = len(mesh) if full else self.epoch.full_size
        self.epoch = _Epoch(mesh, cls, dofs, mu_elem, blocks, g_nodal, full_size)
        return self.epoch

    def _update_viscosity(self, cls):
        """Delta-update the viscous block after element labels flipped.

        Returns True when matrix entries actually changed, which tells the
        solver not to bother with defect correction on the stale
        factorization.
        """
        cfg = self.cfg
        ep = self.epoch
        mu_new = discrete_viscosity(cls, cfg.mu_minus, cfg.mu_plus)
        changed = np.nonzero(mu_new != ep.mu_elem)[0]
        if changed.size:
            dmu = mu_new - ep.mu_elem
            dA = asm.viscous_block(ep.mesh, ep.dofs, dmu, subset=changed)
            A, B, rhs0 = ep.bulk_blocks
            ep.bulk_blocks = (A + dA, B, rhs0)
        ep.mu_elem = mu_new
        ep.cls = cls
        return bool(changed.size)

    def step(self, state: RunState):
        """Advance one time step; returns (new state, diagnostics, observer data)."""
        cfg = self.cfg
        interface = state.interface
        t_next = state.t + cfg.tau
        epoch = self._ensure_epoch(interface)

        A, B_std, rhs0 = epoch.bulk_blocks
        rhs_f = rhs0
        if self.f is not None:
            f_nodal = self.f(epoch.dofs.p2_coords, t_next)
            rhs_f = asm.assemble_load(epoch.mesh, epoch.dofs, f_nodal)

        quad = asm.build_surface_quadrature(epoch.mesh, interface)
        system = asm.build_coupled_system(
            epoch.mesh,
            interface,
            epoch.dofs,
            epoch.mu_elem,
            cfg.gamma,
            cfg.tau,
            scheme=cfg.scheme,
            quad=quad,
            bulk_blocks=(A, B_std, rhs_f),
        )
        system = asm.apply_dirichlet(system, epoch.g_nodal)
        U, P, X, kappa, report = solve_coupled(
            system, tol=cfg.solver_tol, cache=epoch.lu,
            allow_reuse=not self.matrix_jumped,
        )

        new_iface = InterfaceMesh(X.reshape(-1, 2))
        diag = self._diagnostics(
            state, t_next, interface, new_iface, system, U, P, kappa
        )
        if self.check_stability:
            lhs = cfg.gamma * diag.length + diag.dissipation
            rhs = cfg.gamma * interface.total_length() + diag.work
            slack = STABILITY_SLACK * max(1.0, abs(rhs))
            if lhs > rhs + slack:
                raise StabilityError(
                    f"energy certificate violated at step {diag.m}: "
                    f"{lhs:.15e} > {rhs:.15e}"
                )

        obs = ObserverData(
            m=diag.m,
            t=t_next,
            interface_prev=interface,
            interface_new=new_iface,
            mesh=epoch.mesh,
            classification=epoch.cls,
            dofs=epoch.dofs,
            U=U,
            P=P,
            kappa=kappa,
            lam=diag.lam,
            diagnostics=diag,
        )
        new_state = RunState(new_iface, epoch.mesh, state.m + 1, t_next)
        return new_state, diag, obs

    def _diagnostics(self, state, t_next, old, new, system, U, P, kappa):
        cfg = self.cfg
        dissipation = cfg.tau * float(U @ (system.A @ U))
        work = cfg.tau * float(system.rhs_f @ U)
        umag = np.hypot(U[0::2], U[1::2])
        if cfg.scheme == "dziuk":
            om = system.normals.omega
            norm = np.linalg.norm(om, axis=1)
            kap = np.einsum(
                "kc,kc->k", kappa.reshape(-1, 2), om / norm[:, None]
            )
        else:
            kap = kappa
        dX = new.vertices - old.vertices
        ln = old.scaled_normals()
        mid = 0.5 * (dX + np.roll(dX, -1, axis=0))
        vol_res = float(np.einsum("jc,jc->", ln, mid))
        lam = (
            float(P[system.dofs.xfem_index]) if system.dofs.xfem else None
        )
        return StepDiagnostics(
            m=state.m + 1,
            t=t_next,
            length=new.total_length(),
            dissipation=dissipation,
            work=work,
            area=new.enclosed_area(),
            umax=float(umag.max()),
            kmin=float(kap.min()),
            kmax=float(kap.max()),
            equi_ratio=new.equidistribution_ratio(),
            vol_proj_res=vol_res,
            lam=lam,
        )


def initial_diagnostics(interface: InterfaceMesh) -> StepDiagnostics:
    kappa = interface.discrete_curvature()
    return StepDiagnostics(
        m=0,
        t=0.0,
        length=interface.total_length(),
        dissipation=0.0,
        work=0.0,
        area=interface.enclosed_area(),
        umax=0.0,
        kmin=float(kappa.min()),
        kmax=float(kappa.max()),
        equi_ratio=interface.equidistribution_ratio(),
        vol_proj_res=0.0,
    )


def run(config, g=None, f=None, observers=(), diag_path=None):
    """Run the configured evolution; returns (diagnostics list, final state).

    Optional observers are called with :class:`ObserverData` after every
    accepted step. When ``diag_path`` is given the diagnostics CSV is
    streamed there (written atomically through a temporary file).
    """
    interface = make_initial_interface(
        config.initial_curve, config.n_gamma, config.radius
    )
    stepper = Stepper(config, g=g, f=f)
    nsteps = int(round(config.t_end / config.tau)) if config.t_end > 0 else 0

    state = RunState(interface, None, 0, 0.0)
    diags = [initial_diagnostics(interface)]

    tmp_path = None
    fh = None
    if diag_path is not None:
        tmp_path = str(diag_path) + ".tmp"
        fh = open(tmp_path, "w")
        fh.write(",".join(DIAG_COLUMNS) + "\n")
        fh.write(diags[0].csv_row() + "\n")

    try:
        for _ in range(nsteps):
            state, diag, obs = stepper.step(state)
            diags.append(diag)
            if fh is not None:
                fh.write(diag.csv_row() + "\n")
            for ob in observers:
                ob(obs)
            if config.dump_every and state.m % config.dump_every == 0:
                _dump_state(config, stepper, state)
    finally:
        if fh is not None:
            fh.close()
            if tmp_path is not None:
                os.replace(tmp_path, diag_path)
    return diags, state


def _dump_state(config, stepper, state):
    out = config.out_dir
    if not out:
        return
    os.makedirs(out, exist_ok=True)
    ipath = os.path.join(out, f"interface_{state.m:06d}.txt")
    state.interface.dump(ipath)
    if stepper.epoch is not None:
        bpath = os.path.join(out, f"bulk_{state.m:06d}.txt")
        stepper.epoch.mesh.dump(bpath, labels=stepper.epoch.cls.labels)


def read_diagnostics(path):
    """Parse a diagnostics CSV back into a list of StepDiagnostics."""
    out = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != DIAG_COLUMNS:
            raise ConfigError(f"unexpected diagnostics columns {header}")
        for line in fh:
            parts = line.strip().split(",")
            vals = [int(parts[0])] + [float(p) for p in parts[1:]]
            out.append(StepDiagnostics(*vals))
    return out
