"""Direct solution of the coupled saddle-point system of one time step.

The monolithic matrix couples velocity, pressure, interface positions
and curvature. Velocity Dirichlet dofs are eliminated, the constant
pressure mode is handled by pinning one pressure dof (two for the
composite P1+P0 pair, whose basis represents constants twice), and the
computed pressure is normalized to zero mean afterwards.

The single pressure-enrichment degree of freedom couples to a large
share of the velocity dofs, which ruins fill-reducing orderings. It is
therefore eliminated exactly by a bordered block factorization, which
reduces each solve to a standard (unenriched) saddle-point system plus
two extra triangular solves. Factorizations are reused across slowly
varying steps through warm-started defect correction.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError

#: Vertices with lumped curvature mass below this cannot be eliminated locally.
OMEGA_MASS_TOL = 1e-12

#: Past this size the multifrontal backend beats SuperLU on these systems.
UMFPACK_MIN_SIZE = 9000

try:  # SuiteSparse via cvxopt; SuperLU handles everything if unavailable
    from cvxopt import matrix as _cvx_matrix
    from cvxopt import spmatrix as _cvx_spmatrix
    from cvxopt import umfpack as _cvx_umfpack

    _HAVE_UMFPACK = True
except ImportError:  # pragma: no cover
    _HAVE_UMFPACK = False


@dataclass
class SolveReport:
    residuals: dict = field(default_factory=dict)
    iterations: int = 0
    nullspace_pinned: bool = True
    reused_factorization: bool = False
    wall_time: float = 0.0


class _SuperLUFactor:
    def __init__(self, M):
        self._lu = spla.splu(M.tocsc())

    def solve(self, r):
        return self._lu.solve(r)


class _UmfpackFactor:
    def __init__(self, M):
        coo = M.tocoo()
        self._V = _cvx_spmatrix(
            coo.data, coo.row.astype(int), coo.col.astype(int), M.shape
        )
        sym = _cvx_umfpack.symbolic(self._V)
        self._num = _cvx_umfpack.numeric(self._V, sym)

    def solve(self, r):
        b = _cvx_matrix(r)
        _cvx_umfpack.solve(self._V, self._num, b)
        return np.asarray(b).ravel()


def _factorize(M, force_superlu=False):
    n = M.shape[0]
    try:
        if _HAVE_UMFPACK and n >= UMFPACK_MIN_SIZE and not force_superlu:
            try:
                return _UmfpackFactor(M)
            except (RuntimeError, ArithmeticError, ValueError):
                return _SuperLUFactor(M)
        return _SuperLUFactor(M)
    except (RuntimeError, ArithmeticError, ValueError) as exc:
        raise SolverError(f"factorization failed: {exc}") from exc


class _BorderedFactor:
    """Solve [[M0, b], [c^T, 0]] through a factorization of M0."""

    def __init__(self, factor, b, c):
        self.factor = factor
        self.b = b
        self.c = c
        self.y2 = factor.solve(b)
        self.denom = float(c @ self.y2)
        if not np.isfinite(self.denom) or self.denom == 0.0:
            raise SolverError("degenerate pressure-enrichment border")

    def solve(self, rhs):
        r0, rlam = rhs[:-1], rhs[-1]
        y1 = self.factor.solve(r0)
        lam = (self.c @ y1 - rlam) / self.denom
        return np.concatenate([y1 - lam * self.y2, [lam]])


class _Parts:
    """Monolithic system in plain or bordered form."""

    def __init__(self, M0, rhs, border=None):
        self.M0 = M0
        self.rhs = rhs
        self.border = border  # (b, c) with the enrichment dof ordered last

    @property
    def n(self):
        return self.M0.shape[0] + (1 if self.border else 0)

    def matvec(self, x):
        if self.border is None:
            return self.M0 @ x
        b, c = self.border
        w, lam = x[:-1], x[-1]
        return np.concatenate([self.M0 @ w + lam * b, [c @ w]])

    def factorize(self, force_superlu=False):
        factor = _factorize(self.M0, force_superlu=force_superlu)
        if self.border is None:
            return factor
        return _BorderedFactor(factor, *self.border)


class LUCache:
    """Holds the last factorization and solution for defect-correction reuse."""

    def __init__(self):
        self.op = None
        self.n = None
        self.x_prev = None

    def store(self, op, n):
        self.op = op
        self.n = n
        self.x_prev = None

    def matches(self, n):
        return self.op is not None and self.n == n


def _momentum_coupling(system):
    """Curvature-to-momentum block and its motion-row counterpart."""
    if system.scheme == "dziuk":
        return system.N_vec, system.M_full
    return system.N, system.M_lump


def monolithic_system(system):
    """Constrained monolithic system, bordered on the enrichment dof.

    Returns ``(parts, layout)``: the matrix/right-hand-side container and
    the block layout. The unknown ordering is velocity (free dofs),
    standard pressure, positions, curvature, and, when enabled, the
    single pressure-enrichment coefficient last.
    """
    d = system.dofs
    free = ~d.dirichlet_velocity
    K = len(system.interface)
    kappa_cols = 2 * K if system.scheme == "dziuk" else K

    g = system.g_values
    if g is None:
        g = np.zeros(d.n_velocity)

    Ncpl, _ = _momentum_coupling(system)
    A, B = system.A, system.B
    xfem = d.xfem
    nstd = d.n_pressure_std
    B_std = B[:nstd] if xfem else B

    Af = A[free][:, free]
    Bf = B_std[:, free]
    Nf = Ncpl[:, free]

    rhs_mom = system.rhs_f[free] - (A @ g)[free]
    div_rhs = system.div_rhs
    if div_rhs is None:
        div_rhs = np.zeros(d.n_pressure)
    rhs_div = div_rhs[:nstd] - B_std @ g

    pins = d.pressure_pins
    zap = np.ones(nstd)
    zap[list(pins)] = 0.0
    Bf_pinned = sp.diags(zap) @ Bf
    pin_mat = sp.coo_matrix(
        (np.ones(len(pins)), (list(pins), list(pins))), shape=(nstd, nstd)
    ).tocsr()
    rhs_div = rhs_div * zap

    tau = system.tau
    gamma = system.gamma
    Kc = system.K_curve
    if system.scheme == "dziuk":
        M_kappa = system.M_full
        rhs_mot = (system.M_full @ system.x_prev) / tau + Ncpl @ g
        Mmot_tau = system.M_full / tau
    else:
        M_kappa = system.M_lump.T
        rhs_mot = (system.M_lump @ system.x_prev) / tau + Ncpl @ g
        Mmot_tau = system.M_lump / tau

    nf = int(free.sum())
    blocks = [
        [Af, -Bf.T, None, -gamma * Nf.T],
        [Bf_pinned, pin_mat, None, None],
        [-Nf, None, Mmot_tau, None],
        [None, None, Kc, M_kappa],
    ]
    M0 = sp.bmat(blocks, format="csc")
    rhs = np.concatenate([rhs_mom, rhs_div, rhs_mot, np.zeros(2 * K)])

    border = None
    if xfem:
        row = B[nstd].toarray().ravel()
        n0 = M0.shape[0]
        b = np.zeros(n0)
        b[:nf] = -row[free]
        c = np.zeros(n0)
        c[:nf] = row[free]
        r_lam = div_rhs[nstd] - float(row @ g)
        rhs = np.concatenate([rhs, [r_lam]])
        border = (b, c)

    layout = {
        "free": free,
        "slices": _slices([nf, nstd, 2 * K, kappa_cols]),
        "row_slices": _slices([nf, nstd, len(rhs_mot), 2 * K]),
        "xfem": xfem,
    }
    return _Parts(M0, rhs, border), layout


def _slices(sizes):
    out = []
    start = 0
    for s in sizes:
        out.append(slice(start, start + s))
        start += s
    return out


def _unpack(system, x, layout):
    d = system.dofs
    s_u, s_p, s_x, s_k = layout["slices"]
    U = np.array(
        system.g_values
        if system.g_values is not None
        else np.zeros(d.n_velocity)
    )
    U[layout["free"]] = x[s_u]
    P = x[s_p].copy()
    if layout["xfem"]:
        P = np.append(P, x[-1])
    return U, P, x[s_x].copy(), x[s_k].copy()


def normalize_pressure(system, P):
    """Shift the standard pressure part to zero mean over the domain."""
    d = system.dofs
    mean = float(system.pressure_unit @ P) / system.domain_area
    if d.element == "p2p0":
        P[: d.n_p0] -= mean
    else:
        P[: d.n_p1] -= mean
    return P, mean


def solve_coupled(system, tol=1e-10, cache: LUCache | None = None,
                  allow_reuse=True):
    """Solve one time step; returns (U, P, X, kappa, report).

    The pressure is post-normalized to zero mean. When a cache with a
    matching factorization is supplied, a defect-correction iteration on
    the frozen factorization is attempted first and the matrix is only
    refactorized when that fails to reach the tolerance. ``allow_reuse``
    lets the caller skip the attempt when it knows the matrix jumped.
    """
    t0 = time.perf_counter()
    parts, layout = monolithic_system(system)
    rhs = parts.rhs
    report = SolveReport()

    rhs_norm = np.linalg.norm(rhs)
    scale = rhs_norm if rhs_norm > 0 else 1.0

    x = None
    if allow_reuse and cache is not None and cache.matches(parts.n):
        # defect correction on the frozen factorization, warm-started from
        # the previous step's solution; bail out as soon as the contraction
        # stalls and fall back to refactorization
        if cache.x_prev is not None and cache.x_prev.shape == rhs.shape:
            x = cache.x_prev.copy()
        else:
            x = cache.op.solve(rhs)
        rnorm_prev = np.inf
        for it in range(12):
            r = rhs - parts.matvec(x)
            rnorm = np.linalg.norm(r)
            if rnorm <= 0.1 * tol * scale:
                report.reused_factorization = True
                report.iterations = it
                break
            if not np.isfinite(rnorm) or rnorm > 0.7 * rnorm_prev:
                x = None
                break
            rnorm_prev = rnorm
            x += cache.op.solve(r)
        else:
            x = None

    if x is None:
        op, x, its = _fresh_solve(parts, rhs, tol, scale)
        report.iterations = its
        if (
            np.linalg.norm(rhs - parts.matvec(x)) > tol * scale
            and not isinstance(_unwrap_factor(op), _SuperLUFactor)
        ):
            # the multifrontal backend occasionally picks poor pivots on
            # these indefinite systems; retry with partial pivoting
            op, x, its = _fresh_solve(
                parts, rhs, tol, scale, force_superlu=True
            )
            report.iterations = its
        if cache is not None:
            cache.store(op, parts.n)

    relres = np.linalg.norm(rhs - parts.matvec(x)) / scale
    report.residuals = _block_residuals(parts, x, layout)
    report.residuals["total"] = float(relres)
    if not np.isfinite(relres) or relres > tol:
        raise SolverError(
            f"coupled solve did not reach tolerance: relative residual "
            f"{relres:.3e} > {tol:.1e}",
            residuals=report.residuals,
        )
    if cache is not None:
        cache.x_prev = x.copy()

    U, P, X, kappa = _unpack(system, x, layout)
    P, _ = normalize_pressure(system, P)
    report.wall_time = time.perf_counter() - t0
    return U, P, X, kappa, report


def _fresh_solve(parts, rhs, tol, scale, force_superlu=False):
    try:
        op = parts.factorize(force_superlu=force_superlu)
    except SolverError as exc:
        raise SolverError(
            f"factorization of the coupled system failed: {exc}",
        ) from exc
    x = op.solve(rhs)
    its = 0
    for _ in range(3):
        r = rhs - parts.matvec(x)
        if np.linalg.norm(r) <= 0.1 * tol * scale:
            break
        x += op.solve(r)
        its += 1
    return op, x, its


def _unwrap_factor(op):
    return op.factor if isinstance(op, _BorderedFactor) else op


def _block_residuals(parts, x, layout):
    r = parts.rhs - parts.matvec(x)
    names = ("momentum", "continuity", "motion", "curvature")
    out = {}
    for name, sl in zip(names, layout["row_slices"]):
        out[name] = float(np.linalg.norm(r[sl]))
    if layout["xfem"]:
        out["enrichment"] = float(abs(r[-1]))
    return out


def eliminate_curvature(system):
    """Reduced system over (U, P, X) with the curvature removed locally.

    The lumped curvature mass is diagonal per vertex along the weighted
    normal, so the curvature equation splits into a normal part defining
    kappa and a tangential constraint on the positions. Returns
    ``(matrix, rhs, layout, recover)`` where ``recover(X)`` rebuilds the
    curvature values; raises ValueError when a vertex mass is too small.
    """
    d = system.dofs
    free = ~d.dirichlet_velocity
    K = len(system.interface)
    if system.scheme == "dziuk":
        raise ValueError("local curvature elimination applies to the lumped scheme")

    omega = system.normals.omega
    star = system.normals.star_measure
    mass = 0.5 * star * np.einsum("kc,kc->k", omega, omega)
    if np.any(np.abs(mass) < OMEGA_MASS_TOL):
        raise ValueError("near-singular lumped curvature mass")

    cols = (2 * np.arange(K)[:, None] + np.arange(2)[None, :]).ravel()
    rows = np.repeat(np.arange(K), 2)
    D_omega = sp.coo_matrix(
        ((omega / mass[:, None]).ravel(), (rows, cols)), shape=(K, 2 * K)
    ).tocsr()
    norm = np.linalg.norm(omega, axis=1)
    operp = np.column_stack([-omega[:, 1], omega[:, 0]]) / norm[:, None]
    W_perp = sp.coo_matrix(
        (operp.ravel(), (rows, cols)), shape=(K, 2 * K)
    ).tocsr()

    g = system.g_values
    if g is None:
        g = np.zeros(d.n_velocity)
    A, B, N = system.A, system.B, system.N
    Af = A[free][:, free]
    Bf = B[:, free]
    Nf = N[:, free]
    npres = d.n_pressure

    pins = d.pressure_pins
    zap = np.ones(npres)
    zap[list(pins)] = 0.0
    Bf_pinned = sp.diags(zap) @ Bf
    pin_mat = sp.coo_matrix(
        (np.ones(len(pins)), (list(pins), list(pins))), shape=(npres, npres)
    ).tocsr()

    div_rhs = system.div_rhs if system.div_rhs is not None else np.zeros(npres)
    rhs_div = (div_rhs - B @ g) * zap
    rhs_mom = system.rhs_f[free] - (A @ g)[free]
    rhs_mot = (system.M_lump @ system.x_prev) / system.tau + N @ g

    # kappa = -D_omega K_curve X substituted into the momentum block
    sub = system.gamma * (Nf.T @ (D_omega @ system.K_curve))
    blocks = [
        [Af, -Bf.T, sub],
        [Bf_pinned, pin_mat, None],
        [-Nf, None, system.M_lump / system.tau],
        [None, None, W_perp @ system.K_curve],
    ]
    M = sp.bmat(blocks, format="csc")
    nf = int(free.sum())
    rhs = np.concatenate([rhs_mom, rhs_div, rhs_mot, np.zeros(K)])
    layout = {"free": free, "slices": _slices([nf, npres, 2 * K])}

    def recover(X):
        return -(D_omega @ (system.K_curve @ X))

    return M, rhs, layout, recover


def solve_eliminated(system, tol=1e-10):
    """Solve through the curvature-eliminated reduced system."""
    M, rhs, layout, recover = eliminate_curvature(system)
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:
        raise SolverError(f"reduced factorization failed: {exc}") from exc
    x = lu.solve(rhs)
    r = rhs - M @ x
    scale = max(np.linalg.norm(rhs), 1e-300)
    if np.linalg.norm(r) > 0.1 * tol * scale:
        x += lu.solve(r)
    relres = np.linalg.norm(rhs - M @ x) / scale
    if not np.isfinite(relres) or relres > tol:
        raise SolverError(f"reduced solve residual {relres:.3e} > {tol:.1e}")
    d = system.dofs
    s_u, s_p, s_x = layout["slices"]
    U = np.array(
        system.g_values if system.g_values is not None else np.zeros(d.n_velocity)
    )
    U[layout["free"]] = x[s_u]
    P = x[s_p].copy()
    X = x[s_x].copy()
    kappa = recover(X)
    P, _ = normalize_pressure(system, P)
    return U, P, X, kappa
