"""Fixed-curve saddle-point driver: potential solve, pointwise projection,
multiplier ascent, plus the discrete action and boundary-data construction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import dualproj, femspace
from .errors import DimensionMismatch, ZeroMass
from .geometry import Polyline, SpaceTimeMesh, build_mesh


@dataclass
class PrimalState:
    """Multiplier fields, one value (or 2-vector) per prism."""

    rho: np.ndarray   # (n_bulk_prisms,)
    J: np.ndarray     # (n_bulk_prisms, 2)
    mu: np.ndarray    # (n_curve_prisms,)
    V: np.ndarray     # (n_curve_prisms,)
    f: np.ndarray     # (n_curve_prisms,)

    @classmethod
    def zeros(cls, mesh: SpaceTimeMesh) -> "PrimalState":
        nb, nc = mesh.n_bulk_prisms, mesh.n_curve_prisms
        return cls(np.zeros(nb), np.zeros((nb, 2)), np.zeros(nc), np.zeros(nc), np.zeros(nc))

    def copy(self) -> "PrimalState":
        return PrimalState(self.rho.copy(), self.J.copy(), self.mu.copy(),
                           self.V.copy(), self.f.copy())


@dataclass
class DualState:
    """Projected dual fields, same prism layout as PrimalState."""

    rho_star: np.ndarray
    J_star: np.ndarray
    mu_star: np.ndarray
    V_star: np.ndarray
    f_star: np.ndarray

    @classmethod
    def zeros(cls, mesh: SpaceTimeMesh) -> "DualState":
        nb, nc = mesh.n_bulk_prisms, mesh.n_curve_prisms
        return cls(np.zeros(nb), np.zeros((nb, 2)), np.zeros(nc), np.zeros(nc), np.zeros(nc))

    def copy(self) -> "DualState":
        return DualState(self.rho_star.copy(), self.J_star.copy(), self.mu_star.copy(),
                         self.V_star.copy(), self.f_star.copy())


@dataclass
class BoundaryData:
    """Nonnegative nodal densities; each end jointly normalized to unit mass."""

    rho0: np.ndarray
    rho1: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray


@dataclass
class GaussianEnd:
    """Sum of isotropic Gaussian bumps (mx, my, sigma, weight) for one end.

    placement: 'both' restricts the bump sum to bulk and curve, 'bulk' puts
    everything in the bulk (zero curve density), 'curve' the reverse.
    """

    bumps: list
    placement: str = "both"


@dataclass
class SolverConfig:
    alpha1: float = 1.0
    alpha2: float = 1.0
    r1: float = 1.0
    r2: float = 1.0
    tol: float = 1e-5
    it_max: int = 2000
    solver_tol: float = 1e-8
    linear_solver: str = "auto"   # auto | cg | direct
    proj_tol: float = 1e-10
    trace_every: int = 1

    def validated(self) -> "SolverConfig":
        for name in ("alpha1", "alpha2", "r1", "r2", "tol", "solver_tol", "proj_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.it_max < 0:
            raise ValueError("it_max must be >= 0")
        return self


@dataclass
class SolveReport:
    iterations: int
    err: float
    converged: bool
    action: float
    cost_trace: list = field(default_factory=list)  # rows (iter, err_omega, err_gamma, action)


def gaussian_bump_sum(points: np.ndarray, bumps) -> np.ndarray:
    """Evaluate sum_k w_k * exp(-((x-mx)^2+(y-my)^2)/(2 sigma^2))."""
    out = np.zeros(len(points))
    for mx, my, sigma, weight in bumps:
        if sigma <= 0 or weight <= 0:
            raise ValueError("bump sigma and weight must be positive")
        d2 = (points[:, 0] - mx) ** 2 + (points[:, 1] - my) ** 2
        out += weight * np.exp(-d2 / (2.0 * sigma * sigma))
    return out


def make_boundary_data(end0: GaussianEnd, end1: GaussianEnd, mesh: SpaceTimeMesh,
                       ops: femspace.FieldOps | None = None) -> BoundaryData:
    """Nodal interpolation of the bump sums, restricted per placement and
    jointly normalized so bulk + curve mass is exactly 1 at each end."""
    if ops is None:
        ops = femspace.build_field_ops(mesh)
    lumped_b = np.asarray(ops.M.sum(axis=1)).ravel()
    lumped_c = np.asarray(ops.Mc.sum(axis=1)).ravel() if mesh.n_curve_vertices else np.zeros(0)
    curve_pts = mesh.vertices[mesh.curve_vertices] if mesh.n_curve_vertices else np.zeros((0, 2))

    def one_end(end: GaussianEnd):
        if end.placement not in ("both", "bulk", "curve"):
            raise ValueError(f"unknown placement {end.placement!r}")
        rho = gaussian_bump_sum(mesh.vertices, end.bumps)
        mu = gaussian_bump_sum(curve_pts, end.bumps) if len(curve_pts) else np.zeros(0)
        if end.placement == "bulk":
            mu = np.zeros_like(mu)
        elif end.placement == "curve":
            rho = np.zeros_like(rho)
            if mesh.n_curve_vertices == 0:
                raise ZeroMass("curve placement requested but the mesh has no curve")
        total = float(rho @ lumped_b) + (float(mu @ lumped_c) if len(mu) else 0.0)
        if total < 1e-14:
            raise ZeroMass("bump sum is numerically zero on the mesh")
        return rho / total, mu / total

    rho0, mu0 = one_end(end0)
    rho1, mu1 = one_end(end1)
    return BoundaryData(rho0=rho0, rho1=rho1, mu0=mu0, mu1=mu1)


def assemble_rhs(ops: femspace.FieldOps, state: PrimalState, duals: DualState,
                 data: BoundaryData, r1: float, r2: float) -> np.ndarray:
    """Right-hand side of the potential update for the current multipliers."""
    mesh = ops.mesh
    nv, nc, n_t = mesh.n_vertices, mesh.n_curve_vertices, mesh.n_t
    if len(state.rho) != mesh.n_bulk_prisms or len(state.mu) != mesh.n_curve_prisms:
        raise DimensionMismatch("state does not match this mesh generation")
    if len(data.rho0) != nv or len(data.mu0) != nc:
        raise DimensionMismatch("boundary data does not match this mesh generation")

    rhs_b = np.zeros((n_t + 1, nv))
    rhs_b[n_t] += (ops.M @ data.rho1) / r2
    rhs_b[0] -= (ops.M @ data.rho0) / r2
    rhs_b = rhs_b.ravel()
    rhs_b += ops.Dt_b.T @ (ops.vol_b * ((r1 / r2) * duals.rho_star - state.rho / r2))
    rhs_b += ops.Gx_b.T @ (ops.vol_b * ((r1 / r2) * duals.J_star[:, 0] - state.J[:, 0] / r2))
    rhs_b += ops.Gy_b.T @ (ops.vol_b * ((r1 / r2) * duals.J_star[:, 1] - state.J[:, 1] / r2))

    rhs_c = np.zeros((n_t + 1, nc))
    if nc:
        rhs_c[n_t] += (ops.Mc @ data.mu1) / r2
        rhs_c[0] -= (ops.Mc @ data.mu0) / r2
    rhs_c = rhs_c.ravel()
    if mesh.n_curve_prisms:
        rhs_b += ops.Tr_b.T @ (ops.vol_c * (state.f / r2 - duals.f_star))
        rhs_c += ops.Dt_c.T @ (ops.vol_c * (duals.mu_star - state.mu / r2))
        rhs_c += ops.Gs_c.T @ (ops.vol_c * (duals.V_star - state.V / r2))
        rhs_c += ops.Mean_c.T @ (ops.vol_c * (duals.f_star - state.f / r2))
    return np.concatenate([rhs_b, rhs_c])


def potential_residuals(ops: femspace.FieldOps, phi: np.ndarray, phi1d: np.ndarray,
                        duals: DualState):
    """Constraint residuals d = (derivative of potentials) - (projected dual)."""
    pb = phi.ravel()
    pc = phi1d.ravel()
    d_rho = ops.Dt_b @ pb - duals.rho_star
    d_j = np.stack([ops.Gx_b @ pb, ops.Gy_b @ pb], axis=1) - duals.J_star
    if ops.mesh.n_curve_prisms:
        d_mu = ops.Dt_c @ pc - duals.mu_star
        d_v = ops.Gs_c @ pc - duals.V_star
        d_f = (ops.Mean_c @ pc - ops.Tr_b @ pb) - duals.f_star
    else:
        d_mu = d_v = d_f = np.zeros(0)
    return d_rho, d_j, d_mu, d_v, d_f


def alg_step(state: PrimalState, duals: DualState, system: femspace.SaddleSystem,
             ops: femspace.FieldOps, data: BoundaryData, cfg: SolverConfig,
             phi_prev: np.ndarray | None = None):
    """One sweep: potential solve, pointwise projection, multiplier ascent.

    Returns (state, duals, phi, phi1d, err_omega, err_gamma); state and duals
    are updated in place and returned for convenience.
    """
    rhs = assemble_rhs(ops, state, duals, data, cfg.r1, cfg.r2)
    phi, phi1d, _ = femspace.solve_potentials(
        system, rhs, tol=cfg.solver_tol, method=cfg.linear_solver, x0=phi_prev
    )
    pb = phi.ravel()
    pc = phi1d.ravel()

    eta_rho = ops.Dt_b @ pb + state.rho / cfg.r1
    eta_j = np.stack([ops.Gx_b @ pb, ops.Gy_b @ pb], axis=1) + state.J / cfg.r1
    duals.rho_star, duals.J_star = dualproj.project_bulk(eta_rho, eta_j, tol=cfg.proj_tol)

    if ops.mesh.n_curve_prisms:
        eta_mu = ops.Dt_c @ pc + state.mu / cfg.r2
        eta_v = ops.Gs_c @ pc + state.V / cfg.r2
        eta_f = (ops.Mean_c @ pc - ops.Tr_b @ pb) + state.f / cfg.r2
        duals.mu_star, duals.V_star, duals.f_star = dualproj.project_curve(
            eta_mu, eta_v, eta_f, cfg.alpha1, cfg.alpha2, tol=cfg.proj_tol
        )

    d_rho, d_j, d_mu, d_v, d_f = potential_residuals(ops, phi, phi1d, duals)
    state.rho += cfg.r1 * d_rho
    state.J += cfg.r1 * d_j
    if ops.mesh.n_curve_prisms:
        state.mu += cfg.r2 * d_mu
        state.V += cfg.r2 * d_v
        state.f += cfg.r2 * d_f

    err_omega = max(_maxabs(d_rho), _maxabs(d_j))
    err_gamma = max(_maxabs(d_mu), _maxabs(d_v), _maxabs(d_f))
    return state, duals, phi, phi1d, err_omega, err_gamma


def _maxabs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


def solve_on_mesh(mesh: SpaceTimeMesh, data: BoundaryData, cfg: SolverConfig,
                  state: PrimalState | None = None, duals: DualState | None = None,
                  ops: femspace.FieldOps | None = None,
                  system: femspace.SaddleSystem | None = None):
    """Run the driver on a prepared mesh until tolerance or the iteration cap.

    Returns (state, duals, report, ops, system).
    """
    cfg = cfg.validated()
    if ops is None:
        ops = femspace.build_field_ops(mesh)
    if system is None:
        system = femspace.assemble_matrix(mesh, cfg.r1, cfg.r2, ops=ops)
    if state is None:
        state = PrimalState.zeros(mesh)
    if duals is None:
        duals = DualState.zeros(mesh)

    trace = []
    err = math.inf
    phi = None
    it = 0
    while it < cfg.it_max and err > cfg.tol:
        state, duals, phi_arr, phi1d_arr, err_o, err_g = alg_step(
            state, duals, system, ops, data, cfg,
            phi_prev=phi,
        )
        phi = np.concatenate([phi_arr.ravel(), phi1d_arr.ravel()])
        err = err_o + err_g
        it += 1
        if it % cfg.trace_every == 0 or it == cfg.it_max or err <= cfg.tol:
            act = discrete_action(state, mesh, cfg.alpha1, cfg.alpha2,
                                  density_floor=1e-12)
            trace.append((it, err_o, err_g, act))
    action = discrete_action(state, mesh, cfg.alpha1, cfg.alpha2, density_floor=1e-12)
    report = SolveReport(
        iterations=it, err=err if it else math.inf, converged=bool(err <= cfg.tol),
        action=action, cost_trace=trace,
    )
    return state, duals, report, ops, system


def solve_fixed_curve(curve: Polyline, end0: GaussianEnd, end1: GaussianEnd,
                      h: float, n_t: int, cfg: SolverConfig):
    """Mesh the curve, build boundary data and run the solver from zero init.

    Returns (state, report, mesh, data).
    """
    mesh = build_mesh(curve, h, n_t)
    ops = femspace.build_field_ops(mesh)
    data = make_boundary_data(end0, end1, mesh, ops=ops)
    state, _, report, _, _ = solve_on_mesh(mesh, data, cfg, ops=ops)
    return state, report, mesh, data


def _psi(u: np.ndarray, v_sq: np.ndarray, floor: float):
    """Kinetic integrand |v|^2 / (2u) with the vacuum convention.

    floor > 0 replaces u by max(u, floor), which bounds the integrand and
    keeps the value finite (used by the curve optimizer); floor == 0 is the
    exact definition whose third branch is +inf.
    """
    if floor > 0.0:
        return 0.5 * v_sq / np.maximum(u, floor)
    out = np.zeros_like(u)
    pos = u > 0.0
    out[pos] = 0.5 * v_sq[pos] / u[pos]
    bad = ~pos & ((v_sq > 0.0) | (u < 0.0))
    out[bad] = np.inf
    return out


def discrete_action(state: PrimalState, mesh: SpaceTimeMesh, alpha1: float, alpha2: float,
                    density_floor: float = 0.0) -> float:
    """Kinetic action of the multiplier fields over all prisms.

    Infeasible cells (zero density, nonzero flux) make the value +inf rather
    than raising.
    """
    dt = mesh.dt
    vol_b = np.tile(mesh.tri_areas, mesh.n_t) * dt
    bulk = _psi(state.rho, np.sum(state.J * state.J, axis=1), density_floor)
    total = float(np.sum(bulk * vol_b)) if bulk.size else 0.0
    if mesh.n_curve_prisms:
        vol_c = np.tile(mesh.curve_edge_lengths, mesh.n_t) * dt
        curve_v = _psi(state.mu, state.V * state.V, density_floor)
        curve_f = _psi(state.mu, state.f * state.f, density_floor)
        total += float(alpha1 * np.sum(curve_v * vol_c) + alpha2 * np.sum(curve_f * vol_c))
    return total


def evaluate_mobility_action(state: PrimalState, mesh: SpaceTimeMesh,
                             mobility_bulk, mobility_curve,
                             alpha1: float, alpha2: float,
                             dom_bulk=(0.0, math.inf), dom_curve=(0.0, math.inf)) -> float:
    """Diagnostic |flux|^2 / m(density) action for general concave mobilities.

    Densities outside the declared domain, or cells with zero mobility and
    nonzero flux, flag the value +inf.
    """

    def part(z, w_sq, mob, dom):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        inside = (z >= dom[0]) & (z <= dom[1])
        mz = np.zeros_like(z)
        mz[inside] = np.asarray(mob(z[inside]), dtype=float)
        ok = inside & (mz > 0.0)
        out[ok] = w_sq[ok] / mz[ok]
        bad = ~inside | (~ok & (w_sq > 0.0))
        out[bad] = np.inf
        return out

    dt = mesh.dt
    vol_b = np.tile(mesh.tri_areas, mesh.n_t) * dt
    total = float(np.sum(part(state.rho, np.sum(state.J**2, axis=1), mobility_bulk, dom_bulk) * vol_b))
    if mesh.n_curve_prisms:
        vol_c = np.tile(mesh.curve_edge_lengths, mesh.n_t) * dt
        total += alpha1 * float(np.sum(part(state.mu, state.V**2, mobility_curve, dom_curve) * vol_c))
        total += alpha2 * float(np.sum(part(state.mu, state.f**2, mobility_curve, dom_curve) * vol_c))
    return total


def curve_flux_share(state: PrimalState, mesh: SpaceTimeMesh) -> float:
    """Time-integrated |V| mass over time-integrated (|V| + |J|) mass."""
    dt = mesh.dt
    vol_b = np.tile(mesh.tri_areas, mesh.n_t) * dt
    bulk_flux = float(np.sum(np.linalg.norm(state.J, axis=1) * vol_b))
    if mesh.n_curve_prisms == 0:
        return 0.0
    vol_c = np.tile(mesh.curve_edge_lengths, mesh.n_t) * dt
    curve_flux = float(np.sum(np.abs(state.V) * vol_c))
    denom = bulk_flux + curve_flux
    return curve_flux / denom if denom > 0 else 0.0


def bulk_flux_near_curve(state: PrimalState, mesh: SpaceTimeMesh, width: float) -> float:
    """Time-integrated |J| mass restricted to a tube around the curve."""
    if mesh.curve.is_empty:
        return 0.0
    bary = mesh.tri_barycenters()
    dist = np.full(len(bary), np.inf)
    pts = mesh.curve.points
    for i in range(mesh.curve.n_segments):
        a, b = pts[i], pts[i + 1]
        d = b - a
        denom = float(d @ d)
        t = np.clip((bary - a) @ d / denom, 0.0, 1.0) if denom > 0 else np.zeros(len(bary))
        proj = a + t[:, None] * d
        dist = np.minimum(dist, np.linalg.norm(bary - proj, axis=1))
    in_tube = dist <= width
    dt = mesh.dt
    vol = mesh.tri_areas * dt
    jnorm = np.linalg.norm(state.J, axis=1).reshape(mesh.n_t, mesh.n_triangles)
    return float(np.sum(jnorm[:, in_tube] * vol[in_tube]))


def slab_masses(state: PrimalState, mesh: SpaceTimeMesh) -> np.ndarray:
    """Bulk + curve mass per time slab."""
    rho = state.rho.reshape(mesh.n_t, mesh.n_triangles)
    mass = rho @ mesh.tri_areas
    if mesh.n_curve_prisms:
        mu = state.mu.reshape(mesh.n_t, mesh.n_curve_edges)
        mass = mass + mu @ mesh.curve_edge_lengths
    return mass
