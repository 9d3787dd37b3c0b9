"""Projected gradient descent over the polyline control points.

Each outer iteration estimates the action gradient by central differences
(one warm-started solver sweep per perturbed curve), filters components where
the action change does not dominate the penalty change, takes a backtracked
step, remeshes and re-solves on the updated curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import curvereg, femspace, transport
from .errors import CurveSelfIntersection
from .geometry import (
    Polyline,
    SpaceTimeMesh,
    build_mesh,
    nearest_curve_edge_map,
    nearest_triangle_map,
    project_box,
)

ACTION_FLOOR = 1e-9  # density floor for finite-difference action evaluations
COST_REGRESSION_FACTOR = 1.05  # accepted relative cost increase before backtracking
MAX_BACKTRACKS = 5


@dataclass
class PathOptConfig:
    eps_fd: float = 1e-4
    step0: float = 0.01
    c0: float = 1e-3
    c_low: float = 1e-6
    n_iter: int = 5            # stall window before halving c
    it_max: int = 200
    inner_alg_iters: int = 1   # solver sweeps per finite-difference evaluation
    tol: float = 1e-4
    p: float = 3.0             # repulsive kernel exponent
    delta: float = 0.05        # box margin for the control points

    def validated(self) -> "PathOptConfig":
        for name in ("eps_fd", "step0", "c0", "c_low", "tol", "p", "delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.c_low >= self.c0:
            raise ValueError("c_low must be below c0")
        if self.n_iter < 1 or self.it_max < 0 or self.inner_alg_iters < 1:
            raise ValueError("iteration counts must be positive")
        return self


@dataclass
class PathTraceRow:
    outer_iter: int
    curve_points: np.ndarray
    action: float
    regularizer: float
    total_cost: float
    step: float
    c: float
    n_frozen: int
    err: float
    note: str = ""


@dataclass
class PathTrace:
    rows: list = field(default_factory=list)
    stall_reason: str = ""

    def append(self, row: PathTraceRow):
        self.rows.append(row)


def transfer_state(old_mesh: SpaceTimeMesh, state: transport.PrimalState,
                   duals: transport.DualState, new_mesh: SpaceTimeMesh):
    """Nearest-prism injection of all prism fields onto a new mesh."""
    tmap = nearest_triangle_map(old_mesh, new_mesh)
    emap = nearest_curve_edge_map(old_mesh, new_mesh)
    n_t = new_mesh.n_t

    def inject_bulk(arr):
        if arr.ndim == 1:
            return arr.reshape(n_t, old_mesh.n_triangles)[:, tmap].reshape(-1)
        ncomp = arr.shape[-1]
        picked = arr.reshape(n_t, old_mesh.n_triangles, ncomp)[:, tmap]
        return picked.reshape(n_t * new_mesh.n_triangles, ncomp)

    def inject_curve(arr):
        if new_mesh.n_curve_edges == 0:
            return np.zeros(0)
        if old_mesh.n_curve_edges == 0:
            return np.zeros(n_t * new_mesh.n_curve_edges)
        return arr.reshape(n_t, old_mesh.n_curve_edges)[:, emap].reshape(-1)

    new_state = transport.PrimalState(
        rho=inject_bulk(state.rho), J=inject_bulk(state.J),
        mu=inject_curve(state.mu), V=inject_curve(state.V), f=inject_curve(state.f),
    )
    new_duals = transport.DualState(
        rho_star=inject_bulk(duals.rho_star), J_star=inject_bulk(duals.J_star),
        mu_star=inject_curve(duals.mu_star), V_star=inject_curve(duals.V_star),
        f_star=inject_curve(duals.f_star),
    )
    return new_state, new_duals


def _warm_action(curve: Polyline, old_mesh, state, duals, end0, end1,
                 solve_cfg: transport.SolverConfig, sweeps: int) -> float:
    """Remesh, transfer, run a few solver sweeps, evaluate the floored action."""
    mesh = build_mesh(curve, old_mesh.h, old_mesh.n_t)
    ops = femspace.build_field_ops(mesh)
    data = transport.make_boundary_data(end0, end1, mesh, ops=ops)
    st, du = transfer_state(old_mesh, state, duals, mesh)
    system = femspace.assemble_matrix(mesh, solve_cfg.r1, solve_cfg.r2, ops=ops)
    cfg = transport.SolverConfig(
        alpha1=solve_cfg.alpha1, alpha2=solve_cfg.alpha2,
        r1=solve_cfg.r1, r2=solve_cfg.r2,
        tol=1e-300, it_max=sweeps, solver_tol=solve_cfg.solver_tol,
        linear_solver=solve_cfg.linear_solver, trace_every=max(sweeps, 1),
    )
    st, du, rep, _, _ = transport.solve_on_mesh(mesh, data, cfg, state=st, duals=du,
                                                ops=ops, system=system)
    return transport.discrete_action(st, mesh, solve_cfg.alpha1, solve_cfg.alpha2,
                                     density_floor=ACTION_FLOOR)


def fd_gradient_action(curve: Polyline, mesh: SpaceTimeMesh,
                       state: transport.PrimalState, duals: transport.DualState,
                       end0, end1, solve_cfg: transport.SolverConfig,
                       cfg: PathOptConfig):
    """Central differences of the action per control coordinate.

    Returns (grad, valid); a component is invalid when either perturbed curve
    fails validation after the box projection.
    """
    coords = curve.flat_coords()
    grad = np.zeros_like(coords)
    valid = np.ones(len(coords), dtype=bool)
    for i in range(len(coords)):
        vals = []
        for sign in (+1.0, -1.0):
            pert = coords.copy()
            pert[i] += sign * cfg.eps_fd
            cand = project_box(curve.with_flat_coords(pert), cfg.delta)
            if abs(cand.flat_coords()[i] - pert[i]) > 1e-14:
                vals = None  # clamp swallowed the perturbation
                break
            try:
                cand.validate()
                vals.append(_warm_action(cand, mesh, state, duals, end0, end1,
                                         solve_cfg, cfg.inner_alg_iters))
            except CurveSelfIntersection:
                vals = None
                break
        if vals is None or not all(math.isfinite(v) for v in vals):
            valid[i] = False
            continue
        grad[i] = (vals[0] - vals[1]) / (2.0 * cfg.eps_fd)
    return grad, valid


def descent_direction(grad_action: np.ndarray, grad_reg: np.ndarray, c: float,
                      valid: np.ndarray | None = None) -> np.ndarray:
    """Componentwise filtered, sign-normalized direction, then unit-normalized.

    A component is active only when the action change dominates the penalty
    change; an all-zero vector signals a stall.
    """
    g = grad_action + c * grad_reg
    active = np.abs(grad_action) > c * np.abs(grad_reg)
    if valid is not None:
        active &= valid
    p = np.zeros_like(g)
    p[active] = g[active] / np.abs(g[active])
    norm = np.linalg.norm(p)
    if norm > 0:
        p /= norm
    return p


def optimize_path(curve0: Polyline, end0, end1, h: float, n_t: int,
                  solve_cfg: transport.SolverConfig, cfg: PathOptConfig):
    """Run the outer descent loop; returns (curve, PathTrace, PrimalState, mesh).

    Every accepted step applies the box projection, revalidates, remeshes and
    re-solves; the penalty scale c halves after n_iter consecutive stalls
    until it reaches c_low.
    """
    cfg = cfg.validated()
    solve_cfg = solve_cfg.validated()
    curve = project_box(curve0, cfg.delta)
    curve.validate()

    def full_solve(cv, warm=None, warm_mesh=None):
        mesh = build_mesh(cv, h, n_t)
        ops = femspace.build_field_ops(mesh)
        data = transport.make_boundary_data(end0, end1, mesh, ops=ops)
        if warm is not None:
            st, du = transfer_state(warm_mesh, warm[0], warm[1], mesh)
        else:
            st = du = None
        system = femspace.assemble_matrix(mesh, solve_cfg.r1, solve_cfg.r2, ops=ops)
        st, du, rep, _, _ = transport.solve_on_mesh(
            mesh, data, solve_cfg, state=st, duals=du, ops=ops, system=system)
        action = transport.discrete_action(st, mesh, solve_cfg.alpha1, solve_cfg.alpha2,
                                           density_floor=ACTION_FLOOR)
        return mesh, st, du, rep, action

    mesh, state, duals, report, action = full_solve(curve)
    reg = curvereg.discrete_regularizer(curve, cfg.p).total
    c = cfg.c0
    step = cfg.step0
    trace = PathTrace()
    trace.append(PathTraceRow(0, curve.points.copy(), action, reg,
                              action + c * reg, step, c, 0, math.inf))

    stall_history = []
    k = 0
    err = math.inf
    while k < cfg.it_max and err > cfg.tol:
        if len(stall_history) >= cfg.n_iter and all(stall_history[-cfg.n_iter:]):
            if c > cfg.c_low:
                c = 0.5 * c
                stall_history.clear()

        grad_a, valid_a = fd_gradient_action(curve, mesh, state, duals, end0, end1,
                                             solve_cfg, cfg)
        grad_r, valid_r = curvereg.fd_gradient_reg(curve, cfg.p, cfg.eps_fd)
        direction = descent_direction(grad_a, grad_r, c, valid_a & valid_r)
        n_frozen = int(np.sum(direction == 0.0))
        stalled = not np.any(direction)
        stall_history.append(stalled)
        k += 1

        if stalled:
            err = report.err  # curve unchanged
            trace.append(PathTraceRow(k, curve.points.copy(), action, reg,
                                      action + c * reg, step, c, n_frozen, err,
                                      note="stall"))
            if c <= cfg.c_low:
                trace.stall_reason = "stalled-at-c-floor"
                break
            continue

        cost_before = action + c * reg
        accepted = False
        for _ in range(MAX_BACKTRACKS + 1):
            candidate = project_box(
                curve.with_flat_coords(curve.flat_coords() - step * direction), cfg.delta)
            try:
                candidate.validate()
            except CurveSelfIntersection:
                step *= 0.5
                continue
            new_mesh, new_state, new_duals, new_report, new_action = full_solve(
                candidate, warm=(state, duals), warm_mesh=mesh)
            new_reg = curvereg.discrete_regularizer(candidate, cfg.p).total
            if new_action + c * new_reg <= cost_before * COST_REGRESSION_FACTOR:
                accepted = True
                break
            step *= 0.5

        if accepted:
            err = float(np.max(np.abs(candidate.points - curve.points))) + new_report.err
            curve, mesh, state, duals = candidate, new_mesh, new_state, new_duals
            report, action, reg = new_report, new_action, new_reg
            trace.append(PathTraceRow(k, curve.points.copy(), action, reg,
                                      action + c * reg, step, c, n_frozen, err))
        else:
            err = report.err
            trace.append(PathTraceRow(k, curve.points.copy(), action, reg,
                                      action + c * reg, step, c, n_frozen, err,
                                      note="rejected"))
    return curve, trace, state, mesh
