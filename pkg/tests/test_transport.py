import math

import numpy as np
import pytest

from pathflow import femspace as fs
from pathflow import transport as tr
from pathflow.errors import ZeroMass
from pathflow.geometry import Polyline, build_mesh

U_CURVE = [(0.3, 0.7), (0.4, 0.3), (0.6, 0.3), (0.7, 0.7)]


@pytest.fixture(scope="module")
def coarse():
    mesh = build_mesh(Polyline(U_CURVE), 0.12, 6)
    ops = fs.build_field_ops(mesh)
    return mesh, ops


class TestBoundaryData:
    def test_bump_below_curve(self, coarse):
        mesh, ops = coarse
        data = tr.make_boundary_data(
            tr.GaussianEnd([(0.5, 0.2, 0.1, 1.0)]),
            tr.GaussianEnd([(0.5, 0.2, 0.1, 1.0)]), mesh, ops=ops)
        lump_b = np.asarray(ops.M.sum(axis=1)).ravel()
        lump_c = np.asarray(ops.Mc.sum(axis=1)).ravel()
        assert abs(data.rho0 @ lump_b + data.mu0 @ lump_c - 1.0) <= 1e-12
        # peak below the curve
        peak = mesh.vertices[np.argmax(data.rho0)]
        assert peak[1] < 0.35
        # curve density concentrated on the bottom of the u
        pts = mesh.vertices[mesh.curve_vertices]
        bottom = np.abs(pts[:, 1] - 0.3) < 1e-9
        assert data.mu0[bottom].max() > 10 * max(data.mu0[~bottom].max(), 1e-30)

    def test_far_bump_has_tiny_curve_fraction(self, coarse):
        mesh, ops = coarse
        data = tr.make_boundary_data(
            tr.GaussianEnd([(0.9, 0.9, 0.01, 1.0)]),
            tr.GaussianEnd([(0.9, 0.9, 0.01, 1.0)]), mesh, ops=ops)
        lump_c = np.asarray(ops.Mc.sum(axis=1)).ravel()
        assert data.mu0 @ lump_c <= 1e-6

    def test_mirror_symmetric_data(self):
        mesh = build_mesh(Polyline([]), 0.25, 2)
        ops = fs.build_field_ops(mesh)
        data = tr.make_boundary_data(
            tr.GaussianEnd([(0.3, 0.5, 0.1, 1.0), (0.7, 0.5, 0.1, 1.0)]),
            tr.GaussianEnd([(0.5, 0.5, 0.1, 1.0)]), mesh, ops=ops)
        # mirror x -> 1-x maps the vertex set onto itself on this grid
        order = np.lexsort((mesh.vertices[:, 1], mesh.vertices[:, 0]))
        mirrored = np.lexsort((mesh.vertices[:, 1], 1.0 - mesh.vertices[:, 0]))
        assert np.allclose(data.rho0[order], data.rho0[mirrored], atol=1e-12)

    def test_zero_mass_raises(self, coarse):
        mesh, ops = coarse
        with pytest.raises(ZeroMass):
            tr.make_boundary_data(
                tr.GaussianEnd([(50.0, 50.0, 0.001, 1.0)]),
                tr.GaussianEnd([(0.5, 0.5, 0.1, 1.0)]), mesh, ops=ops)

    def test_placements(self, coarse):
        mesh, ops = coarse
        data = tr.make_boundary_data(
            tr.GaussianEnd([(0.5, 0.2, 0.1, 1.0)], placement="bulk"),
            tr.GaussianEnd([(0.5, 0.2, 0.1, 1.0)], placement="curve"), mesh, ops=ops)
        assert np.all(data.mu0 == 0.0)
        assert np.all(data.rho1 == 0.0)
        lump_c = np.asarray(ops.Mc.sum(axis=1)).ravel()
        assert abs(data.mu1 @ lump_c - 1.0) <= 1e-12


class TestAlgStep:
    def test_stationary_zero_transport(self, coarse):
        mesh, ops = coarse
        end = tr.GaussianEnd([(0.5, 0.2, 0.1, 1.0)])
        data = tr.make_boundary_data(end, end, mesh, ops=ops)
        cfg = tr.SolverConfig(alpha1=0.01, alpha2=0.01, tol=1e-8, it_max=4000,
                              linear_solver="tensor", trace_every=4000)
        state, _, report, _, _ = tr.solve_on_mesh(mesh, data, cfg, ops=ops)
        assert report.action <= 1e-6

    def test_fixed_point_of_optimal_duals(self, coarse):
        """Zero data admits the all-zero saddle point; one sweep keeps it."""
        mesh, ops = coarse
        data = tr.BoundaryData(
            rho0=np.zeros(mesh.n_vertices), rho1=np.zeros(mesh.n_vertices),
            mu0=np.zeros(mesh.n_curve_vertices), mu1=np.zeros(mesh.n_curve_vertices))
        cfg = tr.SolverConfig(tol=1e-12, it_max=1, trace_every=1)
        state = tr.PrimalState.zeros(mesh)
        duals = tr.DualState.zeros(mesh)
        system = fs.assemble_matrix(mesh, cfg.r1, cfg.r2, ops=ops)
        state, duals, phi, phi1d, err_o, err_g = tr.alg_step(
            state, duals, system, ops, data, cfg)
        assert max(np.max(np.abs(state.rho)), np.max(np.abs(state.J))) <= 1e-12
        assert err_o + err_g <= 1e-12

    def test_error_decrease_over_500_iters(self, coarse):
        mesh, ops = coarse
        data = tr.make_boundary_data(
            tr.GaussianEnd([(0.5, 0.2, 0.1, 1.0)]),
            tr.GaussianEnd([(0.2, 0.8, 0.1, 0.5), (0.8, 0.8, 0.1, 0.5)]),
            mesh, ops=ops)
        cfg = tr.SolverConfig(alpha1=0.01, alpha2=0.01, tol=1e-12, it_max=500,
                              linear_solver="tensor", trace_every=1)
        state, _, report, _, _ = tr.solve_on_mesh(mesh, data, cfg, ops=ops)
        first = report.cost_trace[0][1] + report.cost_trace[0][2]
        last = report.cost_trace[-1][1] + report.cost_trace[-1][2]
        assert last <= first / 10.0

    def test_dual_feasibility_every_step(self, coarse):
        from pathflow import dualproj as dp

        mesh, ops = coarse
        data = tr.make_boundary_data(
            tr.GaussianEnd([(0.5, 0.2, 0.1, 1.0)]),
            tr.GaussianEnd([(0.2, 0.8, 0.1, 1.0)]), mesh, ops=ops)
        cfg = tr.SolverConfig(alpha1=0.5, alpha2=2.0, tol=1e-12, it_max=1, trace_every=1)
        state = tr.PrimalState.zeros(mesh)
        duals = tr.DualState.zeros(mesh)
        system = fs.assemble_matrix(mesh, cfg.r1, cfg.r2, ops=ops)
        for _ in range(30):
            state, duals, *_ = tr.alg_step(state, duals, system, ops, data, cfg)
            assert np.max(dp.bulk_feasibility(duals.rho_star, duals.J_star)) <= 1e-10
            assert np.max(dp.curve_feasibility(
                duals.mu_star, duals.V_star, duals.f_star, 0.5, 2.0)) <= 1e-10

    def test_monotone_trend_moving_average(self, coarse):
        mesh, ops = coarse
        data = tr.make_boundary_data(
            tr.GaussianEnd([(0.5, 0.2, 0.1, 1.0)]),
            tr.GaussianEnd([(0.2, 0.8, 0.1, 0.5), (0.8, 0.8, 0.1, 0.5)]),
            mesh, ops=ops)
        cfg = tr.SolverConfig(alpha1=0.01, alpha2=0.01, tol=1e-12, it_max=600,
                              linear_solver="tensor", trace_every=1)
        _, _, report, _, _ = tr.solve_on_mesh(mesh, data, cfg, ops=ops)
        errs = np.array([row[1] + row[2] for row in report.cost_trace])
        window = 100
        avg = np.convolve(errs, np.ones(window) / window, mode="valid")
        assert np.all(np.diff(avg) <= 1e-12)


class TestAction:
    def test_constant_fields(self):
        mesh = build_mesh(Polyline([]), 0.25, 4)
        state = tr.PrimalState.zeros(mesh)
        state.rho[:] = 1.0
        state.J[:, 0] = 1.0
        assert abs(tr.discrete_action(state, mesh, 1.0, 1.0) - 0.5) <= 1e-12

    def test_vacuum_is_zero(self):
        mesh = build_mesh(Polyline([]), 0.25, 4)
        state = tr.PrimalState.zeros(mesh)
        assert tr.discrete_action(state, mesh, 1.0, 1.0) == 0.0

    def test_flux_through_vacuum_flags_inf(self):
        mesh = build_mesh(Polyline([]), 0.25, 4)
        state = tr.PrimalState.zeros(mesh)
        state.J[0, 0] = 1.0
        assert math.isinf(tr.discrete_action(state, mesh, 1.0, 1.0))

    def test_negative_density_flags_inf(self):
        mesh = build_mesh(Polyline([]), 0.25, 4)
        state = tr.PrimalState.zeros(mesh)
        state.rho[3] = -1e-8
        assert math.isinf(tr.discrete_action(state, mesh, 1.0, 1.0))
        assert math.isfinite(tr.discrete_action(state, mesh, 1.0, 1.0, density_floor=1e-9))


class TestMobilityAction:
    def test_linear_mobility_factor_two(self, coarse):
        mesh, _ = coarse
        rng = np.random.default_rng(0)
        state = tr.PrimalState.zeros(mesh)
        state.rho = rng.uniform(0.5, 2.0, mesh.n_bulk_prisms)
        state.J = rng.uniform(-1, 1, (mesh.n_bulk_prisms, 2))
        state.mu = rng.uniform(0.5, 2.0, mesh.n_curve_prisms)
        state.V = rng.uniform(-1, 1, mesh.n_curve_prisms)
        state.f = rng.uniform(-1, 1, mesh.n_curve_prisms)
        lin = tr.evaluate_mobility_action(
            state, mesh, lambda z: z, lambda z: z, 0.7, 1.3)
        half = tr.discrete_action(state, mesh, 0.7, 1.3)
        assert abs(lin - 2.0 * half) <= 1e-10 * max(1.0, lin)

    def test_outside_domain_flags(self, coarse):
        mesh, _ = coarse
        state = tr.PrimalState.zeros(mesh)
        state.rho[:] = 2.0
        val = tr.evaluate_mobility_action(
            state, mesh, lambda z: z * (1 - z), lambda z: z, 1.0, 1.0,
            dom_bulk=(0.0, 1.0))
        assert math.isinf(val)

    def test_logistic_mobility_value(self, coarse):
        mesh, _ = coarse
        state = tr.PrimalState.zeros(mesh)
        state.rho[:] = 0.5
        state.J[:, 0] = 0.1
        val = tr.evaluate_mobility_action(
            state, mesh, lambda z: z * (1 - z), lambda z: z, 1.0, 1.0,
            dom_bulk=(0.0, 1.0))
        assert abs(val - 0.04) <= 1e-12


def test_solve_report_converged_flag(coarse):
    mesh, ops = coarse
    end = tr.GaussianEnd([(0.5, 0.5, 0.2, 1.0)])
    data = tr.make_boundary_data(end, end, mesh, ops=ops)
    cfg = tr.SolverConfig(tol=1e-3, it_max=0)
    _, _, report, _, _ = tr.solve_on_mesh(mesh, data, cfg, ops=ops)
    assert report.iterations == 0 and not report.converged
