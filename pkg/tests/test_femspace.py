import numpy as np
import pytest

from pathflow import femspace as fs
from pathflow import transport as tr
from pathflow.errors import DimensionMismatch, SolverStagnation
from pathflow.geometry import Polyline, build_mesh

U_CURVE = [(0.3, 0.7), (0.4, 0.3), (0.6, 0.3), (0.7, 0.7)]


@pytest.fixture(scope="module")
def setup():
    mesh = build_mesh(Polyline(U_CURVE), 0.15, 4)
    ops = fs.build_field_ops(mesh)
    system = fs.assemble_matrix(mesh, 2.0, 0.5, ops=ops)
    return mesh, ops, system


def test_joint_constant_kernel(setup):
    _, _, system = setup
    ones = np.ones(system.ndof)
    assert np.max(np.abs(system.matrix @ ones)) <= 1e-12


def test_symmetry(setup):
    _, _, system = setup
    rng = np.random.default_rng(0)
    A = system.matrix
    for _ in range(100):
        u = rng.standard_normal(system.ndof)
        v = rng.standard_normal(system.ndof)
        lhs = u @ (A @ v)
        rhs = v @ (A @ u)
        assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(u) * np.linalg.norm(v)


def test_positive_semidefinite(setup):
    _, _, system = setup
    rng = np.random.default_rng(1)
    for _ in range(100):
        v = rng.standard_normal(system.ndof)
        assert v @ (system.matrix @ v) >= -1e-12 * (v @ v)


def test_quadratic_form_identity(setup):
    mesh, ops, system = setup
    rng = np.random.default_rng(2)
    x = rng.standard_normal(system.ndof)
    q = x @ (system.matrix @ x)
    parts = fs.quadratic_form_parts(system, ops, 2.0, 0.5, x)
    assert abs(q - sum(parts)) <= 1e-10 * max(1.0, abs(q))


def test_trace_consistent_linear_potential(setup):
    """phi linear in x, constant in t, with the curve potential equal to the
    trace: the coupling term vanishes and only the two gradient norms remain."""
    mesh, ops, system = setup
    a, b = 0.8, -0.3
    lin = a * mesh.vertices[:, 0] + b * mesh.vertices[:, 1]
    phi = np.tile(lin, (mesh.n_t + 1, 1))
    phi1d = phi[:, mesh.curve_vertices]
    x = np.concatenate([phi.ravel(), phi1d.ravel()])
    q = x @ (system.matrix @ x)
    grad_sq = (a * a + b * b) * 1.0  # |Omega| = 1, unit time interval
    # curve tangential gradient of the trace
    tang = 0.0
    pts = mesh.vertices[mesh.curve_vertices]
    for k in range(mesh.n_curve_edges):
        d = pts[k + 1] - pts[k]
        ln = np.linalg.norm(d)
        tang += ((a * d[0] + b * d[1]) / ln) ** 2 * ln
    expected = (2.0 / 0.5) * grad_sq + tang
    assert abs(q - expected) <= 1e-10 * expected


def test_gauge_invariance_of_eta(setup):
    """Shifting both potentials by a constant leaves every projection input
    unchanged."""
    mesh, ops, _ = setup
    rng = np.random.default_rng(3)
    phi = rng.standard_normal(((mesh.n_t + 1), mesh.n_vertices))
    phi1d = rng.standard_normal(((mesh.n_t + 1), mesh.n_curve_vertices))
    flat = lambda arr: arr.ravel()
    c = 3.7
    for op, base in (
        (ops.Dt_b, phi), (ops.Gx_b, phi), (ops.Gy_b, phi),
        (ops.Dt_c, phi1d), (ops.Gs_c, phi1d),
    ):
        assert np.allclose(op @ flat(base + c), op @ flat(base), atol=1e-12)
    tr_shift = ops.Mean_c @ flat(phi1d + c) - ops.Tr_b @ flat(phi + c)
    tr_base = ops.Mean_c @ flat(phi1d) - ops.Tr_b @ flat(phi)
    assert np.allclose(tr_shift, tr_base, atol=1e-12)


def test_rhs_stationary_structure(setup):
    """Stationary data loads only the first/last time-node blocks and is
    orthogonal to the constant mode."""
    mesh, ops, system = setup
    data = tr.make_boundary_data(
        tr.GaussianEnd([(0.5, 0.2, 0.1, 1.0)]), tr.GaussianEnd([(0.5, 0.2, 0.1, 1.0)]),
        mesh, ops=ops,
    )
    state = tr.PrimalState.zeros(mesh)
    duals = tr.DualState.zeros(mesh)
    rhs = tr.assemble_rhs(ops, state, duals, data, 2.0, 0.5)
    nv, nc = mesh.n_vertices, mesh.n_curve_vertices
    rb = rhs[: (mesh.n_t + 1) * nv].reshape(mesh.n_t + 1, nv)
    rc = rhs[(mesh.n_t + 1) * nv:].reshape(mesh.n_t + 1, nc)
    assert np.all(rb[1:-1] == 0.0) and np.all(rc[1:-1] == 0.0)
    assert np.any(rb[0] != 0.0) and np.any(rb[-1] != 0.0)
    # compatibility: the constant mode sees (rho1-rho0)(Omega) + (mu1-mu0)(Gamma) = 0
    assert abs(np.ones(system.ndof) @ rhs) <= 1e-12


def test_rhs_curve_exchange_block():
    """Uniform exchange multiplier pairs with the trace like the curve mass
    matrix acting on ones (independent assembly)."""
    mesh = build_mesh(Polyline(U_CURVE), 0.15, 3)
    ops = fs.build_field_ops(mesh)
    r1 = r2 = 1.0
    data = tr.BoundaryData(
        rho0=np.zeros(mesh.n_vertices), rho1=np.zeros(mesh.n_vertices),
        mu0=np.zeros(mesh.n_curve_vertices), mu1=np.zeros(mesh.n_curve_vertices),
    )
    state = tr.PrimalState.zeros(mesh)
    state.f[:] = 1.0
    duals = tr.DualState.zeros(mesh)
    rhs = tr.assemble_rhs(ops, state, duals, data, r1, r2)
    nv = mesh.n_vertices
    rb = rhs[: (mesh.n_t + 1) * nv].reshape(mesh.n_t + 1, nv)
    Ct, Qt = fs.time_matrices(mesh.n_t)
    expected_curve = (Qt @ np.ones((mesh.n_t + 1, 1)) @ (ops.Mc @ np.ones(mesh.n_curve_vertices))[None, :])
    got = rb[:, mesh.curve_vertices]
    assert np.allclose(got, expected_curve / r2, atol=1e-12)
    off_curve = np.ones(nv, dtype=bool)
    off_curve[mesh.curve_vertices] = False
    assert np.all(rb[:, off_curve] == 0.0)


def test_solve_zero_rhs(setup):
    _, _, system = setup
    phi, phi1d, _ = fs.solve_potentials(system, np.zeros(system.ndof))
    assert np.all(phi == 0.0) and np.all(phi1d == 0.0)


def test_solve_kernel_rhs(setup):
    _, _, system = setup
    phi, phi1d, _ = fs.solve_potentials(system, system.kernel_mode.copy())
    assert np.max(np.abs(phi)) <= 1e-12 and np.max(np.abs(phi1d)) <= 1e-12


@pytest.mark.parametrize("method", ["tensor", "direct", "cg"])
def test_manufactured_solution(setup, method):
    _, _, system = setup
    rng = np.random.default_rng(4)
    x = rng.standard_normal(system.ndof)
    w = system.kernel_mode
    x -= w * (w @ x)
    rhs = system.matrix @ x
    phi, phi1d, _ = fs.solve_potentials(system, rhs, tol=1e-12, method=method)
    got = np.concatenate([phi.ravel(), phi1d.ravel()])
    assert np.max(np.abs(got - x)) <= 1e-7 * max(1.0, np.max(np.abs(x)))
    assert abs(w @ got) <= 1e-10


def test_zero_mean_gauge(setup):
    _, _, system = setup
    rng = np.random.default_rng(5)
    rhs = rng.standard_normal(system.ndof)
    phi, phi1d, _ = fs.solve_potentials(system, rhs)
    got = np.concatenate([phi.ravel(), phi1d.ravel()])
    assert abs(system.kernel_mode @ got) <= 1e-9


def test_cg_stagnation_raises(setup):
    _, _, system = setup
    rng = np.random.default_rng(6)
    rhs = rng.standard_normal(system.ndof)
    with pytest.raises(SolverStagnation):
        fs.solve_potentials(system, rhs, tol=1e-14, maxiter=2, method="cg")


def test_dimension_mismatch(setup):
    _, _, system = setup
    with pytest.raises(DimensionMismatch):
        fs.solve_potentials(system, np.zeros(system.ndof + 1))


def test_empty_curve_system():
    mesh = build_mesh(Polyline([]), 0.25, 3)
    ops = fs.build_field_ops(mesh)
    system = fs.assemble_matrix(mesh, 1.0, 1.0, ops=ops)
    assert system.ndof_c == 0
    ones = np.ones(system.ndof)
    assert np.max(np.abs(system.matrix @ ones)) <= 1e-12
    rng = np.random.default_rng(7)
    x = rng.standard_normal(system.ndof)
    x -= system.kernel_mode * (system.kernel_mode @ x)
    phi, _, _ = fs.solve_potentials(system, system.matrix @ x, method="tensor")
    assert np.max(np.abs(phi.ravel() - x)) <= 1e-8
