"""Discrete spaces on the space-time prism mesh and the potential solve.

Potentials live in the tensor nodal space (continuous piecewise linear in
time and in space); densities, momenta and the exchange rate are one value
per prism.  The coefficient layout is kron(time, space): bulk dof
``t * nv + v`` and, offset after all bulk dofs, curve dof ``t * nc + c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch, SolverStagnation
from .geometry import SpaceTimeMesh

DIRECT_DOF_LIMIT = 250_000


def spatial_matrices(mesh: SpaceTimeMesh):
    """Consistent P1 mass and stiffness matrices on the triangulation."""
    v = mesh.vertices
    t = mesh.triangles
    areas = mesh.tri_areas
    x = v[t, 0]
    y = v[t, 1]
    # Hat gradient coefficients: grad(lambda_i) = (b_i, c_i) / (2 A).
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)

    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    m_local = (np.ones((3, 3)) + np.eye(3)).ravel() / 12.0
    m_vals = (areas[:, None] * m_local[None, :]).ravel()
    k_vals = (
        (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :])
        / (4.0 * areas[:, None, None])
    ).reshape(len(t), 9).ravel()
    nv = mesh.n_vertices
    M = sp.coo_matrix((m_vals, (rows, cols)), shape=(nv, nv)).tocsr()
    K = sp.coo_matrix((k_vals, (rows, cols)), shape=(nv, nv)).tocsr()
    return M, K


def curve_matrices(mesh: SpaceTimeMesh):
    """1-D P1 mass and stiffness along the curve chain (arclength metric)."""
    nc = mesh.n_curve_vertices
    lens = mesh.curve_edge_lengths
    if nc == 0:
        return sp.csr_matrix((0, 0)), sp.csr_matrix((0, 0))
    ia = np.arange(nc - 1)
    ib = ia + 1
    rows = np.concatenate([ia, ia, ib, ib])
    cols = np.concatenate([ia, ib, ia, ib])
    m_vals = np.concatenate([lens / 3.0, lens / 6.0, lens / 6.0, lens / 3.0])
    k_vals = np.concatenate([1.0 / lens, -1.0 / lens, -1.0 / lens, 1.0 / lens])
    M = sp.coo_matrix((m_vals, (rows, cols)), shape=(nc, nc)).tocsr()
    K = sp.coo_matrix((k_vals, (rows, cols)), shape=(nc, nc)).tocsr()
    return M, K


def time_matrices(n_t: int):
    """1-D P1 mass (Qt) and stiffness (Ct) on the uniform time grid."""
    dt = 1.0 / n_t
    n = n_t + 1
    main_c = np.full(n, 2.0 / dt)
    main_c[0] = main_c[-1] = 1.0 / dt
    off_c = np.full(n - 1, -1.0 / dt)
    Ct = sp.diags([off_c, main_c, off_c], [-1, 0, 1], format="csr")
    main_q = np.full(n, 2.0 * dt / 3.0)
    main_q[0] = main_q[-1] = dt / 3.0
    off_q = np.full(n - 1, dt / 6.0)
    Qt = sp.diags([off_q, main_q, off_q], [-1, 0, 1], format="csr")
    return Ct, Qt


@dataclass
class FieldOps:
    """Sparse prism-mean operators tying nodal potentials to prism fields.

    Each operator maps nodal coefficients to the mean of the named quantity
    over every prism; their transposes (volume-weighted) assemble the dual
    pairings on the right-hand side.
    """

    mesh: SpaceTimeMesh
    Dt_b: sp.csr_matrix
    Gx_b: sp.csr_matrix
    Gy_b: sp.csr_matrix
    Dt_c: sp.csr_matrix
    Gs_c: sp.csr_matrix
    Tr_b: sp.csr_matrix   # curve-prism mean of the bulk trace
    Mean_c: sp.csr_matrix  # curve-prism mean of the curve potential
    vol_b: np.ndarray
    vol_c: np.ndarray
    M: sp.csr_matrix
    K: sp.csr_matrix
    Mc: sp.csr_matrix
    Kc: sp.csr_matrix

    @property
    def ndof_b(self) -> int:
        return (self.mesh.n_t + 1) * self.mesh.n_vertices

    @property
    def ndof_c(self) -> int:
        return (self.mesh.n_t + 1) * self.mesh.n_curve_vertices


def build_field_ops(mesh: SpaceTimeMesh) -> FieldOps:
    nv = mesh.n_vertices
    nc = mesh.n_curve_vertices
    ne = mesh.n_curve_edges
    ntri = mesh.n_triangles
    n_t = mesh.n_t
    dt = mesh.dt
    ndof_b = (n_t + 1) * nv
    ndof_c = (n_t + 1) * nc

    v = mesh.vertices
    t = mesh.triangles
    areas = mesh.tri_areas
    x = v[t, 0]
    y = v[t, 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    gx = b / (2.0 * areas[:, None])
    gy = c / (2.0 * areas[:, None])

    slabs = np.arange(n_t)
    prism = (slabs[:, None] * ntri + np.arange(ntri)[None, :]).ravel()

    # d(phi)/dt averaged over the prism: (1/3) sum_i (phi[n+1,i]-phi[n,i])/dt
    rows_half = np.repeat(prism.reshape(n_t, ntri), 3, axis=1)
    rows = np.concatenate([rows_half, rows_half], axis=1).ravel()
    lower = (slabs[:, None, None] * nv + t[None, :, :]).reshape(n_t, -1)
    upper = ((slabs[:, None, None] + 1) * nv + t[None, :, :]).reshape(n_t, -1)
    cols = np.concatenate([upper, lower], axis=1).ravel()
    vals = np.concatenate(
        [np.full((n_t, 3 * ntri), 1.0 / (3.0 * dt)), np.full((n_t, 3 * ntri), -1.0 / (3.0 * dt))],
        axis=1,
    ).ravel()
    Dt_b = sp.coo_matrix((vals, (rows, cols)), shape=(n_t * ntri, ndof_b)).tocsr()

    # Gradient averaged in time: half weight on each time level.
    half_gx = 0.5 * gx.ravel()
    cols_g = np.concatenate([lower, upper], axis=1).ravel()
    vals_gx = np.concatenate(
        [np.tile(half_gx, n_t).reshape(n_t, -1), np.tile(half_gx, n_t).reshape(n_t, -1)], axis=1
    ).ravel()
    half_gy = 0.5 * gy.ravel()
    vals_gy = np.concatenate(
        [np.tile(half_gy, n_t).reshape(n_t, -1), np.tile(half_gy, n_t).reshape(n_t, -1)], axis=1
    ).ravel()
    Gx_b = sp.coo_matrix((vals_gx, (rows, cols_g)), shape=(n_t * ntri, ndof_b)).tocsr()
    Gy_b = sp.coo_matrix((vals_gy, (rows, cols_g)), shape=(n_t * ntri, ndof_b)).tocsr()

    vol_b = np.tile(areas, n_t) * dt

    if ne:
        lens = mesh.curve_edge_lengths
        ca = np.arange(ne)
        cb = ca + 1
        cprism = (slabs[:, None] * ne + ca[None, :]).ravel()
        rows_c = np.repeat(cprism, 4)

        lo_a = (slabs[:, None] * nc + ca[None, :]).ravel()
        lo_b = (slabs[:, None] * nc + cb[None, :]).ravel()
        hi_a = ((slabs[:, None] + 1) * nc + ca[None, :]).ravel()
        hi_b = ((slabs[:, None] + 1) * nc + cb[None, :]).ravel()

        cols_dt = np.stack([hi_a, hi_b, lo_a, lo_b], axis=1).ravel()
        vals_dt = np.tile([0.5 / dt, 0.5 / dt, -0.5 / dt, -0.5 / dt], n_t * ne)
        Dt_c = sp.coo_matrix((vals_dt, (rows_c, cols_dt)), shape=(n_t * ne, ndof_c)).tocsr()

        inv_l = np.tile(1.0 / lens, n_t)
        cols_gs = np.stack([lo_a, lo_b, hi_a, hi_b], axis=1).ravel()
        vals_gs = np.stack([-0.5 * inv_l, 0.5 * inv_l, -0.5 * inv_l, 0.5 * inv_l], axis=1).ravel()
        Gs_c = sp.coo_matrix((vals_gs, (rows_c, cols_gs)), shape=(n_t * ne, ndof_c)).tocsr()

        vals_mean = np.full(4 * n_t * ne, 0.25)
        Mean_c = sp.coo_matrix((vals_mean, (rows_c, cols_gs)), shape=(n_t * ne, ndof_c)).tocsr()

        bulk_ids = mesh.curve_vertices
        blo_a = (slabs[:, None] * nv + bulk_ids[ca][None, :]).ravel()
        blo_b = (slabs[:, None] * nv + bulk_ids[cb][None, :]).ravel()
        bhi_a = ((slabs[:, None] + 1) * nv + bulk_ids[ca][None, :]).ravel()
        bhi_b = ((slabs[:, None] + 1) * nv + bulk_ids[cb][None, :]).ravel()
        cols_tr = np.stack([blo_a, blo_b, bhi_a, bhi_b], axis=1).ravel()
        Tr_b = sp.coo_matrix((vals_mean, (rows_c, cols_tr)), shape=(n_t * ne, ndof_b)).tocsr()

        vol_c = np.tile(lens, n_t) * dt
    else:
        Dt_c = sp.csr_matrix((0, ndof_c))
        Gs_c = sp.csr_matrix((0, ndof_c))
        Mean_c = sp.csr_matrix((0, ndof_c))
        Tr_b = sp.csr_matrix((0, ndof_b))
        vol_c = np.zeros(0)

    M, K = spatial_matrices(mesh)
    Mc, Kc = curve_matrices(mesh)
    return FieldOps(
        mesh=mesh, Dt_b=Dt_b, Gx_b=Gx_b, Gy_b=Gy_b, Dt_c=Dt_c, Gs_c=Gs_c,
        Tr_b=Tr_b, Mean_c=Mean_c, vol_b=vol_b, vol_c=vol_c, M=M, K=K, Mc=Mc, Kc=Kc,
    )


@dataclass
class SaddleSystem:
    """Symmetric positive semidefinite operator of the potential update.

    The one-dimensional kernel is the joint constant over bulk and curve
    nodal coefficients; solves are performed in its orthogonal complement.
    """

    matrix: sp.csr_matrix
    kernel_mode: np.ndarray
    ndof_b: int
    ndof_c: int
    mesh: SpaceTimeMesh
    ops: "FieldOps" = None
    r1: float = 1.0
    r2: float = 1.0
    _direct: object = field(default=None, repr=False)
    _jacobi: np.ndarray = field(default=None, repr=False)
    _tensor: object = field(default=None, repr=False)

    @property
    def ndof(self) -> int:
        return self.ndof_b + self.ndof_c


def assemble_matrix(mesh: SpaceTimeMesh, r1: float, r2: float, ops: FieldOps | None = None) -> SaddleSystem:
    """Assemble the coupled potential-update operator."""
    if r1 <= 0 or r2 <= 0:
        raise ValueError("penalty weights must be positive")
    if ops is None:
        ops = build_field_ops(mesh)
    Ct, Qt = time_matrices(mesh.n_t)
    ratio = r1 / r2
    A_bb = ratio * (sp.kron(Ct, ops.M) + sp.kron(Qt, ops.K))
    nc = mesh.n_curve_vertices
    if nc:
        S = sp.coo_matrix(
            (np.ones(nc), (np.arange(nc), mesh.curve_vertices)),
            shape=(nc, mesh.n_vertices),
        ).tocsr()
        McS = ops.Mc @ S
        A_bb = A_bb + sp.kron(Qt, S.T @ McS)
        A_bc = -sp.kron(Qt, McS.T)
        A_cc = sp.kron(Ct, ops.Mc) + sp.kron(Qt, ops.Kc) + sp.kron(Qt, ops.Mc)
        A = sp.bmat([[A_bb, A_bc], [A_bc.T, A_cc]], format="csr")
    else:
        A = A_bb.tocsr()
    ndof_b = (mesh.n_t + 1) * mesh.n_vertices
    ndof_c = (mesh.n_t + 1) * nc
    kernel = np.full(ndof_b + ndof_c, 1.0 / np.sqrt(ndof_b + ndof_c))
    return SaddleSystem(matrix=A, kernel_mode=kernel, ndof_b=ndof_b, ndof_c=ndof_c,
                        mesh=mesh, ops=ops, r1=r1, r2=r2)


def _deflate(system: SaddleSystem, vec: np.ndarray) -> np.ndarray:
    w = system.kernel_mode
    return vec - w * (w @ vec)


class _TensorFactor:
    """Exact block solver exploiting the kron(time, space) structure.

    A congruence transform by the generalized eigenvectors of the time pencil
    (Ct, Qt) decouples the coupled system into n_t + 1 independent spatial
    saddle problems, each factored sparsely once.  The zero time eigenvalue
    carries the singular (constant) mode; its spatial block is pinned and the
    dropped equation is restored by compatibility.
    """

    def __init__(self, system: SaddleSystem):
        import scipy.linalg as la

        mesh = system.mesh
        ops = system.ops
        if ops is None:
            raise ValueError("tensor solver needs the system assembled with field ops")
        n_t = mesh.n_t
        Ct, Qt = time_matrices(n_t)
        lam, Z = la.eigh(Ct.toarray(), Qt.toarray())
        lam[np.abs(lam) < 1e-9] = 0.0
        self.Z = Z  # columns: Qt-orthonormal time modes
        self.lam = lam
        self.nv = mesh.n_vertices
        self.nc = mesh.n_curve_vertices
        c = system.r1 / system.r2

        nc = self.nc
        if nc:
            S = sp.coo_matrix(
                (np.ones(nc), (np.arange(nc), mesh.curve_vertices)),
                shape=(nc, self.nv),
            ).tocsr()
            McS = ops.Mc @ S
            T = (S.T @ McS).tocsr()
        self.factors = []
        for k, lk in enumerate(lam):
            top = c * (lk * ops.M + ops.K)
            if nc:
                blk = sp.bmat(
                    [[top + T, -McS.T], [-McS, lk * ops.Mc + ops.Kc + ops.Mc]],
                    format="coo",
                )
            else:
                blk = top.tocoo()
            if lk == 0.0:
                keep = (blk.row != 0) & (blk.col != 0)
                blk = sp.coo_matrix(
                    (
                        np.concatenate([blk.data[keep], [1.0]]),
                        (np.concatenate([blk.row[keep], [0]]),
                         np.concatenate([blk.col[keep], [0]])),
                    ),
                    shape=blk.shape,
                )
            self.factors.append(spla.splu(blk.tocsc()))
        self.zero_modes = [k for k, lk in enumerate(lam) if lk == 0.0]

    def solve(self, rhs: np.ndarray, ndof_b: int) -> np.ndarray:
        nt1 = len(self.lam)
        rb = rhs[:ndof_b].reshape(nt1, self.nv)
        rc = rhs[ndof_b:].reshape(nt1, self.nc)
        # rhs blocks transform by Z^T (they are dual quantities).
        tb = self.Z.T @ rb
        tc = self.Z.T @ rc if self.nc else rc
        xb = np.empty_like(tb)
        xc = np.empty_like(tc)
        for k in range(nt1):
            b = np.concatenate([tb[k], tc[k]]) if self.nc else tb[k].copy()
            if k in self.zero_modes:
                b[0] = 0.0
            x = self.factors[k].solve(b)
            xb[k] = x[: self.nv]
            if self.nc:
                xc[k] = x[self.nv:]
        # Solution blocks transform back by Z.
        out_b = self.Z @ xb
        out_c = self.Z @ xc if self.nc else xc
        return np.concatenate([out_b.ravel(), out_c.ravel()])


def _solve_direct(system: SaddleSystem, rhs: np.ndarray) -> np.ndarray:
    """Exact solve of A x = rhs for deflated rhs.

    One dof is pinned to make the factor nonsingular; the dropped equation is
    implied by compatibility (rhs orthogonal to the kernel), so the result
    solves the full singular system and is then shifted to zero kernel mean.
    """
    if system._direct is None:
        A = system.matrix.tocoo()
        keep = (A.row != 0) & (A.col != 0)
        pinned = sp.coo_matrix(
            (
                np.concatenate([A.data[keep], [1.0]]),
                (np.concatenate([A.row[keep], [0]]), np.concatenate([A.col[keep], [0]])),
            ),
            shape=A.shape,
        ).tocsc()
        system._direct = spla.splu(pinned, permc_spec="MMD_AT_PLUS_A")
    b = rhs.copy()
    b[0] = 0.0
    x = system._direct.solve(b)
    return _deflate(system, x)


def _solve_cg(system: SaddleSystem, rhs: np.ndarray, tol: float, maxiter: int, x0=None):
    """Jacobi-preconditioned CG with the constant mode deflated."""
    A = system.matrix
    if system._jacobi is None:
        d = A.diagonal()
        d[d <= 0] = 1.0
        system._jacobi = 1.0 / d
    inv_d = system._jacobi

    b = _deflate(system, rhs)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    x = np.zeros_like(b) if x0 is None else _deflate(system, x0.copy())
    r = b - A @ x
    z = _deflate(system, inv_d * r)
    p = z.copy()
    rz = r @ z
    target = tol * bnorm
    for it in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= target:
            return _deflate(system, x), it
        z = _deflate(system, inv_d * r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverStagnation(
        f"CG did not reach tol {tol:g} within {maxiter} iterations "
        f"(relres {np.linalg.norm(r)/bnorm:.3g})"
    )


def solve_potentials(
    system: SaddleSystem,
    rhs: np.ndarray,
    tol: float = 1e-8,
    maxiter: int | None = None,
    method: str = "auto",
    x0: np.ndarray | None = None,
):
    """Solve for the nodal potentials; the result has zero joint-constant mean.

    Returns (phi, phi1d, iterations) with phi shaped (n_t+1, nv) and phi1d
    shaped (n_t+1, nc).
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (system.ndof,):
        raise DimensionMismatch(
            f"rhs has {rhs.shape} entries, system expects {system.ndof}"
        )
    if method == "auto":
        method = "tensor" if system.ops is not None else "cg"
    if method == "tensor":
        if system._tensor is None:
            system._tensor = _TensorFactor(system)
        x = system._tensor.solve(_deflate(system, rhs), system.ndof_b)
        x = _deflate(system, x)
        iters = 1
    elif method == "direct":
        x = _solve_direct(system, _deflate(system, rhs))
        x = _deflate(system, x)
        iters = 1
    elif method == "cg":
        if maxiter is None:
            maxiter = 10 * system.ndof
        x, iters = _solve_cg(system, rhs, tol, maxiter, x0=x0)
    else:
        raise ValueError(f"unknown linear solver {method!r}")
    mesh = system.mesh
    nv = mesh.n_vertices
    phi = x[: system.ndof_b].reshape(mesh.n_t + 1, nv)
    phi1d = x[system.ndof_b:].reshape(mesh.n_t + 1, mesh.n_curve_vertices)
    return phi, phi1d, iters


def quadratic_form_parts(system: SaddleSystem, ops: FieldOps, r1: float, r2: float, x: np.ndarray):
    """Exact space-time norms whose sum equals x^T A x; used by tests."""
    mesh = system.mesh
    Ct, Qt = time_matrices(mesh.n_t)
    xb = x[: system.ndof_b]
    xc = x[system.ndof_b:]
    ratio = r1 / r2
    dt_term = ratio * (xb @ (sp.kron(Ct, ops.M) @ xb))
    grad_term = ratio * (xb @ (sp.kron(Qt, ops.K) @ xb))
    if system.ndof_c:
        nc = mesh.n_curve_vertices
        S = sp.coo_matrix(
            (np.ones(nc), (np.arange(nc), mesh.curve_vertices)),
            shape=(nc, mesh.n_vertices),
        ).tocsr()
        trace = (sp.kron(sp.identity(mesh.n_t + 1), S) @ xb) - xc
        trace_term = trace @ (sp.kron(Qt, ops.Mc) @ trace)
        dt_c = xc @ (sp.kron(Ct, ops.Mc) @ xc)
        grad_c = xc @ (sp.kron(Qt, ops.Kc) @ xc)
    else:
        trace_term = dt_c = grad_c = 0.0
    return dt_term, grad_term, dt_c, grad_c, trace_term
