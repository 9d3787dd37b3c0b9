"""Independent verification tools: exact small-instance optimal transport,
mass-conservation checks, and bisection oracles for the pointwise projections."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import Infeasible, NoBracket
from .geometry import SpaceTimeMesh
from .transport import BoundaryData, PrimalState, slab_masses

MASS_MATCH_TOL = 1e-12
_PIVOT_CAP = 200_000
_CERT_TOL = 1e-9


@dataclass
class DiscreteMeasurePair:
    """Two discrete measures on 2-D support points, equal total mass."""

    points_a: np.ndarray
    weights_a: np.ndarray
    points_b: np.ndarray
    weights_b: np.ndarray

    def __post_init__(self):
        self.points_a = np.asarray(self.points_a, dtype=float).reshape(-1, 2)
        self.points_b = np.asarray(self.points_b, dtype=float).reshape(-1, 2)
        self.weights_a = np.asarray(self.weights_a, dtype=float).ravel()
        self.weights_b = np.asarray(self.weights_b, dtype=float).ravel()
        if np.any(self.weights_a < 0) or np.any(self.weights_b < 0):
            raise ValueError("weights must be nonnegative")


def _northwest_corner(a, b):
    n, m = len(a), len(b)
    ra, rb = a.copy(), b.copy()
    flow = {}
    basis = []
    i = j = 0
    while True:
        f = min(ra[i], rb[j])
        flow[(i, j)] = f
        basis.append((i, j))
        ra[i] -= f
        rb[j] -= f
        if i == n - 1 and j == m - 1:
            break
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    return flow, basis


def _potentials(basis, C, n, m):
    """Dual potentials from the spanning-tree basis (u[0] anchored at 0)."""
    adj = [[] for _ in range(n + m)]
    for i, j in basis:
        adj[i].append(n + j)
        adj[n + j].append(i)
    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    u[0] = 0.0
    queue = deque([0])
    seen = np.zeros(n + m, dtype=bool)
    seen[0] = True
    while queue:
        node = queue.popleft()
        for other in adj[node]:
            if seen[other]:
                continue
            seen[other] = True
            if node < n:
                v[other - n] = C[node, other - n] - u[node]
            else:
                u[other] = C[other, node - n] - v[node - n]
            queue.append(other)
    return u, v


def _tree_path(basis, n, m, src, dst):
    """Node path src -> dst through the basis tree."""
    adj = [[] for _ in range(n + m)]
    for i, j in basis:
        adj[i].append(n + j)
        adj[n + j].append(i)
    parent = {src: None}
    queue = deque([src])
    while queue:
        node = queue.popleft()
        if node == dst:
            break
        for other in adj[node]:
            if other not in parent:
                parent[other] = node
                queue.append(other)
    path = [dst]
    while path[-1] != src:
        path.append(parent[path[-1]])
    path.reverse()
    return path


def transportation_simplex(a, b, C):
    """Exact solve of min <C, F> s.t. F 1 = a, F^T 1 = b, F >= 0.

    Supplies get a tiny strictly-increasing perturbation so the northwest
    start is nondegenerate and pivoting cannot cycle.  Returns
    (flow dict, u, v) with the duals of the final basis.
    """
    a = np.asarray(a, dtype=float).copy()
    b = np.asarray(b, dtype=float).copy()
    n, m = len(a), len(b)
    eps = 1e-13 / max(n, m)
    a += (np.arange(n) + 1) * eps
    extra = eps * n * (n + 1) / 2.0
    b += extra * (np.arange(m) + 1) / (m * (m + 1) / 2.0)

    flow, basis = _northwest_corner(a, b)
    scale = max(float(np.max(np.abs(C))), 1.0)
    enter_tol = 1e-12 * scale
    for _ in range(_PIVOT_CAP):
        u, v = _potentials(basis, C, n, m)
        rc = C - u[:, None] - v[None, :]
        i_star, j_star = np.unravel_index(np.argmin(rc), rc.shape)
        if rc[i_star, j_star] >= -enter_tol:
            return flow, u, v
        path = _tree_path(basis, n, m, i_star, n + j_star)
        cells = []
        for k in range(len(path) - 1):
            x, y = path[k], path[k + 1]
            cells.append((x, y - n) if x < n else (y, x - n))
        theta = np.inf
        leave_idx = -1
        for pos in range(0, len(cells), 2):  # minus positions
            fval = flow[cells[pos]]
            if fval < theta:
                theta = fval
                leave_idx = pos
        for pos, cell in enumerate(cells):
            flow[cell] += -theta if pos % 2 == 0 else theta
        leaving = cells[leave_idx]
        del flow[leaving]
        basis.remove(leaving)
        basis.append((int(i_star), int(j_star)))
        flow[(int(i_star), int(j_star))] = theta
    raise RuntimeError("transportation simplex exceeded its pivot cap")


def w2_squared_lp(pair: DiscreteMeasurePair) -> float:
    """Squared 2-Wasserstein cost between the two measures, certified optimal.

    The optimum is the infimum of sum |x - y|^2 over transport plans; duals
    from the final basis certify it (reduced costs >= -1e-9, complementary
    slackness residual <= 1e-9).
    """
    ma, mb = float(pair.weights_a.sum()), float(pair.weights_b.sum())
    if abs(ma - mb) > MASS_MATCH_TOL:
        raise Infeasible(f"total masses differ: {ma!r} vs {mb!r}")
    diff = pair.points_a[:, None, :] - pair.points_b[None, :, :]
    C = np.einsum("ijk,ijk->ij", diff, diff)
    flow, u, v = transportation_simplex(pair.weights_a, pair.weights_b, C)
    rc = C - u[:, None] - v[None, :]
    scale = max(float(np.max(np.abs(C))), 1.0)
    if rc.min() < -_CERT_TOL * scale:
        raise RuntimeError(f"dual certificate failed: min reduced cost {rc.min():.3g}")
    slack = sum(f * abs(rc[cell]) for cell, f in flow.items())
    if slack > _CERT_TOL * scale:
        raise RuntimeError(f"complementary slackness residual {slack:.3g}")
    return float(sum(f * C[cell] for cell, f in flow.items()))


def check_mass_conservation(state: PrimalState, mesh: SpaceTimeMesh,
                            data: BoundaryData | None = None):
    """Per-slab bulk + curve mass and its maximum deviation from 1."""
    masses = slab_masses(state, mesh)
    deviation = float(np.max(np.abs(masses - 1.0))) if masses.size else 0.0
    return masses, deviation


def bracketed_root(coeffs, bracket, tol: float = 1e-13) -> float:
    """Bisection root of the polynomial with highest-degree-first coeffs.

    Requires a sign change on the bracket; the returned residual satisfies
    |p(x)| <= tol * scale(coefficients).
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    poly = np.asarray(coeffs, dtype=float)

    def f(x):
        return float(np.polyval(poly, x))

    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        raise NoBracket(f"no sign change on [{lo}, {hi}]")
    scale = max(1.0, float(np.max(np.abs(poly))))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol * scale or hi - lo <= 1e-17 * max(1.0, abs(mid)):
            return mid
        if (fm > 0) == (fhi > 0):
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


def project_bulk_reference(eta_rho: float, eta_j, tol: float = 1e-13):
    """Bisection counterpart of the bulk projection (test oracle)."""
    eta_j = np.asarray(eta_j, dtype=float)
    a = float(np.linalg.norm(eta_j))
    if eta_rho + 0.5 * a * a <= 0.0:
        return float(eta_rho), eta_j.copy()
    if a == 0.0:
        x = 0.0 if 1.0 + eta_rho >= 0.0 else float(np.sqrt(-2.0 * (1.0 + eta_rho)))
        return -0.5 * x * x, np.zeros(2)
    hi = float(np.cbrt(2.0 * a) + np.sqrt(max(0.0, -2.0 * (1.0 + eta_rho))) + 2.0)
    x = bracketed_root([1.0, 0.0, 2.0 * (1.0 + eta_rho), -2.0 * a], (0.0, hi), tol=tol)
    return -0.5 * x * x, x * eta_j / a


def project_curve_reference(eta_mu: float, eta_v: float, eta_f: float,
                            alpha1: float, alpha2: float, tol: float = 1e-14):
    """Multiplier-bisection counterpart of the curve projection (test oracle).

    On the active constraint the optimality conditions collapse to a single
    strictly decreasing scalar equation in the multiplier lam:
        g(lam) = eta_mu - lam + (x(lam)^2/alpha1 + y(lam)^2/alpha2) / 2
    with x(lam) = alpha1 |eta_v| / (alpha1 + lam), y(lam) = alpha2 eta_f /
    (alpha2 + lam); bisect g to machine precision.
    """
    if eta_mu + 0.5 * (eta_v**2 / alpha1 + eta_f**2 / alpha2) <= 0.0:
        return float(eta_mu), float(eta_v), float(eta_f)
    sv = abs(eta_v)

    def g(lam):
        x = alpha1 * sv / (alpha1 + lam)
        y = alpha2 * eta_f / (alpha2 + lam)
        return eta_mu - lam + 0.5 * (x * x / alpha1 + y * y / alpha2)

    lo = 0.0
    hi = max(1.0, eta_mu + 0.5 * (sv**2 / alpha1 + eta_f**2 / alpha2))
    while g(hi) > 0.0:
        hi *= 2.0
        if hi > 1e30:
            raise NoBracket("multiplier bracket exploded")
    for _ in range(500):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    lam = 0.5 * (lo + hi)
    x = alpha1 * sv / (alpha1 + lam)
    y = alpha2 * eta_f / (alpha2 + lam)
    mu = -0.5 * (x * x / alpha1 + y * y / alpha2)
    return float(mu), float(np.sign(eta_v) * x), float(y)


def project_curve_symmetric(eta_mu: float, s: float, alpha: float, tol: float = 1e-13):
    """Symmetric reduction x = y for alpha1 = alpha2 = alpha, |eta_v| = eta_f = s."""
    if eta_mu + s * s / alpha <= 0.0:
        return float(eta_mu), float(s), float(s)
    coeffs = [2.0 / alpha, 0.0, 2.0 * (alpha + eta_mu), -2.0 * alpha * s]
    hi = float(np.cbrt(alpha * alpha * s) + np.sqrt(max(0.0, -alpha * (alpha + eta_mu))) + 2.0)
    x = bracketed_root(coeffs, (0.0, hi), tol=tol)
    return -x * x / alpha, x, x


def atomize_nodal(values: np.ndarray, points: np.ndarray, lumped: np.ndarray,
                  max_atoms: int):
    """Collapse a nodal density into <= max_atoms weighted atoms.

    Nodes are binned on a uniform grid; each nonempty bin becomes one atom at
    the bin's center of mass with the summed lumped mass.
    """
    w = values * lumped
    keep = w > 0.0
    w = w[keep]
    pts = points[keep]
    if len(w) <= max_atoms:
        return pts.copy(), w.copy()
    k = int(np.floor(np.sqrt(max_atoms)))
    ix = np.minimum((pts[:, 0] * k).astype(int), k - 1)
    iy = np.minimum((pts[:, 1] * k).astype(int), k - 1)
    bins = ix * k + iy
    order = np.argsort(bins, kind="stable")
    bins_sorted = bins[order]
    uniq, starts = np.unique(bins_sorted, return_index=True)
    out_pts = np.zeros((len(uniq), 2))
    out_w = np.zeros(len(uniq))
    bounds = np.append(starts, len(bins_sorted))
    for bi in range(len(uniq)):
        sel = order[bounds[bi]:bounds[bi + 1]]
        ws = w[sel]
        out_w[bi] = ws.sum()
        out_pts[bi] = (pts[sel] * ws[:, None]).sum(axis=0) / out_w[bi]
    return out_pts, out_w


def atomize_boundary_end(rho, mu, mesh: SpaceTimeMesh, lumped_b, lumped_c, max_atoms: int):
    """Atomize one end's bulk + curve densities into a single point cloud."""
    pts_b, w_b = atomize_nodal(rho, mesh.vertices, lumped_b, max_atoms)
    if mesh.n_curve_vertices and np.any(mu > 0):
        pts_c, w_c = atomize_nodal(
            mu, mesh.vertices[mesh.curve_vertices], lumped_c, max(max_atoms // 4, 16)
        )
        return np.vstack([pts_b, pts_c]), np.concatenate([w_b, w_c])
    return pts_b, w_b
