"""Pointwise projection of provisional duals onto the parabolic feasibility sets.

Bulk cells are projected onto {a + |b|^2/2 <= 0}, curve cells onto
{a + (b^2/alpha1 + c^2/alpha2)/2 <= 0}.  Feasible inputs pass through
unchanged; infeasible ones land on the boundary via the KKT root systems,
solved by a bracketed Newton iteration (bulk cubic) and a damped 2x2 Newton
with a coordinate-bisection fallback (curve system).
"""

from __future__ import annotations

import numpy as np

from .errors import NewtonDivergence

DEFAULT_TOL = 1e-10
_MAX_NEWTON = 100


def _bulk_root_bracket(eta_rho, a):
    """Upper bracket for the positive root of x^3 + 2(1+eta_rho)x - 2a = 0.

    For b := 1 + eta_rho < 0 the root can exceed the cube-root scale, so the
    bracket carries an extra sqrt(-2b) margin.
    """
    return np.cbrt(2.0 * a) + np.sqrt(np.maximum(0.0, -2.0 * (1.0 + eta_rho))) + 2.0


def _guarded_newton_cubic(p, q, hi, tol):
    """Positive root of x^3 + p x - q (q >= 0), Newton with bisection safeguard.

    Stops when the residual falls below tol (scaled by the term magnitudes)
    or the iterate reaches the floating-point floor.
    """
    lo = np.zeros_like(p)
    hi = hi.copy()
    x = np.minimum(np.cbrt(q), hi)
    done = np.zeros_like(p, dtype=bool)
    for _ in range(_MAX_NEWTON):
        f = x * x * x + p * x - q
        lo = np.where(~done & (f < 0.0), x, lo)
        hi = np.where(~done & (f > 0.0), x, hi)
        df = 3.0 * x * x + p
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(df > 0.0, f / np.where(df > 0.0, df, 1.0), np.inf)
        x_new = x - step
        bad = ~np.isfinite(x_new) | (x_new <= lo) | (x_new >= hi)
        x_new = np.where(bad, 0.5 * (lo + hi), x_new)
        scale = 1.0 + np.abs(p) * x + q + x * x * x
        done |= (np.abs(f) <= tol * scale) | (np.abs(x_new - x) <= 1e-16 * (1.0 + x)) | (
            hi - lo <= 1e-16 * (1.0 + hi)
        )
        if np.all(done):
            break
        x = np.where(done, x, x_new)
    return x


def project_bulk(eta_rho, eta_j, tol: float = DEFAULT_TOL):
    """Project bulk cells; accepts scalars or arrays.

    Returns (rho_star, j_star) with rho_star shaped like eta_rho and j_star
    carrying a trailing length-2 axis.
    """
    scalar = np.isscalar(eta_rho) or np.ndim(eta_rho) == 0
    er = np.atleast_1d(np.asarray(eta_rho, dtype=float))
    ej = np.asarray(eta_j, dtype=float).reshape(len(er), 2)
    a = np.linalg.norm(ej, axis=1)

    rho_star = er.copy()
    j_star = ej.copy()
    infeas = er + 0.5 * a * a > 0.0
    if np.any(infeas):
        er_i = er[infeas]
        a_i = a[infeas]
        x = np.zeros_like(er_i)
        with_flux = a_i > 0.0
        if np.any(with_flux):
            p = 2.0 * (1.0 + er_i[with_flux])
            q = 2.0 * a_i[with_flux]
            hi = _bulk_root_bracket(er_i[with_flux], a_i[with_flux])
            x[with_flux] = _guarded_newton_cubic(p, q, hi, tol)
        # a = 0: the cubic factors as x (x^2 + 2(1+eta_rho)); any direction
        # collapses, so j_star = 0.
        no_flux = ~with_flux
        x[no_flux] = np.where(
            1.0 + er_i[no_flux] >= 0.0,
            0.0,
            np.sqrt(np.maximum(0.0, -2.0 * (1.0 + er_i[no_flux]))),
        )
        rho_star[infeas] = -0.5 * x * x
        dirs = np.zeros((infeas.sum(), 2))
        safe = a_i > 0.0
        dirs[safe] = ej[infeas][safe] / a_i[safe, None]
        j_star[infeas] = x[:, None] * dirs
    if scalar:
        return float(rho_star[0]), j_star[0]
    return rho_star, j_star


def _curve_scaled_residual(x, y, eta_mu, eta_v_abs, eta_f, a1, a2):
    """Residual of the KKT system scaled to gradient form (symmetric Jacobian)."""
    g1 = x**3 / (2.0 * a1 * a1) + x * y * y / (2.0 * a1 * a2) + (1.0 + eta_mu / a1) * x - eta_v_abs
    g2 = y**3 / (2.0 * a2 * a2) + x * x * y / (2.0 * a1 * a2) + (1.0 + eta_mu / a2) * y - eta_f
    return g1, g2


def _curve_residual_scale(x, y, eta_mu, eta_v_abs, eta_f, a1, a2):
    s1 = (
        np.abs(x) ** 3 / (2 * a1 * a1)
        + np.abs(x) * y * y / (2 * a1 * a2)
        + (1.0 + np.abs(eta_mu) / a1) * np.abs(x)
        + eta_v_abs
    )
    s2 = (
        np.abs(y) ** 3 / (2 * a2 * a2)
        + x * x * np.abs(y) / (2 * a1 * a2)
        + (1.0 + np.abs(eta_mu) / a2) * np.abs(y)
        + np.abs(eta_f)
    )
    return 1.0 + s1, 1.0 + s2


def _scalar_curve_cubic(eta_mu, rhs, alpha, tol):
    """Root of y^3 + 2(alpha^2 + alpha*eta_mu) y = 2 alpha^2 rhs, signed rhs."""
    sign = np.sign(rhs)
    q = 2.0 * alpha * alpha * np.abs(rhs)
    p = 2.0 * (alpha * alpha + alpha * eta_mu)
    hi = np.cbrt(q) + np.sqrt(np.maximum(0.0, -p)) + 2.0
    return sign * _guarded_newton_cubic(np.broadcast_to(p, q.shape).copy(), q, hi, tol)


def _coordinate_bisection_sweep(x, y, eta_mu, sv, ef, a1, a2, tol, sweeps=200):
    """Alternate exact 1-D solves of the two KKT cubics; emergency fallback."""
    for _ in range(sweeps):
        # x-cubic: x^3 + (a1/a2) x y^2 + 2(a1^2 + a1 eta_mu) x = 2 a1^2 sv
        p = (a1 / a2) * y * y + 2.0 * (a1 * a1 + a1 * eta_mu)
        q = 2.0 * a1 * a1 * sv
        hi = np.cbrt(np.maximum(q, 0.0)) + np.sqrt(np.maximum(0.0, -p)) + 2.0
        x = _guarded_newton_cubic(p, q, hi, tol)
        p = (a2 / a1) * x * x + 2.0 * (a2 * a2 + a2 * eta_mu)
        q = 2.0 * a2 * a2 * np.abs(ef)
        hi = np.cbrt(q) + np.sqrt(np.maximum(0.0, -p)) + 2.0
        y = np.sign(ef) * _guarded_newton_cubic(p, q, hi, tol)
        g1, g2 = _curve_scaled_residual(x, y, eta_mu, sv, ef, a1, a2)
        s1, s2 = _curve_residual_scale(x, y, eta_mu, sv, ef, a1, a2)
        if np.all((np.abs(g1) <= tol * s1) & (np.abs(g2) <= tol * s2)):
            return x, y
    res = float(np.max(np.abs(np.concatenate([g1, g2]))))
    raise NewtonDivergence("curve projection fallback did not converge", residual=res)


def project_curve(eta_mu, eta_v, eta_f, alpha1: float, alpha2: float, tol: float = DEFAULT_TOL):
    """Project curve cells; accepts scalars or arrays.

    The scalar momentum keeps the sign of eta_v; the exchange component keeps
    the sign of eta_f.
    """
    if alpha1 <= 0 or alpha2 <= 0:
        raise ValueError("alpha1 and alpha2 must be positive")
    scalar = np.isscalar(eta_mu) or np.ndim(eta_mu) == 0
    em = np.atleast_1d(np.asarray(eta_mu, dtype=float))
    ev = np.atleast_1d(np.asarray(eta_v, dtype=float))
    ef = np.atleast_1d(np.asarray(eta_f, dtype=float))

    mu_star = em.copy()
    v_star = ev.copy()
    f_star = ef.copy()
    infeas = em + 0.5 * (ev * ev / alpha1 + ef * ef / alpha2) > 0.0
    if np.any(infeas):
        m = em[infeas]
        sv = np.abs(ev[infeas])
        sgn_v = np.sign(ev[infeas])
        f = ef[infeas]
        x, y = _solve_curve_kkt(m, sv, f, alpha1, alpha2, tol)
        mu_star[infeas] = -0.5 * (x * x / alpha1 + y * y / alpha2)
        v_star[infeas] = sgn_v * x
        f_star[infeas] = y
    if scalar:
        return float(mu_star[0]), float(v_star[0]), float(f_star[0])
    return mu_star, v_star, f_star


def _solve_curve_kkt(eta_mu, sv, ef, a1, a2, tol):
    """Nonnegative x and signed y solving the coupled KKT cubics."""
    # Degenerate rays reduce to a single scalar cubic.
    x = np.zeros_like(eta_mu)
    y = np.zeros_like(eta_mu)
    only_f = (sv == 0.0) & (ef != 0.0)
    only_v = (ef == 0.0) & (sv != 0.0)
    both = (sv != 0.0) & (ef != 0.0)
    if np.any(only_f):
        y[only_f] = _scalar_curve_cubic(eta_mu[only_f], ef[only_f], a2, tol)
    if np.any(only_v):
        x[only_v] = np.abs(_scalar_curve_cubic(eta_mu[only_v], sv[only_v], a1, tol))
    if np.any(both):
        xb, yb = _curve_newton_2x2(eta_mu[both], sv[both], ef[both], a1, a2, tol)
        x[both] = xb
        y[both] = yb
    return x, y


def _curve_newton_2x2(eta_mu, sv, ef, a1, a2, tol):
    tol = max(tol, 1e-15)  # below the attainable floating-point floor
    x = sv.copy()
    y = ef.copy()
    g1, g2 = _curve_scaled_residual(x, y, eta_mu, sv, ef, a1, a2)
    merit = g1 * g1 + g2 * g2
    settled = np.zeros_like(x, dtype=bool)
    for _ in range(_MAX_NEWTON):
        s1, s2 = _curve_residual_scale(x, y, eta_mu, sv, ef, a1, a2)
        active = ~settled & ((np.abs(g1) > tol * s1) | (np.abs(g2) > tol * s2))
        if not np.any(active):
            break
        j11 = 3.0 * x * x / (2 * a1 * a1) + y * y / (2 * a1 * a2) + 1.0 + eta_mu / a1
        j12 = x * y / (a1 * a2)
        j22 = 3.0 * y * y / (2 * a2 * a2) + x * x / (2 * a1 * a2) + 1.0 + eta_mu / a2
        det = j11 * j22 - j12 * j12
        det = np.where(np.abs(det) < 1e-300, 1e-300, det)
        dx = -(j22 * g1 - j12 * g2) / det
        dy = -(j11 * g2 - j12 * g1) / det
        # Halving line search on the residual merit, with x kept >= 0.
        t = np.where(active, 1.0, 0.0)
        improved = ~active
        for _ in range(40):
            trial_x = np.maximum(x + t * dx, 0.0)
            trial_y = y + t * dy
            t1, t2 = _curve_scaled_residual(trial_x, trial_y, eta_mu, sv, ef, a1, a2)
            trial_merit = t1 * t1 + t2 * t2
            accept = active & ~improved & (trial_merit < merit)
            x = np.where(accept, trial_x, x)
            y = np.where(accept, trial_y, y)
            merit = np.where(accept, trial_merit, merit)
            improved |= accept
            if np.all(improved):
                break
            t = np.where(improved, 0.0, 0.5 * t)
        stuck = active & ~improved
        if np.any(stuck):
            # No merit decrease possible: either at the floating-point floor
            # (accept as settled) or genuinely stuck (bisection sweep).
            at_floor = stuck & (np.abs(g1) <= 1e-12 * s1) & (np.abs(g2) <= 1e-12 * s2)
            settled |= at_floor
            hard = stuck & ~at_floor
            if np.any(hard):
                xs, ys = _coordinate_bisection_sweep(
                    x[hard], y[hard], eta_mu[hard], sv[hard], ef[hard], a1, a2, tol
                )
                x[hard] = xs
                y[hard] = ys
                settled |= hard
        g1, g2 = _curve_scaled_residual(x, y, eta_mu, sv, ef, a1, a2)
        merit = g1 * g1 + g2 * g2
    return x, y


def bulk_feasibility(rho_star, j_star):
    """Constraint value a + |b|^2/2; <= 0 is feasible."""
    j = np.asarray(j_star, dtype=float)
    return np.asarray(rho_star) + 0.5 * np.sum(np.atleast_2d(j) ** 2, axis=-1).reshape(
        np.shape(rho_star)
    )


def curve_feasibility(mu_star, v_star, f_star, alpha1, alpha2):
    """Constraint value a + (b^2/alpha1 + c^2/alpha2)/2; <= 0 is feasible."""
    return np.asarray(mu_star) + 0.5 * (
        np.asarray(v_star) ** 2 / alpha1 + np.asarray(f_star) ** 2 / alpha2
    )
