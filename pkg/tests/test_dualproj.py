import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathflow import dualproj as dp
from pathflow import oracle as oc

# Frozen from the bisection oracle (tests/test_oracle.py checks the oracle itself).
ROOT_X3_3X_2 = 0.5960716379833215    # x^3 + 3x - 2
ROOT_X3_X_1 = 0.6823278038280193     # x^3 + x - 1


class TestBulk:
    def test_already_feasible(self):
        r, j = dp.project_bulk(-1.0, np.array([0.0, 0.0]))
        assert r == -1.0 and np.all(j == 0.0)

    def test_boundary_point(self):
        r, j = dp.project_bulk(0.0, np.array([0.0, 0.0]))
        assert r == 0.0 and np.all(j == 0.0)

    def test_infeasible_example(self):
        r, j = dp.project_bulk(0.5, np.array([1.0, 0.0]), tol=1e-14)
        assert abs(j[0] - ROOT_X3_3X_2) < 1e-12
        assert abs(r - (-0.5 * ROOT_X3_3X_2**2)) < 1e-12
        assert abs(j[1]) == 0.0

    def test_zero_flux_infeasible(self):
        r, j = dp.project_bulk(2.0, np.array([0.0, 0.0]))
        assert r == 0.0 and np.all(j == 0.0)

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
    @settings(max_examples=300, deadline=None)
    def test_feasibility_and_idempotence(self, er, jx, jy):
        r, j = dp.project_bulk(er, np.array([jx, jy]))
        assert dp.bulk_feasibility(r, j) <= 1e-10
        r2, j2 = dp.project_bulk(r, j)
        assert abs(r2 - r) <= 1e-10 and np.all(np.abs(j2 - j) <= 1e-10)

    def test_rotation_isotropy(self):
        rng = np.random.default_rng(7)
        er = rng.uniform(-5, 5, 200)
        ej = rng.uniform(-5, 5, (200, 2))
        ang = 1.2345
        R = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        r1, j1 = dp.project_bulk(er, ej, tol=1e-14)
        r2, j2 = dp.project_bulk(er, ej @ R.T, tol=1e-14)
        assert np.allclose(r2, r1, atol=1e-12)
        assert np.allclose(j2, j1 @ R.T, atol=1e-12)

    def test_matches_bisection_oracle(self):
        rng = np.random.default_rng(11)
        er = rng.uniform(-10, 10, 500)
        ej = rng.uniform(-10, 10, (500, 2))
        rs, js = dp.project_bulk(er, ej, tol=1e-14)
        for k in range(500):
            ro, jo = oc.project_bulk_reference(er[k], ej[k], tol=0.0)
            assert abs(ro - rs[k]) <= 1e-12
            assert np.all(np.abs(jo - js[k]) <= 1e-12)

    def test_spec_bracket_counterexample_covered(self):
        # root ~4.48 exceeds the plain cube-root bracket; the augmented
        # bracket still captures it
        r, j = dp.project_bulk(-10.0, np.array([4.5, 0.0]), tol=1e-14)
        resid = j[0] ** 3 + 2 * (1 - 10.0) * j[0] - 2 * 4.5
        assert abs(resid) < 1e-9
        assert dp.bulk_feasibility(r, j) <= 1e-10


class TestCurve:
    def test_positive_axis_projects_to_origin(self):
        assert dp.project_curve(1.0, 0.0, 0.0, 1.0, 1.0) == (0.0, 0.0, 0.0)

    def test_strictly_feasible_passthrough(self):
        assert dp.project_curve(-5.0, 0.1, 0.1, 1.0, 1.0) == (-5.0, 0.1, 0.1)

    def test_symmetric_example(self):
        mu, v, f = dp.project_curve(0.0, 1.0, 1.0, 1.0, 1.0, tol=1e-14)
        assert abs(v - ROOT_X3_X_1) < 1e-12
        assert abs(f - ROOT_X3_X_1) < 1e-12
        assert abs(mu - (-(ROOT_X3_X_1**2))) < 1e-12

    def test_sign_conventions(self):
        mu, v, f = dp.project_curve(0.5, -2.0, -3.0, 1.0, 1.0)
        assert v < 0 and f < 0
        mu2, v2, f2 = dp.project_curve(0.5, 2.0, 3.0, 1.0, 1.0)
        assert mu2 == mu and v2 == -v and f2 == -f

    @given(
        st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10),
        st.floats(0.1, 10), st.floats(0.1, 10),
    )
    @settings(max_examples=300, deadline=None)
    def test_feasibility_and_idempotence(self, em, ev, ef, a1, a2):
        mu, v, f = dp.project_curve(em, ev, ef, a1, a2)
        assert dp.curve_feasibility(mu, v, f, a1, a2) <= 1e-10
        mu2, v2, f2 = dp.project_curve(mu, v, f, a1, a2)
        assert abs(mu2 - mu) <= 1e-10 and abs(v2 - v) <= 1e-10 and abs(f2 - f) <= 1e-10

    def test_matches_multiplier_bisection_oracle(self):
        rng = np.random.default_rng(13)
        em = rng.uniform(-10, 10, 500)
        ev = rng.uniform(-10, 10, 500)
        ef = rng.uniform(-10, 10, 500)
        a1, a2 = 0.7, 1.9
        ms, vs, fs = dp.project_curve(em, ev, ef, a1, a2, tol=1e-14)
        for k in range(500):
            mo, vo, fo = oc.project_curve_reference(em[k], ev[k], ef[k], a1, a2)
            assert abs(mo - ms[k]) <= 1e-12
            assert abs(vo - vs[k]) <= 1e-12
            assert abs(fo - fs[k]) <= 1e-12

    def test_kkt_residual(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            em, ev, ef = rng.uniform(-5, 5, 3)
            a1, a2 = rng.uniform(0.2, 5, 2)
            mu, v, f = dp.project_curve(em, ev, ef, a1, a2, tol=1e-12)
            if em + 0.5 * (ev**2 / a1 + ef**2 / a2) <= 0:
                continue
            x, y = abs(v), f
            r1 = x**3 + (a1 / a2) * x * y**2 + 2 * (a1**2 + a1 * em) * x - 2 * a1**2 * abs(ev)
            r2 = y**3 + (a2 / a1) * x**2 * y + 2 * (a2**2 + a2 * em) * y - 2 * a2**2 * ef
            scale = max(1.0, a1**2, a2**2) * max(1.0, abs(em), abs(ev), abs(ef)) ** 3
            assert abs(r1) <= 1e-9 * scale
            assert abs(r2) <= 1e-9 * scale


def test_grid_oracle_nearest_point_bulk():
    """Dense 1-D grid search over the boundary parametrization."""
    rng = np.random.default_rng(3)
    n = 50
    er = rng.uniform(-10, 10, n)
    ej = rng.uniform(-10, 10, (n, 2))
    rs, js = dp.project_bulk(er, ej, tol=1e-14)
    for k in range(n):
        a = np.linalg.norm(ej[k])
        if er[k] + 0.5 * a * a <= 0:
            continue
        xs = np.arange(0.0, a + 2.0, 1e-3)
        d2 = ((-0.5 * xs**2) - er[k]) ** 2 + (xs - a) ** 2
        x_best = xs[np.argmin(d2)]
        assert abs(np.linalg.norm(js[k]) - x_best) <= 2e-3


def test_grid_oracle_nearest_point_curve():
    rng = np.random.default_rng(5)
    n = 25
    em = rng.uniform(-6, 6, n)
    ev = rng.uniform(-6, 6, n)
    ef = rng.uniform(-6, 6, n)
    a1, a2 = 1.3, 0.6
    ms, vs, fs = dp.project_curve(em, ev, ef, a1, a2, tol=1e-14)
    for k in range(n):
        if em[k] + 0.5 * (ev[k] ** 2 / a1 + ef[k] ** 2 / a2) <= 0:
            continue
        xs = np.arange(0.0, abs(ev[k]) + 1e-3, 1e-3)
        ys = np.arange(0.0, abs(ef[k]) + 1e-3, 1e-3) * np.sign(ef[k] if ef[k] != 0 else 1.0)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        MU = -0.5 * (X**2 / a1 + Y**2 / a2)
        D2 = (MU - em[k]) ** 2 + (X - abs(ev[k])) ** 2 + (Y - ef[k]) ** 2
        i, j = np.unravel_index(np.argmin(D2), D2.shape)
        assert abs(abs(vs[k]) - X[i, j]) <= 2e-3
        assert abs(fs[k] - Y[i, j]) <= 2e-3
