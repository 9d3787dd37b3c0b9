"""Self-avoidance regularizer for polylines: repulsive kernel over
non-adjacent segment pairs, endpoint-separation log barrier, and length."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CurveSelfIntersection
from .geometry import Polyline

CLOSED_CURVE_EPS = 1e-12
DEFAULT_FD_EPS = 1e-4


@dataclass(frozen=True)
class RegularizerValue:
    tpe: float
    endpoint_log: float
    length: float

    @property
    def total(self) -> float:
        return self.tpe + self.endpoint_log + self.length


def tangent_point_radius(x, tau, y) -> float:
    """Radius of the circle tangent to the curve at x passing through y.

    Returns 0 for coincident points and +inf when x - y is parallel to the
    tangent; the planar points are treated in the 3-D zero extension, so the
    cross product reduces to the scalar z-component.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    tau = np.asarray(tau, dtype=float)
    nt = np.linalg.norm(tau)
    if nt == 0.0:
        raise ValueError("tangent must be nonzero")
    tau = tau / nt
    d = y - x
    nd2 = float(d @ d)
    if nd2 == 0.0:
        return 0.0
    cross = abs(tau[0] * d[1] - tau[1] * d[0])
    if cross == 0.0:
        return np.inf
    return nd2 / (2.0 * cross)


def _pair_kernel(points: np.ndarray, p: float):
    """Kernel matrix k[i, j] over segment pairs, corner-averaged.

    k[i, j] = (1/4) sum over the four corner pairs (x, y) of
    |tau_i x (x - y)|^p / |x - y|^(2p); adjacent and equal pairs are zeroed.
    """
    n = len(points) - 1
    a = points[:-1]
    b = points[1:]
    d = b - a
    lens = np.linalg.norm(d, axis=1)
    if np.any(lens <= 0.0):
        raise CurveSelfIntersection("zero-length segment")
    tau = d / lens[:, None]

    k = np.zeros((n, n))
    for xi in (a, b):
        for yj in (a, b):
            diff = xi[:, None, :] - yj[None, :, :]
            dist2 = np.einsum("ijk,ijk->ij", diff, diff)
            cross = np.abs(tau[:, None, 0] * diff[:, :, 1] - tau[:, None, 1] * diff[:, :, 0])
            with np.errstate(divide="ignore", invalid="ignore"):
                term = np.where(dist2 > 0.0, cross**p / dist2**p, 0.0)
            k += term
    k *= 0.25
    # Segments sharing a vertex (|i-j| <= 1) are excluded: that is where the
    # corner distances vanish and the continuous integrand is singular.
    idx = np.arange(n)
    mask = np.abs(idx[:, None] - idx[None, :]) >= 2
    return k * mask, lens, tau


def discrete_regularizer(curve: Polyline, p: float = 3.0) -> RegularizerValue:
    """Evaluate the regularizer on a polyline.

    A closed polyline (coincident endpoints) flags endpoint_log = +inf rather
    than raising.
    """
    if p <= 2:
        raise ValueError("kernel exponent must exceed 2")
    if curve.n_segments < 1:
        raise ValueError("polyline needs at least one segment")
    k, lens, _ = _pair_kernel(curve.points, p)
    tpe = float(lens @ k @ lens)
    gap = float(np.linalg.norm(curve.points[0] - curve.points[-1]))
    endpoint_log = np.inf if gap < CLOSED_CURVE_EPS else -float(np.log(gap))
    return RegularizerValue(tpe=tpe, endpoint_log=endpoint_log, length=float(lens.sum()))


def fd_gradient_reg(curve: Polyline, p: float = 3.0, eps: float = DEFAULT_FD_EPS):
    """Central differences of the regularizer total per control coordinate.

    Returns (grad, valid): components where either perturbed polyline fails
    validation are flagged invalid (grad entry 0) rather than fatal.
    """
    coords = curve.flat_coords()
    grad = np.zeros_like(coords)
    valid = np.ones(len(coords), dtype=bool)
    for i in range(len(coords)):
        vals = []
        for sign in (+1.0, -1.0):
            pert = coords.copy()
            pert[i] += sign * eps
            cand = curve.with_flat_coords(pert)
            try:
                cand.validate()
                vals.append(discrete_regularizer(cand, p).total)
            except CurveSelfIntersection:
                vals = None
                break
        if vals is None or not all(np.isfinite(v) for v in vals):
            valid[i] = False
            continue
        grad[i] = (vals[0] - vals[1]) / (2.0 * eps)
    return grad, valid
