"""Polyline curves and conforming space-time meshes of the unit square.

The spatial mesh is a Delaunay triangulation of a structured background grid
plus the polyline vertices, refined until every polyline sub-segment is an
edge of the triangulation.  Time is a uniform partition of [0, 1]; prisms are
the implicit (slab, triangle) and (slab, curve-edge) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import CurveSelfIntersection, MeshingFailure

DEFAULT_DELTA = 0.05

# Background grid spacing as a fraction of the target mesh size.  Grid points
# closer than _CULL_FRACTION * spacing to the curve are dropped so curve edges
# have an empty diametral disc with respect to the grid.
_GRID_FRACTION = 0.5
_CULL_FRACTION = 0.45
_CURVE_SPLIT_FRACTION = 0.8  # of the background spacing
_MAX_RECOVERY_ROUNDS = 12
_MIN_ANGLE_DEG = 1.0


class Polyline:
    """Ordered 2-D control points; segments are the consecutive chords."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 2)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("polyline points must be an (n, 2) array")
        self.points = pts

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_segments(self) -> int:
        return max(len(self.points) - 1, 0)

    @property
    def is_empty(self) -> bool:
        return self.n_segments == 0

    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    def tangents(self) -> np.ndarray:
        """Unit tangent per segment, oriented with increasing parameter."""
        d = np.diff(self.points, axis=0)
        lens = np.linalg.norm(d, axis=1)
        if np.any(lens <= 0.0):
            raise CurveSelfIntersection("zero-length segment")
        return d / lens[:, None]

    def length(self) -> float:
        return float(self.segment_lengths().sum())

    def translated(self, v) -> "Polyline":
        return Polyline(self.points + np.asarray(v, dtype=float))

    def with_flat_coords(self, coords) -> "Polyline":
        """Rebuild from the interleaved [x0, y0, x1, y1, ...] layout."""
        return Polyline(np.asarray(coords, dtype=float).reshape(-1, 2))

    def flat_coords(self) -> np.ndarray:
        return self.points.reshape(-1).copy()

    def validate(self):
        """Raise CurveSelfIntersection on degenerate or crossing segments."""
        if self.is_empty:
            return
        pts = self.points
        lens = self.segment_lengths()
        if np.any(lens <= 0.0):
            raise CurveSelfIntersection("repeated consecutive point")
        n = self.n_segments
        for i in range(n):
            a0, a1 = pts[i], pts[i + 1]
            for j in range(i + 1, n):
                b0, b1 = pts[j], pts[j + 1]
                if j == i + 1:
                    # Adjacent segments share a vertex; forbid folding back
                    # onto each other beyond the shared point.
                    if _segments_overlap_collinear(a0, a1, b0, b1):
                        raise CurveSelfIntersection(
                            f"segments {i} and {j} overlap along a line"
                        )
                    continue
                if _segments_intersect(a0, a1, b0, b1):
                    raise CurveSelfIntersection(f"segments {i} and {j} intersect")

    def in_box(self, delta: float) -> bool:
        if self.n_points == 0:
            return True
        return bool(
            np.all(self.points >= delta - 1e-15) and np.all(self.points <= 1.0 - delta + 1e-15)
        )


def project_box(curve: Polyline, delta: float) -> Polyline:
    """Clamp every coordinate into [delta, 1 - delta] componentwise."""
    if not 0.0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 0.5)")
    return Polyline(np.clip(curve.points, delta, 1.0 - delta))


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p) -> bool:
    return (
        min(a[0], b[0]) - 1e-15 <= p[0] <= max(a[0], b[0]) + 1e-15
        and min(a[1], b[1]) - 1e-15 <= p[1] <= max(a[1], b[1]) + 1e-15
    )


def _segments_intersect(a0, a1, b0, b1) -> bool:
    """Closed-segment intersection test (touching counts)."""
    d1 = _orient(b0, b1, a0)
    d2 = _orient(b0, b1, a1)
    d3 = _orient(a0, a1, b0)
    d4 = _orient(a0, a1, b1)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    if d1 == 0 and _on_segment(b0, b1, a0):
        return True
    if d2 == 0 and _on_segment(b0, b1, a1):
        return True
    if d3 == 0 and _on_segment(a0, a1, b0):
        return True
    if d4 == 0 and _on_segment(a0, a1, b1):
        return True
    return False


def _segments_overlap_collinear(a0, a1, b0, b1) -> bool:
    """True when two collinear segments share more than a single point."""
    if abs(_orient(a0, a1, b0)) > 1e-15 or abs(_orient(a0, a1, b1)) > 1e-15:
        return False
    d = a1 - a0
    axis = 0 if abs(d[0]) >= abs(d[1]) else 1
    ia = sorted((a0[axis], a1[axis]))
    ib = sorted((b0[axis], b1[axis]))
    lo, hi = max(ia[0], ib[0]), min(ia[1], ib[1])
    return hi - lo > 1e-15


@dataclass(frozen=True)
class SpaceTimeMesh:
    """Conforming triangulation of [0,1]^2 with the curve embedded as edges,
    extruded in time by ``n_t`` uniform slabs."""

    vertices: np.ndarray          # (nv, 2)
    triangles: np.ndarray         # (ntri, 3) vertex indices, CCW
    curve: Polyline               # the polyline the mesh conforms to
    curve_vertices: np.ndarray    # ordered bulk vertex ids along the curve
    curve_edge_seg: np.ndarray    # polyline segment id per curve edge
    h: float
    n_t: int

    tri_areas: np.ndarray = field(init=False, repr=False)
    curve_edge_lengths: np.ndarray = field(init=False, repr=False)
    arclengths: np.ndarray = field(init=False, repr=False)  # cumulative, per curve vertex

    def __post_init__(self):
        v = self.vertices
        t = self.triangles
        areas = 0.5 * np.abs(
            (v[t[:, 1], 0] - v[t[:, 0], 0]) * (v[t[:, 2], 1] - v[t[:, 0], 1])
            - (v[t[:, 1], 1] - v[t[:, 0], 1]) * (v[t[:, 2], 0] - v[t[:, 0], 0])
        )
        object.__setattr__(self, "tri_areas", areas)
        cv = self.curve_vertices
        if len(cv) >= 2:
            seglen = np.linalg.norm(v[cv[1:]] - v[cv[:-1]], axis=1)
        else:
            seglen = np.zeros(0)
        object.__setattr__(self, "curve_edge_lengths", seglen)
        object.__setattr__(self, "arclengths", np.concatenate([[0.0], np.cumsum(seglen)]))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_curve_vertices(self) -> int:
        return len(self.curve_vertices)

    @property
    def n_curve_edges(self) -> int:
        return max(len(self.curve_vertices) - 1, 0)

    @property
    def dt(self) -> float:
        return 1.0 / self.n_t

    @property
    def n_bulk_prisms(self) -> int:
        return self.n_t * self.n_triangles

    @property
    def n_curve_prisms(self) -> int:
        return self.n_t * self.n_curve_edges

    def curve_edge_endpoints(self) -> np.ndarray:
        """(n_curve_edges, 2) bulk vertex index pairs, oriented along the curve."""
        cv = self.curve_vertices
        return np.stack([cv[:-1], cv[1:]], axis=1) if len(cv) >= 2 else np.zeros((0, 2), int)

    def tri_barycenters(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def curve_edge_midpoints(self) -> np.ndarray:
        ep = self.curve_edge_endpoints()
        return 0.5 * (self.vertices[ep[:, 0]] + self.vertices[ep[:, 1]])

    def edge_set(self) -> set:
        edges = set()
        for tri in self.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                edges.add((min(a, b), max(a, b)))
        return edges


def _split_polyline(curve: Polyline, max_len: float):
    """Subdivide every segment into chords of length <= max_len.

    Returns (points (m,2), seg_id (m-1,), is_control (m,)): the refined chain,
    the owning polyline segment per chord, and a flag marking original points.
    """
    pts = [curve.points[0]]
    seg_ids = []
    is_control = [True]
    for i in range(curve.n_segments):
        p0, p1 = curve.points[i], curve.points[i + 1]
        n_sub = max(int(np.ceil(np.linalg.norm(p1 - p0) / max_len)), 1)
        for k in range(1, n_sub + 1):
            t = k / n_sub
            pts.append(p0 + t * (p1 - p0))
            seg_ids.append(i)
            is_control.append(k == n_sub)
    return np.array(pts), np.array(seg_ids, dtype=int), np.array(is_control, dtype=bool)


def _point_segment_distance(points, a, b) -> np.ndarray:
    """Distance from each row of ``points`` to the segment [a, b]."""
    d = b - a
    denom = float(d @ d)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ d / denom, 0.0, 1.0)
    proj = a + t[:, None] * d
    return np.linalg.norm(points - proj, axis=1)


def _min_angles(vertices, triangles) -> np.ndarray:
    p = vertices[triangles]
    angs = np.empty((len(triangles), 3))
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        w = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", u, w) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1)
        )
        angs[:, k] = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return angs.min(axis=1)


def build_mesh(curve: Polyline, h: float, n_t: int) -> SpaceTimeMesh:
    """Triangulate [0,1]^2 so the polyline is a union of triangle edges.

    Polyline segments longer than the background spacing are subdivided; a
    curve chord still missing from the Delaunay triangulation is midpoint-split
    and the point set re-triangulated until the whole chain conforms.
    """
    if not 0.0 < h <= 0.5:
        raise ValueError("h must lie in (0, 0.5]")
    if n_t < 1:
        raise ValueError("n_t must be >= 1")
    curve.validate()

    spacing = _GRID_FRACTION * h
    n_cells = int(np.ceil(1.0 / spacing))
    g = 1.0 / n_cells
    axis = np.linspace(0.0, 1.0, n_cells + 1)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])

    if curve.is_empty:
        chain = np.zeros((0, 2))
        chain_seg = np.zeros(0, dtype=int)
    else:
        chain, chain_seg, _ = _split_polyline(curve, _CURVE_SPLIT_FRACTION * g)
        keep = np.ones(len(grid), dtype=bool)
        cull = _CULL_FRACTION * g
        for i in range(curve.n_segments):
            keep &= _point_segment_distance(grid, curve.points[i], curve.points[i + 1]) > cull
        grid = grid[keep]

    for _ in range(_MAX_RECOVERY_ROUNDS):
        pts = np.vstack([chain, grid]) if len(chain) else grid
        tri = Delaunay(pts)
        simplices = tri.simplices
        edges = set()
        for t in simplices:
            for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                edges.add((min(a, b), max(a, b)))
        if curve.is_empty:
            missing = []
        else:
            missing = [
                k
                for k in range(len(chain) - 1)
                if (min(k, k + 1), max(k, k + 1)) not in edges
            ]
        if not missing:
            break
        # Split every missing chord at its midpoint and retriangulate.
        new_chain = []
        new_seg = []
        miss = set(missing)
        for k in range(len(chain) - 1):
            new_chain.append(chain[k])
            if k in miss:
                new_chain.append(0.5 * (chain[k] + chain[k + 1]))
                new_seg.append(chain_seg[k])
            new_seg.append(chain_seg[k])
        new_chain.append(chain[-1])
        chain = np.array(new_chain)
        chain_seg = np.array(new_seg, dtype=int)
    else:
        raise MeshingFailure("curve edge recovery did not settle")

    verts = pts
    # Enforce CCW orientation.
    v0 = verts[simplices[:, 0]]
    v1 = verts[simplices[:, 1]]
    v2 = verts[simplices[:, 2]]
    signed = (v1[:, 0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1]) - (v1[:, 1] - v0[:, 1]) * (
        v2[:, 0] - v0[:, 0]
    )
    flip = signed < 0
    simplices = simplices.copy()
    simplices[flip] = simplices[flip][:, [0, 2, 1]]
    if np.any(np.abs(signed) < 1e-16):
        raise MeshingFailure("degenerate (zero-area) triangle produced")
    if _min_angles(verts, simplices).min() < _MIN_ANGLE_DEG:
        raise MeshingFailure("sliver triangle below 1 degree produced")

    mesh = SpaceTimeMesh(
        vertices=verts,
        triangles=simplices,
        curve=curve,
        curve_vertices=np.arange(len(chain), dtype=int),
        curve_edge_seg=chain_seg,
        h=h,
        n_t=n_t,
    )
    _check_mesh(mesh)
    return mesh


def _check_mesh(mesh: SpaceTimeMesh):
    lens = np.linalg.norm(
        mesh.vertices[mesh.triangles] - mesh.vertices[np.roll(mesh.triangles, -1, axis=1)],
        axis=2,
    )
    if lens.max() > mesh.h + 1e-12:
        raise MeshingFailure(f"edge length {lens.max():.3g} exceeds target {mesh.h}")
    if mesh.n_curve_edges:
        edges = mesh.edge_set()
        for a, b in mesh.curve_edge_endpoints():
            if (min(a, b), max(a, b)) not in edges:
                raise MeshingFailure("curve chord missing from triangulation")


def remesh(curve: Polyline, prev: SpaceTimeMesh) -> SpaceTimeMesh:
    """Fresh mesh for a new curve; only h and n_t carry over."""
    return build_mesh(curve, prev.h, prev.n_t)


def segment_chain_lengths(mesh: SpaceTimeMesh) -> np.ndarray:
    """Summed curve-edge lengths per polyline segment."""
    n = mesh.curve.n_segments
    out = np.zeros(n)
    np.add.at(out, mesh.curve_edge_seg, mesh.curve_edge_lengths)
    return out


def dump_mesh(mesh: SpaceTimeMesh, path):
    """Debug CSV: one row per triangle with vertex coords and a 3-bit mask of
    which local edges (01, 12, 20) lie on the curve."""
    curve_edges = {
        (min(a, b), max(a, b)) for a, b in mesh.curve_edge_endpoints()
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("tri_id,v0x,v0y,v1x,v1y,v2x,v2y,on_curve_edge_mask\n")
        for tid, t in enumerate(mesh.triangles):
            mask = 0
            for bit, (a, b) in enumerate(((t[0], t[1]), (t[1], t[2]), (t[2], t[0]))):
                if (min(a, b), max(a, b)) in curve_edges:
                    mask |= 1 << bit
            coords = mesh.vertices[t].reshape(-1)
            fh.write(
                f"{tid},"
                + ",".join(f"{c:.17g}" for c in coords)
                + f",{mask}\n"
            )


def nearest_triangle_map(src: SpaceTimeMesh, dst: SpaceTimeMesh) -> np.ndarray:
    """Index of the src triangle whose barycenter is nearest each dst one."""
    tree = cKDTree(src.tri_barycenters())
    return tree.query(dst.tri_barycenters())[1]


def nearest_curve_edge_map(src: SpaceTimeMesh, dst: SpaceTimeMesh) -> np.ndarray:
    """Match curve edges by midpoint arclength fraction."""
    if src.n_curve_edges == 0 or dst.n_curve_edges == 0:
        return np.zeros(dst.n_curve_edges, dtype=int)
    s_src = 0.5 * (src.arclengths[:-1] + src.arclengths[1:]) / max(src.arclengths[-1], 1e-300)
    s_dst = 0.5 * (dst.arclengths[:-1] + dst.arclengths[1:]) / max(dst.arclengths[-1], 1e-300)
    idx = np.searchsorted(s_src, s_dst)
    idx = np.clip(idx, 0, len(s_src) - 1)
    left = np.clip(idx - 1, 0, len(s_src) - 1)
    pick_left = np.abs(s_src[left] - s_dst) <= np.abs(s_src[idx] - s_dst)
    return np.where(pick_left, left, idx)
