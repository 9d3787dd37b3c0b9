"""Render solver CSV outputs into the standard figure set.

Inputs are the delimited files a run directory contains (bulk_fields.csv,
curve_fields.csv, cost_trace.csv, curve_evolution.csv, summary.json, and
optionally mesh_triangles.csv for exact triangle patches).  Output is one
PNG per requested timestep for bulk and curve densities, a cost trace, and
the curve-evolution overlay when snapshots exist.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import LineCollection, PolyCollection


class RenderError(RuntimeError):
    """Missing input file or schema mismatch."""


@dataclass
class FigureSpec:
    in_dir: str
    times: tuple = (0.2, 0.5, 0.8)
    bounds_mode: str = "shared"   # shared | per-frame
    fmt: str = "png"
    dpi: int = 150
    evolution_stride: int = 20

    def __post_init__(self):
        if self.bounds_mode not in ("shared", "per-frame"):
            raise RenderError(f"unknown bounds mode {self.bounds_mode!r}")


_FIGSIZE = (4.0, 4.0)
_TRACE_FIGSIZE = (6.0, 4.0)
_META = {"Software": None}  # keep PNGs byte-stable across matplotlib patch levels


def _read_csv(path, required):
    if not os.path.exists(path):
        raise RenderError(f"missing input file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise RenderError(f"{path}: empty file") from None
        for col in required:
            if col not in header:
                raise RenderError(f"{path}: missing column {col!r}")
        idx = [header.index(c) for c in required]
        rows = [[float(r[i]) for i in idx] for r in reader]
    data = np.array(rows) if rows else np.zeros((0, len(required)))
    return {c: data[:, k] for k, c in enumerate(required)}


def _slab_index(t: float, n_t: int) -> int:
    return min(max(int(np.floor(t * n_t)), 0), n_t - 1)


def _curve_segments(in_dir):
    """Curve edges as coordinate pairs, from the mesh dump when present."""
    path = os.path.join(in_dir, "mesh_triangles.csv")
    if not os.path.exists(path):
        return None
    cols = ["tri_id", "v0x", "v0y", "v1x", "v1y", "v2x", "v2y", "on_curve_edge_mask"]
    d = _read_csv(path, cols)
    segs = []
    corners = np.stack(
        [np.column_stack([d["v0x"], d["v0y"]]),
         np.column_stack([d["v1x"], d["v1y"]]),
         np.column_stack([d["v2x"], d["v2y"]])], axis=1)
    masks = d["on_curve_edge_mask"].astype(int)
    for tri, mask in zip(corners, masks):
        for bit, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
            if mask & (1 << bit):
                segs.append([tri[a], tri[b]])
    return segs


def _triangle_patches(in_dir):
    path = os.path.join(in_dir, "mesh_triangles.csv")
    if not os.path.exists(path):
        return None
    cols = ["tri_id", "v0x", "v0y", "v1x", "v1y", "v2x", "v2y", "on_curve_edge_mask"]
    d = _read_csv(path, cols)
    order = np.argsort(d["tri_id"].astype(int))
    return np.stack(
        [np.column_stack([d["v0x"], d["v0y"]])[order],
         np.column_stack([d["v1x"], d["v1y"]])[order],
         np.column_stack([d["v2x"], d["v2y"]])[order]], axis=1)


def render_run(spec: FigureSpec, out_dir: str) -> list:
    """Render the figure set; returns the written file paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    bulk = _read_csv(os.path.join(spec.in_dir, "bulk_fields.csv"),
                     ["t_index", "tri_id", "bary_x", "bary_y", "rho", "Jx", "Jy"])
    n_t = int(bulk["t_index"].max()) + 1 if len(bulk["t_index"]) else 0
    if n_t == 0:
        raise RenderError("bulk_fields.csv: no rows")
    slabs = [_slab_index(t, n_t) for t in spec.times]
    for t, s in zip(spec.times, slabs):
        if not np.any(bulk["t_index"] == s):
            raise RenderError(f"timestep {t} (slab {s}) not present in bulk_fields.csv")

    patches = _triangle_patches(spec.in_dir)
    curve_segs = _curve_segments(spec.in_dir)
    rho_frames = []
    for s in slabs:
        sel = bulk["t_index"] == s
        order = np.argsort(bulk["tri_id"][sel].astype(int))
        rho_frames.append((bulk["bary_x"][sel][order], bulk["bary_y"][sel][order],
                           bulk["rho"][sel][order]))
    if spec.bounds_mode == "shared":
        vmin = min(f[2].min() for f in rho_frames)
        vmax = max(f[2].max() for f in rho_frames)
    for t, (bx, by, rho) in zip(spec.times, rho_frames):
        if spec.bounds_mode == "per-frame":
            vmin, vmax = rho.min(), rho.max()
        fig, ax = plt.subplots(figsize=_FIGSIZE)
        if patches is not None and len(patches) == len(rho):
            coll = PolyCollection(patches, array=rho, cmap="viridis",
                                  edgecolors="none")
            coll.set_clim(vmin, vmax)
            ax.add_collection(coll)
        else:
            ax.tripcolor(bx, by, rho, shading="gouraud", cmap="viridis",
                         vmin=vmin, vmax=vmax)
        if curve_segs:
            ax.add_collection(LineCollection(curve_segs, colors="white", linewidths=1.2))
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_aspect("equal")
        ax.set_title(f"bulk density, t={t:g}")
        fig.colorbar(
            plt.cm.ScalarMappable(
                norm=plt.Normalize(vmin, vmax), cmap="viridis"), ax=ax)
        path = os.path.join(out_dir, f"bulk_density_t{t:g}.{spec.fmt}")
        fig.savefig(path, dpi=spec.dpi, metadata=_META)
        plt.close(fig)
        written.append(path)

    curve = _read_csv(os.path.join(spec.in_dir, "curve_fields.csv"),
                      ["t_index", "seg_id", "s_mid", "mu", "V", "f"])
    has_curve = len(curve["t_index"]) > 0
    if has_curve:
        mu_frames = []
        for t, s in zip(spec.times, slabs):
            sel = curve["t_index"] == s
            if not np.any(sel):
                raise RenderError(f"timestep {t} (slab {s}) not present in curve_fields.csv")
            order = np.argsort(curve["s_mid"][sel])
            mu_frames.append((curve["s_mid"][sel][order], curve["mu"][sel][order]))
        if spec.bounds_mode == "shared":
            ymax = max(f[1].max() for f in mu_frames)
            ymin = min(0.0, min(f[1].min() for f in mu_frames))
        for t, (s_mid, mu) in zip(spec.times, mu_frames):
            if spec.bounds_mode == "per-frame":
                ymin, ymax = min(0.0, mu.min()), mu.max()
            fig, ax = plt.subplots(figsize=_FIGSIZE)
            ax.plot(s_mid, mu, lw=1.5)
            pad = 0.05 * max(ymax - ymin, 1e-12)
            ax.set_ylim(ymin - pad, ymax + pad)
            ax.set_xlabel("arclength")
            ax.set_title(f"curve density, t={t:g}")
            path = os.path.join(out_dir, f"curve_density_t{t:g}.{spec.fmt}")
            fig.savefig(path, dpi=spec.dpi, metadata=_META)
            plt.close(fig)
            written.append(path)

    trace = _read_csv(os.path.join(spec.in_dir, "cost_trace.csv"),
                      ["iter", "err_omega", "err_gamma", "action"])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=_TRACE_FIGSIZE)
    if len(trace["iter"]):
        ax1.semilogy(trace["iter"], trace["err_omega"] + trace["err_gamma"], lw=1.2)
        ax2.plot(trace["iter"], trace["action"], lw=1.2)
    ax1.set_title("total residual")
    ax2.set_title("action")
    ax1.set_xlabel("iteration")
    ax2.set_xlabel("iteration")
    fig.tight_layout()
    path = os.path.join(out_dir, f"cost_trace.{spec.fmt}")
    fig.savefig(path, dpi=spec.dpi, metadata=_META)
    plt.close(fig)
    written.append(path)

    evo = _read_csv(os.path.join(spec.in_dir, "curve_evolution.csv"),
                    ["outer_iter", "point_idx", "x", "y"])
    if len(evo["outer_iter"]) == 0:
        print("curve_evolution.csv has no snapshots; skipping evolution figure")
        return written
    iters = np.unique(evo["outer_iter"].astype(int))
    shown = [k for k in iters if k % spec.evolution_stride == 0]
    if iters[-1] not in shown:
        shown.append(iters[-1])
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    cmap = plt.get_cmap("viridis")
    span = max(shown[-1], 1)
    for k in shown:
        sel = evo["outer_iter"] == k
        order = np.argsort(evo["point_idx"][sel])
        ax.plot(evo["x"][sel][order], evo["y"][sel][order],
                color=cmap(k / span), lw=1.0)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_aspect("equal")
    ax.set_title(f"curve evolution (every {spec.evolution_stride}th)")
    path = os.path.join(out_dir, f"curve_evolution.{spec.fmt}")
    fig.savefig(path, dpi=spec.dpi, metadata=_META)
    plt.close(fig)
    written.append(path)
    return written
