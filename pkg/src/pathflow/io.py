"""Bit-stable CSV/JSON serialization of fields, traces and summaries."""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import IoError
from .geometry import SpaceTimeMesh
from .transport import PrimalState, SolveReport

FLOAT_FMT = "{:.17g}"


def _fmt(x) -> str:
    return FLOAT_FMT.format(float(x))


def _open_out(outdir, name):
    try:
        os.makedirs(outdir, exist_ok=True)
        return open(os.path.join(outdir, name), "w", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoError(f"cannot write {name} in {outdir}: {exc}") from exc


def write_bulk_fields(state: PrimalState, mesh: SpaceTimeMesh, outdir):
    bary = mesh.tri_barycenters()
    rho = state.rho.reshape(mesh.n_t, mesh.n_triangles)
    J = state.J.reshape(mesh.n_t, mesh.n_triangles, 2)
    with _open_out(outdir, "bulk_fields.csv") as fh:
        fh.write("t_index,tri_id,bary_x,bary_y,rho,Jx,Jy\n")
        for t in range(mesh.n_t):
            for k in range(mesh.n_triangles):
                fh.write(
                    f"{t},{k},{_fmt(bary[k, 0])},{_fmt(bary[k, 1])},"
                    f"{_fmt(rho[t, k])},{_fmt(J[t, k, 0])},{_fmt(J[t, k, 1])}\n"
                )


def write_curve_fields(state: PrimalState, mesh: SpaceTimeMesh, outdir):
    ne = mesh.n_curve_edges
    s_mid = 0.5 * (mesh.arclengths[:-1] + mesh.arclengths[1:]) if ne else np.zeros(0)
    mu = state.mu.reshape(mesh.n_t, ne) if ne else None
    V = state.V.reshape(mesh.n_t, ne) if ne else None
    f = state.f.reshape(mesh.n_t, ne) if ne else None
    with _open_out(outdir, "curve_fields.csv") as fh:
        fh.write("t_index,seg_id,s_mid,mu,V,f\n")
        for t in range(mesh.n_t):
            for e in range(ne):
                fh.write(
                    f"{t},{e},{_fmt(s_mid[e])},{_fmt(mu[t, e])},"
                    f"{_fmt(V[t, e])},{_fmt(f[t, e])}\n"
                )


def write_cost_trace(report: SolveReport, outdir):
    with _open_out(outdir, "cost_trace.csv") as fh:
        fh.write("iter,err_omega,err_gamma,action\n")
        for it, err_o, err_g, action in report.cost_trace:
            fh.write(f"{it},{_fmt(err_o)},{_fmt(err_g)},{_fmt(action)}\n")


def write_curve_evolution(trace, outdir):
    """One row per (outer iteration, control point); header-only when no trace."""
    with _open_out(outdir, "curve_evolution.csv") as fh:
        fh.write("outer_iter,point_idx,x,y\n")
        if trace is None:
            return
        for row in trace.rows:
            for idx, (x, y) in enumerate(row.curve_points):
                fh.write(f"{row.outer_iter},{idx},{_fmt(x)},{_fmt(y)}\n")


def write_summary(summary: dict, outdir):
    with _open_out(outdir, "summary.json") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_outputs(state: PrimalState, report: SolveReport, mesh: SpaceTimeMesh,
                  outdir, trace=None, summary: dict | None = None):
    """Emit the full output set for one run."""
    write_bulk_fields(state, mesh, outdir)
    write_curve_fields(state, mesh, outdir)
    write_cost_trace(report, outdir)
    write_curve_evolution(trace, outdir)
    write_summary(summary or {}, outdir)


def append_sweep(outdir, alpha, action, share, header=False):
    mode = "w" if header else "a"
    try:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "sweep.csv"), mode, encoding="utf-8", newline="\n") as fh:
            if header:
                fh.write("alpha,action,curve_flux_share\n")
            else:
                fh.write(f"{_fmt(alpha)},{_fmt(action)},{_fmt(share)}\n")
    except OSError as exc:
        raise IoError(f"cannot write sweep.csv: {exc}") from exc
