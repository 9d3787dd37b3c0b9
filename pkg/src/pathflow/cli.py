"""Command-line entry point: solve | optimize | sweep-alpha | oracle-w2.

Exit codes: 0 success, 2 config validation, 3 solver failure, 4 geometry.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import femspace, io, oracle, pathopt, transport
from .config import RunConfig, dump_config, load_config
from .errors import (
    ConfigError,
    CurveSelfIntersection,
    Infeasible,
    MeshingFailure,
    NewtonDivergence,
    PathflowError,
    SolverStagnation,
    ZeroMass,
)
from .geometry import Polyline, build_mesh, dump_mesh


def _ends(cfg: RunConfig):
    e0 = transport.GaussianEnd(cfg.initial.bumps, cfg.initial.placement)
    e1 = transport.GaussianEnd(cfg.final.bumps, cfg.final.placement)
    return e0, e1


def _solver_config(cfg: RunConfig, **overrides) -> transport.SolverConfig:
    base = dict(
        alpha1=cfg.alpha1, alpha2=cfg.alpha2, r1=cfg.r1, r2=cfg.r2,
        tol=cfg.tol, it_max=cfg.it_max, solver_tol=cfg.solver_tol,
        linear_solver=cfg.linear_solver,
    )
    base.update(overrides)
    return transport.SolverConfig(**base)


def _base_summary(cfg: RunConfig, report, mass_dev) -> dict:
    return {
        "action": report.action,
        "iterations": report.iterations,
        "converged": report.converged,
        "err": report.err,
        "mass_deviation": mass_dev,
        "config": json.loads(dump_config(cfg)),
    }


def run_solve(cfg: RunConfig, outdir: str) -> dict:
    e0, e1 = _ends(cfg)
    state, report, mesh, _ = transport.solve_fixed_curve(
        Polyline(cfg.curve), e0, e1, cfg.h, cfg.n_t, _solver_config(cfg))
    _, dev = oracle.check_mass_conservation(state, mesh)
    summary = _base_summary(cfg, report, dev)
    io.write_outputs(state, report, mesh, outdir, trace=None, summary=summary)
    dump_mesh(mesh, f"{outdir}/mesh_triangles.csv")
    return summary


def run_optimize(cfg: RunConfig, outdir: str) -> dict:
    e0, e1 = _ends(cfg)
    po = cfg.pathopt
    opt_cfg = pathopt.PathOptConfig(
        eps_fd=po.eps_fd, step0=po.step0, c0=po.c0, c_low=po.c_low,
        n_iter=po.n_iter, it_max=po.it_max, inner_alg_iters=po.inner_alg_iters,
        tol=po.tol, p=po.p, delta=cfg.delta,
    )
    curve, trace, state, mesh = pathopt.optimize_path(
        Polyline(cfg.curve), e0, e1, cfg.h, cfg.n_t, _solver_config(cfg), opt_cfg)
    # Final report for the cost trace: re-solve records on the final mesh.
    ops = femspace.build_field_ops(mesh)
    data = transport.make_boundary_data(e0, e1, mesh, ops=ops)
    state, _, report, _, _ = transport.solve_on_mesh(mesh, data, _solver_config(cfg), ops=ops)
    _, dev = oracle.check_mass_conservation(state, mesh)
    summary = _base_summary(cfg, report, dev)
    summary["final_curve"] = [[float(x), float(y)] for x, y in curve.points]
    summary["outer_iterations"] = len(trace.rows) - 1
    summary["initial_total_cost"] = trace.rows[0].total_cost
    summary["final_total_cost"] = trace.rows[-1].total_cost
    if trace.stall_reason:
        summary["stall_reason"] = trace.stall_reason
    io.write_outputs(state, report, mesh, outdir, trace=trace, summary=summary)
    dump_mesh(mesh, f"{outdir}/mesh_triangles.csv")
    return summary


def run_sweep(cfg: RunConfig, outdir: str) -> dict:
    e0, e1 = _ends(cfg)
    mesh = build_mesh(Polyline(cfg.curve), cfg.h, cfg.n_t)
    ops = femspace.build_field_ops(mesh)
    data = transport.make_boundary_data(e0, e1, mesh, ops=ops)
    system = femspace.assemble_matrix(mesh, cfg.r1, cfg.r2, ops=ops)
    io.append_sweep(outdir, 0, 0, 0, header=True)
    rows = []
    last = None
    for alpha in cfg.sweep_alphas:
        scfg = _solver_config(cfg, alpha1=alpha, alpha2=alpha)
        state, _, report, _, _ = transport.solve_on_mesh(
            mesh, data, scfg, ops=ops, system=system)
        share = transport.curve_flux_share(state, mesh)
        io.append_sweep(outdir, alpha, report.action, share)
        rows.append({"alpha": alpha, "action": report.action, "curve_flux_share": share})
        last = (state, report)
    state, report = last
    _, dev = oracle.check_mass_conservation(state, mesh)
    summary = _base_summary(cfg, report, dev)
    summary["sweep"] = rows
    io.write_outputs(state, report, mesh, outdir, trace=None, summary=summary)
    dump_mesh(mesh, f"{outdir}/mesh_triangles.csv")
    return summary


def run_oracle_w2(cfg: RunConfig, outdir: str) -> dict:
    e0, e1 = _ends(cfg)
    mesh = build_mesh(Polyline(cfg.curve), cfg.h, cfg.n_t)
    ops = femspace.build_field_ops(mesh)
    data = transport.make_boundary_data(e0, e1, mesh, ops=ops)
    lump_b = np.asarray(ops.M.sum(axis=1)).ravel()
    lump_c = np.asarray(ops.Mc.sum(axis=1)).ravel() if mesh.n_curve_vertices else np.zeros(0)
    pa, wa = oracle.atomize_boundary_end(data.rho0, data.mu0, mesh, lump_b, lump_c, cfg.max_atoms)
    pb, wb = oracle.atomize_boundary_end(data.rho1, data.mu1, mesh, lump_b, lump_c, cfg.max_atoms)
    wa /= wa.sum()
    wb /= wb.sum()
    w2 = oracle.w2_squared_lp(oracle.DiscreteMeasurePair(pa, wa, pb, wb))
    summary = {
        "w2_squared": w2,
        "atoms_initial": int(len(wa)),
        "atoms_final": int(len(wb)),
        "config": json.loads(dump_config(cfg)),
    }
    io.write_summary(summary, outdir)
    return summary


_RUNNERS = {
    "solve": run_solve,
    "optimize": run_optimize,
    "sweep-alpha": run_sweep,
    "oracle-w2": run_oracle_w2,
}


def run(cfg: RunConfig, outdir: str | None = None) -> dict:
    """Dispatch a validated config; returns the summary dict."""
    return _RUNNERS[cfg.mode](cfg, outdir or cfg.out_dir)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pathflow",
        description="Dynamic optimal transport on a bulk domain coupled to a curve",
    )
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in _RUNNERS:
        p = sub.add_parser(mode)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if cfg.mode != args.mode:
            cfg.mode = args.mode
            # re-validate mode-specific blocks under the requested mode
            from .config import config_from_dict
            raw = json.loads(dump_config(cfg))
            raw["mode"] = args.mode
            cfg = config_from_dict(raw)
        summary = run(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SolverStagnation, NewtonDivergence, ZeroMass, Infeasible) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except (CurveSelfIntersection, MeshingFailure) as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return 4
    except PathflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    if not args.quiet:
        print(json.dumps({k: v for k, v in summary.items() if k != "config"},
                         indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
