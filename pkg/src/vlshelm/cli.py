"""Command-line entry point.

Subcommands: ``mesh``, ``solve``, ``rom-build``, ``rom-verify``, ``invert`` and
``experiment <name>``. Each reads a JSON ``RunConfig`` (``--config``), writes
its artifacts and CSV reports into ``--output`` together with the resolved
config (``config.resolved.json``), and exits with

* 0 on success,
* 2 on a configuration error,
* 3 on a numerical failure,
* 4 when a verify or experiment command misses its acceptance thresholds.

CSV columns
-----------
solve_report.csv
    k, source, mode, iterations, relative_residual, h1_norm
rom_verify.csv
    matrix, block, relative_error, threshold, passed
inversion_history.csv
    iteration, objective, misfit, grad_norm, step
experiment CSVs
    mms: h, l2_err, h1_err, l2_rate, h1_rate, interpolation columns;
    weak_convergence / collectively_compact: n, e_n, v_n, rho_n;
    h2: k, h, level, ratio. Every row carries the mesh fingerprint.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, InvalidArgumentError, VlsHelmError
from .experiments import (
    collectively_compact_check,
    format_float,
    h2_sweep,
    mms_convergence,
    weak_convergence_study,
)
from .fem import CoefficientField, FunctionSpace, norms
from .forward import HelmholtzProblem, make_background, solve_direct, solve_vls
from .inversion import InversionOptions, ObjectiveConfig, ParamGrid, minimize, misfit
from .io import (
    atomic_write_text,
    load_parameters,
    save_mesh,
    save_parameters,
    save_rom_dataset,
    save_rom_matrices,
    save_wavefield,
)
from .mesh import generate_polygon_disk_mesh, generate_rect_mesh, refine_uniform
from .rom import (
    SourceSet,
    WavenumberGrid,
    assemble_B_from_traces,
    block_relative_errors,
    extract_data,
    generate_snapshots,
    rom_from_data,
    rom_oracle,
)
from .solver import KrylovConfig

__all__ = ["main", "build_parser", "EXPERIMENTS"]

logger = logging.getLogger("vlshelm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_THRESHOLD = 0, 2, 3, 4

ROM_THRESHOLDS = {"offdiag": 1e-6, "diag": 1e-4}
EXPERIMENTS = ("mms", "weak_convergence", "collectively_compact", "h2")


class ThresholdFailure(Exception):
    pass


def build_mesh(cfg: RunConfig):
    d = cfg.domain
    if d.shape == "rect":
        mesh = generate_rect_mesh(d.nx, d.ny, d.width, d.height)
    else:
        mesh = generate_polygon_disk_mesh(d.n_boundary, d.radius)
    for _ in range(d.refinements):
        mesh = refine_uniform(mesh)
    return mesh


def build_contrast(cfg: RunConfig, mesh):
    qc = cfg.q_true
    if qc.kind == "zero":
        return CoefficientField.constant(0.0, mesh, name="zero")
    if qc.kind == "constant":
        return CoefficientField.constant(qc.value, mesh, name="constant")
    if qc.kind == "indicator":
        return CoefficientField.indicator(mesh, tuple(qc.box), qc.value)
    values = load_parameters(qc.path)
    if len(values) != mesh.n_triangles:
        raise ConfigError(f"q_true.path: {len(values)} values for {mesh.n_triangles} triangles")
    return CoefficientField(values=values, name=Path(qc.path).stem)


def build_sources(cfg: RunConfig, space):
    return SourceSet(space, [tuple(p) for p in cfg.sources.positions], cfg.sources.radius)


def krylov(cfg: RunConfig):
    return KrylovConfig(tol=cfg.solver.tol, max_iter=cfg.solver.max_iter, restart=cfg.solver.restart)


def _write_rows(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    atomic_write_text(path, buf.getvalue())


def cmd_mesh(cfg, out, args):
    mesh = build_mesh(cfg)
    mesh.check_invariants()
    save_mesh(out / "mesh", mesh)
    stats = {"n_vertices": mesh.n_vertices, "n_triangles": mesh.n_triangles,
             "n_boundary_edges": len(mesh.boundary_edges), "h": mesh.h, "area": mesh.area,
             "perimeter": mesh.perimeter, "fingerprint": mesh.fingerprint}
    atomic_write_text(out / "mesh_stats.json", json.dumps(stats, indent=2, sort_keys=True) + "\n")
    logger.info("mesh: %d vertices, %d triangles, h=%.4g", mesh.n_vertices, mesh.n_triangles, mesh.h)
    return EXIT_OK


def cmd_solve(cfg, out, args):
    mesh = build_mesh(cfg)
    space = FunctionSpace(mesh, cfg.order)
    q = build_contrast(cfg, mesh)
    sources = build_sources(cfg, space)
    save_mesh(out / "mesh", mesh)
    rows = []
    for i, k in enumerate(cfg.k_values):
        problem = HelmholtzProblem(space, q, k)
        bg = make_background(space, k) if args.mode == "vls" else None
        for s in range(len(sources)):
            b = cfg.source_strength * sources.vectors[s]
            if args.mode == "vls":
                res = solve_vls(bg, q, b, krylov(cfg))
                u, iters = res.u, res.iterations
            else:
                u, iters = solve_direct(problem, b), 0
            a = problem.operator()
            bnorm = np.linalg.norm(b)
            rel = float(np.linalg.norm(a @ u.dofs - b) / bnorm) if bnorm > 0 else 0.0
            save_wavefield(out / f"u_k{i}_s{s}", u, meta={"k": float(k), "source": s, "mode": args.mode},
                           tolerances={"gmres": cfg.solver.tol})
            rows.append([float(k), s, args.mode, iters, rel, float(norms(u).h1)])
    _write_rows(out / "solve_report.csv", ["k", "source", "mode", "iterations", "relative_residual", "h1_norm"], rows)
    return EXIT_OK


def _rom_pipeline(cfg, threads):
    mesh = build_mesh(cfg)
    space = FunctionSpace(mesh, cfg.order)
    q = build_contrast(cfg, mesh)
    grid = WavenumberGrid(tuple(cfg.k_values))
    sources = build_sources(cfg, space)
    snaps = generate_snapshots(space, q, grid, sources, threads=threads, tol=cfg.solver.lu_refine_tol)
    data = extract_data(snaps)
    oracle = rom_oracle(snaps, q)
    recovered = rom_from_data(data, assemble_B_from_traces(data, mesh))
    return mesh, data, oracle, recovered


def cmd_rom_build(cfg, out, args):
    mesh, data, oracle, recovered = _rom_pipeline(cfg, args.threads)
    tol = {"lu_refine": cfg.solver.lu_refine_tol}
    save_mesh(out / "mesh", mesh)
    save_rom_dataset(out / "rom_dataset", data, tolerances=tol)
    fps = {"mesh": data.mesh_fingerprint, "q": data.q_fingerprint}
    save_rom_matrices(out / "rom_oracle", oracle, meta={"source": "volume integrals"}, fingerprints=fps)
    save_rom_matrices(out / "rom_data", recovered, meta={"source": "boundary data"}, fingerprints=fps)
    return EXIT_OK


def cmd_rom_verify(cfg, out, args):
    _, _, oracle, recovered = _rom_pipeline(cfg, args.threads)
    rows, ok = [], True
    for name in ("mass", "stiffness", "boundary"):
        errs = block_relative_errors(recovered, oracle, name)
        for block, err in errs.items():
            passed = err <= ROM_THRESHOLDS[block]
            ok &= passed
            rows.append([name, block, float(err), ROM_THRESHOLDS[block], "yes" if passed else "no"])
    _write_rows(out / "rom_verify.csv", ["matrix", "block", "relative_error", "threshold", "passed"], rows)
    if not ok:
        raise ThresholdFailure("data-driven ROM disagrees with the oracle beyond the thresholds")
    return EXIT_OK


def cmd_invert(cfg, out, args):
    mesh = build_mesh(cfg)
    space = FunctionSpace(mesh, cfg.order)
    grid = WavenumberGrid(tuple(cfg.k_values))
    sources = build_sources(cfg, space)
    inv = cfg.inversion
    pgrid = ParamGrid(mesh, *inv.param_grid)
    qc = cfg.q_true
    if qc.kind == "indicator":
        q_true = pgrid.indicator(tuple(qc.box), qc.value)
    elif qc.kind == "constant":
        q_true = np.full(pgrid.size, qc.value)
    elif qc.kind == "zero":
        q_true = np.zeros(pgrid.size)
    else:
        q_true = load_parameters(qc.path)
        if len(q_true) != pgrid.size:
            raise ConfigError(f"q_true.path: {len(q_true)} values for a grid of {pgrid.size} cells")
    snaps = generate_snapshots(space, pgrid.to_field(q_true), grid, sources, threads=args.threads)
    data = extract_data(snaps)
    if inv.kind == "fwi":
        reference = data.responses
    else:
        reference = rom_from_data(data, assemble_B_from_traces(data, mesh)).stiffness
    ocfg = ObjectiveConfig(inv.kind, space, grid, sources, pgrid, reference, a=inv.a, p=inv.p,
                           bound=inv.bound, gradient=inv.gradient)
    q0 = np.zeros(pgrid.size)
    result = minimize(ocfg, q0, InversionOptions(max_iter=inv.max_iter, floor=inv.floor))
    result.write_csv(out / "inversion_history.csv")
    save_parameters(out / "q_est", result.q_est, shape=inv.param_grid,
                    meta={"kind": inv.kind, "termination": result.termination_reason},
                    fingerprints={"mesh": mesh.fingerprint})
    m0, m1 = result.misfit_history[0], result.misfit_history[-1]
    summary = {"initial_misfit": m0, "final_misfit": m1, "misfit_ratio": m1 / m0 if m0 > 0 else 0.0,
               "iterations": result.iterations, "termination": result.termination_reason,
               "misfit_at_truth": misfit(q_true, ocfg)}
    atomic_write_text(out / "inversion_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    logger.info("invert %s: misfit %.3e -> %.3e", inv.kind, m0, m1)
    return EXIT_OK


def _smooth_source(center, width):
    cx, cy = center

    def f(x):
        return np.exp(-((x[..., 0] - cx) ** 2 + (x[..., 1] - cy) ** 2) / (2 * width**2))

    return f


def cmd_experiment(cfg, out, args):
    ex = cfg.experiment
    name = args.name
    if name == "mms":
        reports = [mms_convergence(ex.k, tuple(ex.direction), build_mesh(cfg), ex.refinements, cfg.order)]
    elif name in ("weak_convergence", "collectively_compact"):
        space = FunctionSpace(build_mesh(cfg), cfg.order)
        f = _smooth_source(ex.source_center, ex.source_width)
        weak = weak_convergence_study(None, ex.amplitude, ex.n_list, space, ex.k, f, krylov(cfg))
        reports = [weak, collectively_compact_check(None, ex.amplitude, ex.n_list, space, ex.k, f,
                                                    weak_report=weak)]
        if name == "collectively_compact":
            reports = reports[1:]
    elif name == "h2":
        space = FunctionSpace(build_mesh(cfg), 2)
        reports = [h2_sweep(ex.k_list, space, _smooth_source(ex.source_center, ex.source_width))]
    else:
        raise ConfigError(f"experiment: unknown name {name!r}; choose from {list(EXPERIMENTS)}")
    failed = []
    for rep in reports:
        rep.write_csv(out / f"{rep.experiment_id}.csv")
        meta = {"parameters": rep.parameters, "thresholds": rep.thresholds, "flags": rep.flags, "notes": rep.notes}
        atomic_write_text(out / f"{rep.experiment_id}.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
        failed += [f"{rep.experiment_id}.{k}" for k, v in rep.flags.items() if not v]
    if failed:
        raise ThresholdFailure("thresholds missed: " + ", ".join(failed))
    return EXIT_OK


COMMANDS = {
    "mesh": cmd_mesh,
    "solve": cmd_solve,
    "rom-build": cmd_rom_build,
    "rom-verify": cmd_rom_verify,
    "invert": cmd_invert,
    "experiment": cmd_experiment,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--output", help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for snapshot generation")
    common.add_argument("--mode", choices=("direct", "vls"), default="direct", help="forward solver")
    common.add_argument("--verbose", "-v", action="store_true")
    parser = argparse.ArgumentParser(prog="vlshelm", description="Helmholtz forward, ROM and inversion tools")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "experiment":
            p.add_argument("name", choices=EXPERIMENTS)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.output:
            cfg.output = args.output
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads: must be positive")
            cfg.threads = args.threads
        args.threads = cfg.threads
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "config.resolved.json", cfg.to_json())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ThresholdFailure as exc:
        print(f"threshold failure: {exc}", file=sys.stderr)
        return EXIT_THRESHOLD
    except (VlsHelmError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
