"""Command line entry point: ``moserlab <subcommand> [--config PATH] [--out DIR] ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import BACKEND, __version__
from .experiment import (
    ConfigError,
    ExperimentConfig,
    build_geometry,
    load_records,
    prepare_alpha,
    run_experiment,
    run_point,
    summary_csv,
    write_field_file,
)
from .forms import assemble
from .green import export_green
from .mesh import write_mesh
from .spectrum import eigenpairs, export_eigenbasis
from .torus import TorusGrid

SUBCOMMANDS = ("eigen", "green", "maximize", "testfn", "blowup", "sweep", "report")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML experiment configuration")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, metavar="N", help="seed for eigen solver start vectors and random starts")
    common.add_argument("--threads", type=int, metavar="N", help="worker threads for the sweep")
    p = argparse.ArgumentParser(prog="moserlab", description="Discrete Moser-Trudinger experiments.")
    p.add_argument("--version", action="version", version=f"moserlab {__version__} ({BACKEND} kernels)")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "eigen": "Dirichlet / periodic eigenpairs with multiplicities",
        "green": "Green function and regular part A for each alpha",
        "maximize": "subcritical maximisers over the (alpha, epsilon) grid",
        "testfn": "concentrating test function and lower-bound report",
        "blowup": "rescaled profiles compared with the bubble",
        "sweep": "full pipeline over the grid with records and a summary CSV",
        "report": "summary table and SVG plots from existing records",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return p


def _load(args) -> ExperimentConfig:
    over: dict = {}
    if args.seed is not None:
        over.setdefault("solver", {})["seed"] = args.seed
    if args.threads is not None:
        over.setdefault("output", {})["threads"] = args.threads
    if args.out is not None:
        over.setdefault("output", {})["dir"] = args.out
    return ExperimentConfig.load(args.config, overrides=over)


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def cmd_eigen(cfg, out: Path) -> int:
    geom = build_geometry(cfg)
    forms = None if isinstance(geom, TorusGrid) else assemble(geom)
    basis = eigenpairs(geom, int(cfg["spectrum"]["k"]), forms, group_tol=float(cfg["spectrum"]["group_tol"]),
                       seed=int(cfg["solver"]["seed"]))
    paths = export_eigenbasis(basis, out)
    if not isinstance(geom, TorusGrid):
        write_mesh(geom, out / "mesh.txt")
    print(json.dumps(basis.summary()))
    print(f"wrote {paths[0]}")
    return 0


def cmd_green(cfg, out: Path) -> int:
    geom = build_geometry(cfg)
    status = 0
    for i, a in enumerate(float(x) for x in cfg["sweep"]["alphas"]):
        try:
            ctx = prepare_alpha(cfg, geom, None if isinstance(geom, TorusGrid) else assemble(geom), a)
            export_green(ctx.green, out, stem=f"green_{i:02d}")
            print(f"alpha={a:g} A={ctx.green.A:.10g} certificate={ctx.certificate:.10g}")
        except Exception as exc:  # noqa: BLE001
            print(f"alpha={a:g} failed: {exc}", file=sys.stderr)
            status = 1
    return status


def _grid_points(cfg, out: Path, section: str) -> int:
    geom = build_geometry(cfg)
    forms = None if isinstance(geom, TorusGrid) else assemble(geom)
    status = 0
    n = 0
    for a in (float(x) for x in cfg["sweep"]["alphas"]):
        try:
            ctx = prepare_alpha(cfg, geom, forms, a)
        except Exception as exc:  # noqa: BLE001
            print(f"alpha={a:g} failed: {exc}", file=sys.stderr)
            status = 1
            continue
        if section == "testfn":
            _write_json(out / f"testfn_{n:03d}.json", ctx.testfn)
            t = ctx.testfn
            if "error" in t:
                print(f"alpha={a:g} failed: {t['error']}", file=sys.stderr)
                status = 1
                n += 1
                continue
            print(f"alpha={a:g} epsilon={t['epsilon']:g} total={t['total']:.8g} "
                  f"threshold={t['threshold']:.8g} margin={t['margin']:.4g}")
            n += 1
            continue
        for e in (float(x) for x in cfg["sweep"]["epsilons"]):
            rec = run_point(cfg, ctx, e)
            if rec.status != "ok":
                print(f"alpha={a:g} epsilon={e:g} failed: {rec.error}", file=sys.stderr)
                status = 1
            else:
                if section == "maximize":
                    write_field_file(rec, out, n)
                o = rec.outputs
                payload = o["maximizer"] if section == "maximize" else {
                    "blowup": o["blowup"], "profile": o["blowup_profile"], "energy_split": o["energy_split"]}
                _write_json(out / f"{section}_{n:03d}.json", payload)
                if section == "maximize":
                    m = o["maximizer"]
                    print(f"alpha={a:g} epsilon={e:g} value={m['value']:.10g} c={m['c_eps']:.6g} "
                          f"residual={m['residual']:.2e}")
                else:
                    b = o["blowup"]
                    print(f"alpha={a:g} epsilon={e:g} log_r={b['log_r_eps']:.6g} rms={b['bubble_rms']} "
                          f"unresolved_core={b['unresolved_core']}")
            n += 1
    return status


def cmd_sweep(cfg, out: Path) -> int:
    records = run_experiment(cfg, out)
    from .plots import emit_plots

    emit_plots(records, out)
    sys.stdout.write(summary_csv(records))
    return 0 if all(r.status == "ok" for r in records) else 1


def cmd_report(cfg, out: Path) -> int:
    records = load_records(out)
    if not records:
        print(f"no records in {out}", file=sys.stderr)
        return 1
    from .plots import emit_plots

    text = summary_csv(records)
    (out / "summary.csv").write_text(text)
    for p in emit_plots(records, out):
        print(f"wrote {p}")
    sys.stdout.write(text)
    return 0 if all(r.status == "ok" for r in records) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    cmd = args.command
    if cmd == "eigen":
        return cmd_eigen(cfg, out)
    if cmd == "green":
        return cmd_green(cfg, out)
    if cmd in ("maximize", "blowup", "testfn"):
        return _grid_points(cfg, out, cmd)
    if cmd == "sweep":
        return cmd_sweep(cfg, out)
    return cmd_report(cfg, out)


if __name__ == "__main__":
    sys.exit(main())
