"""Command line front end: ``python -m stochbt <command> [options]``."""

import argparse
from dataclasses import replace
import logging
import os
import sys

import numpy as np

from . import experiments as ex
from .errbound import CSV_HEADER
from .mcsim import simulate_errors
from .reduce import save_reduced
from .sysmodel import benchmark_control, save_system
from .textio import format_float, write_csv, write_matrix_file


def _add_common(p):
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="top-level seed (unsigned 64-bit)")
    p.add_argument("--paths", type=int, help="Monte Carlo paths")
    p.add_argument("--steps", type=int, help="Euler-Maruyama steps per unit time")
    p.add_argument("--strategy", choices=["exact", "sampled", "approx"], help="Gramian strategy")
    p.add_argument("--orders", help="comma-separated reduced orders, e.g. 2,4,8,16")
    p.add_argument("--dry-run", action="store_true", help="validate the configuration and exit")


def build_parser():
    parser = argparse.ArgumentParser(prog="stochbt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("benchmark", "write the benchmark system file"),
        ("gramians", "compute and write the Gramians"),
        ("reduce", "write reduced models for the requested orders"),
        ("bound", "evaluate the a-posteriori error bound"),
        ("simulate", "Monte Carlo output errors of the reduced models"),
    ]:
        _add_common(sub.add_parser(name, help=help_text))
    p = sub.add_parser("experiment", help="reproduce a figure or table")
    p.add_argument("name", choices=sorted(ex.EXPERIMENTS))
    _add_common(p)
    return parser


def resolve_config(args):
    cfg = ex.read_config(args.config) if args.config else ex.ExperimentConfig()
    overrides = {}
    for key in ("out", "seed", "paths", "steps", "strategy"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if args.orders:
        overrides["orders"] = ex._parse_orders(args.orders)
    return replace(cfg, **overrides)


def _spectral_summary(system):
    d = np.linalg.eigvals(system.A).real
    return [
        f"n = {system.n}  m = {system.m}  p = {system.p}  q = {system.q}",
        f"max Re eig(A) = {format_float(d.max())}",
        f"min Re eig(A) = {format_float(d.min())}",
        f"unstable modes = {int(np.count_nonzero(d > 0))}",
    ]


def cmd_benchmark(cfg, out):
    system = ex.load_model(cfg)
    path = os.path.join(out, "system.txt")
    save_system(path, system)
    return [f"wrote = {path}"] + _spectral_summary(system)


def cmd_gramians(cfg, out):
    system = ex.load_model(cfg)
    gram = ex.compute_gramians(system, cfg)
    write_matrix_file(os.path.join(out, "gramians.txt"), [("P", gram.P), ("Q", gram.Q)])
    sigma = ex.make_transform(gram, cfg.transform).sigma
    write_csv(os.path.join(out, "hsv.csv"), ["index", "sigma"], [[i + 1, float(s)] for i, s in enumerate(sigma)])
    lines = [f"provenance = {gram.provenance}"]
    lines += [f"{k} = {format_float(v) if isinstance(v, float) else v}" for k, v in sorted(gram.diagnostics.items())]
    return lines


def cmd_reduce(cfg, out):
    system = ex.load_model(cfg)
    gram = ex.compute_gramians(system, cfg)
    tr = ex.make_transform(gram, cfg.transform)
    lines = []
    for r in cfg.orders:
        path = os.path.join(out, f"rom_r{r}.txt")
        save_reduced(path, ex.truncate(system, tr, r))
        lines.append(f"wrote = {path}")
    return lines


def cmd_bound(cfg, out):
    res = ex.run_pipeline(replace(cfg, bound=True), simulate=False)
    write_csv(os.path.join(out, "bound.csv"), CSV_HEADER, [rep.csv_row() for rep in res.reports])
    lines = []
    for rep in res.reports:
        lines += rep.to_text().splitlines() + [""]
    return lines


def cmd_simulate(cfg, out):
    system = ex.load_model(cfg)
    gram = ex.compute_gramians(system, cfg)
    tr = ex.make_transform(gram, cfg.transform)
    roms = [ex.truncate(system, tr, r) for r in cfg.orders]
    u = benchmark_control(cfg.T)
    ests = simulate_errors(system, roms, u, cfg.T, cfg.total_steps(), cfg.paths, ex.stage_seeds(cfg.seed)["simulate"])
    rows = []
    for r, est in zip(cfg.orders, ests):
        est.write_profile(os.path.join(out, f"profile_r{r}.csv"))
        rows.append([r, est.sup_error, est.sup_stderr, est.paths, est.steps])
    write_csv(os.path.join(out, "simulate.csv"), ["r", "mc_error", "mc_stderr", "paths", "steps"], rows)
    return [f"r = {r}  mc_error = {format_float(e)}" for r, e, *_ in rows]


COMMANDS = {
    "benchmark": cmd_benchmark,
    "gramians": cmd_gramians,
    "reduce": cmd_reduce,
    "bound": cmd_bound,
    "simulate": cmd_simulate,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except (OSError, ValueError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    header = ex.report_header(cfg)
    print(header)
    if args.dry_run:
        print("configuration ok")
        return 0
    out = ex._ensure_dir(cfg.out)
    stage = args.command if args.command != "experiment" else f"experiment {args.name}"
    try:
        if args.command == "experiment":
            tables, _ = ex.run_experiment(args.name, cfg, out)
            lines = [f"wrote = {os.path.join(out, f)}" for f in tables]
        else:
            lines = COMMANDS[args.command](cfg, out)
            ex._write_report(os.path.join(out, f"{args.command}_report.txt"), cfg, lines)
    except Exception as exc:  # report the failing stage, then exit non-zero
        print(f"error: stage '{stage}' failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for line in lines:
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
