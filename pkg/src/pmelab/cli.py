"""Command-line entry point ``pme``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from pmelab import harness
from pmelab.fieldio import read_field
from pmelab.grid import PeriodicGrid

log = logging.getLogger("pmelab")


def _print_json(obj):
    print(json.dumps(obj, indent=1, default=harness._json_default))


def cmd_run(args) -> int:
    cfg = harness.ExperimentConfig.from_json(args.config)
    report = harness.run_experiment(cfg, args.output, log=log.info)
    _print_json(report.summary())
    return 0 if report.passed else 1


def cmd_validate_kernel(args) -> int:
    spec = harness.kernel_from_config({"family": args.family, "s": args.s}, args.dim)
    grid = PeriodicGrid(args.dim, args.n)
    gamma = args.gamma
    rep = harness.validate_admissibility(spec, grid, args.eps, eta_rule=lambda e: e**gamma)
    print(rep.table())
    if args.json:
        Path(args.json).write_text(rep.to_json(indent=1))
    return 0 if rep.all_passed else 1


def cmd_w2(args) -> int:
    a = read_field(args.a, kind="density")
    b = read_field(args.b, kind="density")
    method = args.method
    if method == "auto":
        method = "quantile1d" if a.grid.dim == 1 else "sinkhorn"
    if method == "quantile1d":
        res = harness.w2_circle_1d(a, b, with_map=False)
    else:
        res = harness.w2_sinkhorn(a, b, reg=args.reg)
    _print_json(res.to_dict())
    return 0 if res.metadata.get("converged", True) else 1


def _cmd_sim(solver):
    def run(args) -> int:
        cfg = harness.SimulationConfig.from_json(args.config)
        manifest = harness.run_simulation(cfg, solver, args.output)
        print(f"{solver}: {len(manifest['snapshots'])} snapshots, {manifest['steps']} steps -> "
              f"{harness._resolve_output(cfg.output_dir, cfg.base_dir, args.output)}")
        return 0
    return run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pme", description="Diffusion-velocity particle method experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="override output_dir")
    r.set_defaults(func=cmd_run)

    k = sub.add_parser("validate-kernel", help="check kernel admissibility")
    k.add_argument("--family", default="matern", choices=["matern", "laplace1d"])
    k.add_argument("--s", type=float, default=2.0)
    k.add_argument("--dim", type=int, default=1)
    k.add_argument("--n", type=int, default=256)
    k.add_argument("--eps", type=float, nargs="+", default=[0.1, 0.05, 0.025])
    k.add_argument("--gamma", type=float, default=1.2)
    k.add_argument("--json", help="write the report here")
    k.set_defaults(func=cmd_validate_kernel)

    w = sub.add_parser("w2", help="W2 distance between two field files")
    w.add_argument("a")
    w.add_argument("b")
    w.add_argument("--method", default="auto", choices=["auto", "quantile1d", "sinkhorn"])
    w.add_argument("--reg", type=float, default=5e-4)
    w.set_defaults(func=cmd_w2)

    for name, solver in (("run-aggregation", "aggregation"), ("run-pme", "pme"), ("run-particles", "particles")):
        s = sub.add_parser(name, help=f"run the {solver} solver and write snapshots")
        s.add_argument("config")
        s.add_argument("-o", "--output")
        s.set_defaults(func=_cmd_sim(solver))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (harness.ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
