"""Command-line entry points: run, sweep, compare, sample-grid, plot, selftest."""

from __future__ import annotations

import argparse
import sys

from . import harness
from .exceptions import UsageError


def _load_cfg(args) -> harness.ExperimentConfig:
    config_path = getattr(args, "config", None)
    cfg = harness.load_config(config_path) if config_path else harness.ExperimentConfig()
    if getattr(args, "method", None):
        cfg.method = args.method
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg.seeds = (seed,)
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "profile", None):
        cfg.profile = args.profile
    return cfg


def _parse_grid(specs) -> dict[str, list[float]]:
    grid = {}
    for spec in specs or []:
        if "=" not in spec:
            raise UsageError(f"--grid expects name=v1,v2,... got {spec!r}")
        key, vals = spec.split("=", 1)
        grid[key.strip()] = [float(v) for v in vals.split(",") if v.strip()]
    return grid


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subparser from clobbering a flag given before the
    # subcommand with its own default
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="experiment config file (key = value sections)")
    common.add_argument("--seed", type=int, help="run a single seed")
    common.add_argument("--out", help="output directory for results")
    common.add_argument("--profile", choices=[harness.PROFILE_FULL, harness.PROFILE_CI],
                        help="full-scale or shrunk ci settings")

    p = argparse.ArgumentParser(prog="cilab", parents=[common],
                                description="class-incremental learning benchmark lab")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("run", parents=[common],
                        help="train and evaluate one method over its seeds")
    sp.add_argument("--method", help="override the config's method")

    sp = sub.add_parser("sweep", parents=[common],
                        help="single-seed hyperparameter grid search")
    sp.add_argument("--method", help="override the config's method")
    sp.add_argument("--grid", action="append",
                    help="name=v1,v2,... (repeatable); defaults to the method's "
                         "standard exploration range when omitted")

    sp = sub.add_parser("compare", parents=[common],
                        help="accuracy table from saved result dirs")
    sp.add_argument("result_dirs", nargs="+")

    sp = sub.add_parser("sample-grid", parents=[common],
                        help="PGM grid of decoded prior samples")
    sp.add_argument("model_dir")
    sp.add_argument("--out-file", required=True)
    sp.add_argument("--grid-seed", type=int, default=0)

    sp = sub.add_parser("plot", parents=[common],
                        help="SVG bar chart from saved result dirs")
    sp.add_argument("result_dirs", nargs="+")
    sp.add_argument("--out-file", required=True)

    sub.add_parser("selftest", parents=[common],
                   help="run the built-in property/oracle checks")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _load_cfg(args)
            result = harness.run(cfg)
            mean, sem = result.mean, result.sem
            print(f"{result.method} on {result.benchmark}: "
                  f"{mean * 100:.2f} (± {sem * 100:.2f}) over seeds {result.seeds}")
            print(f"results under {harness._run_dir(cfg, result.config_hash)}")
        elif args.command == "sweep":
            cfg = _load_cfg(args)
            grid = _parse_grid(args.grid)
            if not grid:
                grid = harness.TABLE_GRIDS.get(cfg.method)
                if not grid:
                    raise UsageError(f"no default grid for {cfg.method}; pass --grid")
            best_cfg, rows = harness.sweep(cfg, grid)
            print(harness.format_sweep_table(sorted(grid), rows))
            best = {k: best_cfg.hp[k] for k in grid}
            print(f"best: {best}")
        elif args.command == "compare":
            results = [harness.load_result(d) for d in args.result_dirs]
            print(harness.compare(results))
        elif args.command == "sample-grid":
            harness.sample_grid(args.model_dir, args.out_file, seed=args.grid_seed)
            print(f"wrote {args.out_file}")
        elif args.command == "plot":
            results = [harness.load_result(d) for d in args.result_dirs]
            harness.plot_results(results, args.out_file)
            print(f"wrote {args.out_file}")
        elif args.command == "selftest":
            from . import selftest
            return selftest.run_selftest(getattr(args, "profile", harness.PROFILE_CI))
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
