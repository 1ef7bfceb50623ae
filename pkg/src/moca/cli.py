"""Command-line front end: simulate, benchmark, real, pool, print-config."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .datasets import LOADERS, load_real
from .errors import MocaError
from .harness import (
    ExperimentConfig,
    config_from_json,
    config_to_json,
    pool_rows,
    read_runs_csv,
    run_benchmark,
    run_real,
    write_pool_csv,
    write_real_csv,
    write_records_csv,
    write_summary_csv,
)
from .simgen import generate, write_csv

SPLIT_NAMES = ("train", "val", "test")


def _add_common(parser):
    parser.add_argument("--config", type=Path, help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="root seed override")
    parser.add_argument("--out", type=Path, help="output directory override")
    parser.add_argument("--jobs", type=int, help="worker count override")
    parser.add_argument(
        "--scenario", action="append", metavar="NAME", help="scenario (repeatable)"
    )
    parser.add_argument(
        "--method", action="append", metavar="NAME", help="method (repeatable)"
    )
    parser.add_argument("--n", type=int, help="rows per split override")
    parser.add_argument("--replicates", type=int, help="replicate count override")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="moca",
        description="Modular attention-based treatment effect estimation "
        "with classical baselines and a simulation benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write train/val/test CSVs per replicate")
    _add_common(sim)

    bench = sub.add_parser("benchmark", help="fit every method on every replicate")
    _add_common(bench)

    real = sub.add_parser("real", help="estimate effects on a real dataset CSV")
    real.add_argument("path", type=Path, help="dataset CSV")
    real.add_argument(
        "--schema", required=True, choices=sorted(LOADERS), help="column layout"
    )
    real.add_argument(
        "--pool-runs",
        type=int,
        default=5,
        metavar="M",
        help="repeated fits pooled for ML methods (default 5)",
    )
    real.add_argument("--raw-scale", action="store_true", help="skip standardization")
    _add_common(real)

    pool = sub.add_parser("pool", help="pool a per-run results CSV (method,tau,u)")
    pool.add_argument("path", type=Path, help="per-run CSV")
    pool.add_argument("--out", type=Path, help="output directory")

    sub.add_parser("print-config", help="print the full default config as JSON")
    return parser


def load_config(args):
    if getattr(args, "config", None):
        cfg = config_from_json(args.config.read_text())
    else:
        cfg = ExperimentConfig()
    updates = {}
    for flag, field_name in (
        ("seed", "seed"),
        ("jobs", "jobs"),
        ("n", "n"),
        ("replicates", "replicates"),
        ("scenario", "scenarios"),
        ("method", "methods"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            updates[field_name] = value
    if getattr(args, "out", None) is not None:
        updates["out_dir"] = str(args.out)
    if updates:
        cfg = ExperimentConfig(**{**cfg.__dict__, **updates})
    return cfg


def _out_dir(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    cfg = load_config(args)
    out = _out_dir(cfg)
    written = []
    for scenario in cfg.scenarios:
        for rep in range(cfg.replicates):
            for split, name in enumerate(SPLIT_NAMES):
                data = generate(scenario, cfg.n, cfg.seed, path=(rep, split))
                path = out / f"{scenario}_rep{rep:03d}_{name}.csv"
                write_csv(data, path)
                written.append(path)
    print(f"wrote {len(written)} files to {out}")
    return 0


def cmd_benchmark(args):
    cfg = load_config(args)
    out = _out_dir(cfg)
    records, summary = run_benchmark(cfg)
    rec_path = out / "replicates.csv"
    sum_path = out / "summary.csv"
    write_records_csv(records, rec_path)
    write_summary_csv(summary, sum_path)
    failures = sum(1 for r in records if r.failed)
    print(f"{len(records)} replicate fits ({failures} failed)")
    print(f"wrote {rec_path} and {sum_path}")
    return 0


def cmd_real(args):
    cfg = load_config(args)
    data = load_real(args.path, args.schema)
    rows = run_real(
        data,
        cfg.methods,
        pool_runs=args.pool_runs,
        seed=cfg.seed,
        standardize=not args.raw_scale,
        overrides=cfg.overrides,
    )
    out = _out_dir(cfg)
    path = out / f"real_{args.schema}.csv"
    write_real_csv(rows, path)
    for row in rows:
        ci = (
            f" CI [{row['ci_low']:.3f}, {row['ci_high']:.3f}]"
            if row["runs"] > 1
            else ""
        )
        print(f"{row['method']:>12}: ATE {row['ate']:.4f}{ci}")
    print(f"wrote {path}")
    return 0


def cmd_pool(args):
    rows = pool_rows(read_runs_csv(args.path))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "pooled.csv"
        write_pool_csv(rows, path)
        print(f"wrote {path}")
    else:
        for row in rows:
            print(
                f"{row['method']}: tau={row['tau_bar']:.6g} total_var={row['total']:.6g} "
                f"CI [{row['ci_low']:.6g}, {row['ci_high']:.6g}]"
            )
    return 0


def cmd_print_config(_args):
    print(config_to_json(ExperimentConfig()))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "benchmark": cmd_benchmark,
    "real": cmd_real,
    "pool": cmd_pool,
    "print-config": cmd_print_config,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except MocaError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
