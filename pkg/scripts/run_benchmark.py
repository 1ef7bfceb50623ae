"""Run the simulation benchmark grid and write summary/replicate CSVs.

Presets keep the full run desk-scale on one core; `full` covers every
scenario with every method. Pass --jobs to spread replicates over
workers (results are identical for any worker count).

    python scripts/run_benchmark.py --preset linear --out results/linear
    python scripts/run_benchmark.py --preset full --jobs 4 --out results/full
"""

import argparse
import sys
import time
from pathlib import Path

from moca.harness import (
    METHODS,
    ExperimentConfig,
    run_benchmark,
    write_records_csv,
    write_summary_csv,
)

MOCA_SMALL = {
    "d": 8, "heads": 2, "d_ff": 32, "gate_hidden": 16, "head_hidden": 16,
    "epochs": 60, "patience": 15, "batch_size": 64,
}
MOCA_WIDE = {
    "d": 8, "heads": 1, "d_ff": 16, "gate_hidden": 8, "head_hidden": 8,
    "epochs": 12, "patience": 12, "batch_size": 50,
}
REP_SMALL = {"width": 32, "epochs": 80, "patience": 20}
REP_WIDE = {"width": 32, "epochs": 40, "patience": 10}

LOWDIM_OVERRIDES = {
    "moca-oneway": MOCA_SMALL, "moca-twoway": MOCA_SMALL,
    "tarnet": REP_SMALL, "dragonnet": REP_SMALL,
}
HIGHDIM_OVERRIDES = {
    "xlearner": {"lam": 1.0},
    "moca-oneway": MOCA_WIDE, "moca-twoway": MOCA_WIDE,
    "tarnet": REP_WIDE, "dragonnet": REP_WIDE,
}

PRESETS = {
    "smoke": dict(
        scenarios=["linear"], methods=["ipw", "aipw", "xlearner"],
        n=200, replicates=5, overrides={},
    ),
    "linear": dict(
        scenarios=["linear"], n=1000, replicates=20, overrides=LOWDIM_OVERRIDES,
    ),
    "lowdim": dict(
        scenarios=["linear", "nonlinear", "tdist"],
        n=1000, replicates=20, overrides=LOWDIM_OVERRIDES,
    ),
    "hidden": dict(
        scenarios=["hidden", "hidden-multiU"],
        n=1000, replicates=20, overrides=LOWDIM_OVERRIDES,
    ),
    "highdim": dict(
        scenarios=["highdim"], n=100, replicates=20, overrides=HIGHDIM_OVERRIDES,
    ),
    "full": dict(
        scenarios=["linear", "nonlinear", "tdist", "hidden", "hidden-multiU"],
        n=1000, replicates=20, overrides=LOWDIM_OVERRIDES,
    ),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", choices=sorted(PRESETS), default="smoke")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--replicates", type=int, help="override the preset's R")
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args(argv)

    preset = dict(PRESETS[args.preset])
    preset.setdefault("methods", list(METHODS))
    if args.replicates:
        preset["replicates"] = args.replicates
    cfg = ExperimentConfig(seed=args.seed, jobs=args.jobs, **preset)

    start = time.perf_counter()
    records, summary = run_benchmark(cfg)
    elapsed = time.perf_counter() - start

    args.out.mkdir(parents=True, exist_ok=True)
    write_records_csv(records, args.out / "replicates.csv")
    write_summary_csv(summary, args.out / "summary.csv")

    print(f"{args.preset}: {len(records)} fits in {elapsed:.0f}s")
    header = f"{'scenario':14s} {'method':13s} {'bias_mean':>10s} {'ate_rmse':>9s} {'fail':>4s}"
    print(header)
    for row in summary:
        print(
            f"{row['scenario']:14s} {row['method']:13s} "
            f"{row['ate_bias_mean']:+10.3f} {row['ate_rmse_mean']:9.3f} "
            f"{row['failures']:4d}"
        )
    print(f"wrote {args.out / 'summary.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
