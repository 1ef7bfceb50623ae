"""Monte Carlo audit of every simulation scenario's true ATE.

Draws n potential-outcome pairs per scenario and compares the sample
mean of Y(1) - Y(0) against the closed-form target. Deviations beyond
3 standard errors indicate a broken generator.

    python scripts/check_dgps.py --n 1000000
"""

import argparse
import sys

from moca.simgen import SCENARIO_IDS, mc_ate, true_ate


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10**6)
    ap.add_argument("--seed", type=int, default=12345)
    args = ap.parse_args(argv)

    print(f"{'scenario':14s} {'closed form':>12s} {'MC mean':>10s} {'MC se':>9s} {'z':>6s}")
    failed = False
    for scenario in SCENARIO_IDS:
        target = true_ate(scenario)
        mean, se = mc_ate(scenario, n=args.n, seed=args.seed)
        z = (mean - target) / se
        flag = "" if abs(z) < 3.0 else "  <-- OFF"
        failed = failed or abs(z) >= 3.0
        print(f"{scenario:14s} {target:12.6f} {mean:10.6f} {se:9.2e} {z:+6.2f}{flag}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
