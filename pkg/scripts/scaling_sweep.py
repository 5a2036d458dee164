"""Median cumulative regret of LowRankElim across horizons.

Example:
    python3 scripts/scaling_sweep.py --ns 1000,10000,100000 --seeds 20 --csv scaling.csv
"""

import argparse
import math

from lowrank_bandits import analysis, harness


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--ns", default="1000,10000,100000")
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--budget-unit", default="step", choices=("step", "observation"))
    parser.add_argument("--exploration", default="restricted", choices=("restricted", "chain"))
    parser.add_argument("--csv", help="write the table here")
    args = parser.parse_args()

    ns = [int(x) for x in args.ns.split(",")]
    table = harness.n_sweep(ns, seeds=args.seeds, budget_unit=args.budget_unit,
                            exploration_mode=args.exploration)
    for row in table:
        n = row["value"]
        print(f"n={n:<8d} median={row['median_regret']:<10.5g} "
              f"IQR=[{row['p25']:.5g}, {row['p75']:.5g}]  median/ln n={row['median_regret'] / math.log(n):.2f}")
    print(f"relative change of median/ln n over the last two horizons: {analysis.log_ratio_change(table):.1%}")
    if args.csv:
        analysis.write_scaling_csv(table, args.csv)


if __name__ == "__main__":
    main()
