"""Final regret of LowRankElim and UCB1 on rank-one instances of growing size.

Both sides of the instance are (1, 0.5, ..., 0.5), so the gaps stay fixed as K
grows. Example:
    python3 scripts/compare_ucb1.py --ks 4,8,16 --n 100000 --seeds 20
"""

import argparse

import numpy as np

from lowrank_bandits import ElimConfig, NoiseModel, lowrank_elim, make_instance, ucb1_baseline


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--ks", default="4,8,16")
    parser.add_argument("--n", type=int, default=100_000)
    parser.add_argument("--seeds", type=int, default=20)
    args = parser.parse_args()

    noise = NoiseModel("bernoulli")
    print(f"{'K=L':>4} {'elim median':>12} {'ucb1 median':>12} {'ucb1/elim':>10}")
    for K in (int(k) for k in args.ks.split(",")):
        u = [1.0] + [0.5] * (K - 1)
        inst = make_instance(u, u)
        elim = np.median([lowrank_elim(inst, noise, ElimConfig(args.n, seed=s)).cumulative_regret
                          for s in range(args.seeds)])
        base = np.median([ucb1_baseline(inst, noise, args.n, np.random.default_rng(s)).cumulative_regret
                          for s in range(args.seeds)])
        print(f"{K:>4d} {elim:>12.5g} {base:>12.5g} {base / elim:>10.3f}")


if __name__ == "__main__":
    main()
