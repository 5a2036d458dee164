"""
Command line entry point.

    lowrank-bandits run --algo lowrank-elim --K 4 --L 4 --d 1 --n 100000 --seeds 1..20 --out runs/a
    lowrank-bandits run --config exp.cfg --n 10000
    lowrank-bandits verify lemmas
    lowrank-bandits gen-instance --K 6 --L 6 --d 2 --seed 7 --out inst.json
    lowrank-bandits bound --K 4 --L 4 --d 1 --seed 3 --n 100000

A config file is flat ``key = value`` text (``#`` starts a comment) using the
``ExperimentConfig`` field names; command-line flags override it.

Run seeds are turned into generator seeds with a counter-based rule,
``SeedSequence(master_seed, spawn_key=(seed,))``, so adding seeds never changes
the streams of existing ones.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from lowrank_bandits import analysis
from lowrank_bandits.bandit import ElimConfig, lowrank_elim, noise_free_max, ucb1_baseline
from lowrank_bandits.environment import (
    GenerationError,
    HottTopicsInstance,
    NoiseModel,
    generate_instance,
    make_instance,
    oracle_quantities,
)
from lowrank_bandits.matcore import DSubset, enum_subsets

log = logging.getLogger("lowrank_bandits")

ALGOS = ("lowrank-elim", "ucb1", "noise-free")
AGGREGATE_HEADER = ["seed", "final_regret", "budget_used", "completed_stages", "found_rows", "found_cols"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    K: int = 4
    L: int = 4
    d: int = 1
    seed: int = 0
    min_cmin: float = 1e-10
    min_gap: float = 0.0
    instance: Optional[str] = None
    noise: str = "bernoulli"
    algo: str = "lowrank-elim"
    exploration: str = "restricted"
    budget_unit: str = "step"
    regret_mode: str = "best-entry"
    n: int = 10_000
    seeds: List[int] = field(default_factory=lambda: [0])
    master_seed: int = 0
    out: str = "runs"
    workers: int = 1

    def validate(self) -> None:
        if self.algo not in ALGOS:
            raise ConfigError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.instance is not None and not os.path.exists(self.instance):
            raise ConfigError(f"instance file {self.instance} does not exist")
        try:
            NoiseModel.parse(self.noise)
            ElimConfig(self.n, self.regret_mode, self.exploration, 0, self.budget_unit)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def parse_seeds(text) -> List[int]:
    """``"1..20"`` (inclusive), ``"1,2,5"`` or a mix of both."""
    if isinstance(text, list):
        return [int(s) for s in text]
    seeds: List[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def _coerce(name: str, raw: str):
    ftype = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}[name]
    if name == "seeds":
        return parse_seeds(raw)
    if ftype in ("int",):
        return int(raw)
    if ftype in ("float",):
        return float(raw)
    if ftype == "Optional[str]":
        return None if raw in ("", "none", "None") else raw
    return raw


def load_config(path: Optional[str], overrides: dict) -> ExperimentConfig:
    values = {}
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} does not exist")
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, raw = line.partition("=")
                key = key.strip()
                if not sep or key not in names:
                    raise ConfigError(f"{path}:{lineno}: cannot parse {line!r}")
                values[key] = _coerce(key, raw.strip())
    for key, raw in overrides.items():
        if raw is not None:
            values[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def derive_seed(master_seed: int, seed: int) -> int:
    return int(np.random.SeedSequence(master_seed, spawn_key=(seed,)).generate_state(1, np.uint64)[0])


def build_instance(cfg: ExperimentConfig) -> HottTopicsInstance:
    if cfg.instance is not None:
        return HottTopicsInstance.from_json(cfg.instance)
    return generate_instance(cfg.K, cfg.L, cfg.d, cfg.seed, min_cmin=cfg.min_cmin, min_gap=cfg.min_gap)


def _run_one(cfg: ExperimentConfig, inst: HottTopicsInstance, seed: int) -> dict:
    noise = NoiseModel.parse(cfg.noise)
    run_seed = derive_seed(cfg.master_seed, seed)
    if cfg.algo == "lowrank-elim":
        ecfg = ElimConfig(cfg.n, cfg.regret_mode, cfg.exploration, run_seed, cfg.budget_unit)
        trace = lowrank_elim(inst, noise, ecfg)
        trace.write_eliminations(os.path.join(cfg.out, f"eliminations_seed{seed}.jsonl"))
    else:
        trace = ucb1_baseline(inst, noise, cfg.n, np.random.default_rng(run_seed))
    trace.write_csv(os.path.join(cfg.out, f"trace_seed{seed}.csv"))
    log.info("seed %d: regret %.6g, %d stages", seed, trace.cumulative_regret, trace.completed_stages)
    found = trace.survivors
    return {
        "seed": seed,
        "run_seed": run_seed,
        "final_regret": trace.cumulative_regret,
        "budget_used": trace.budget_used,
        "observations_used": trace.observations_used,
        "completed_stages": trace.completed_stages,
        "found_rows": list(found[0]) if found else None,
        "found_cols": list(found[1]) if found else None,
        "eliminations": [e.to_dict() for e in trace.eliminations],
        "flags": trace.flags,
    }


def _run_one_star(args):
    return _run_one(*args)


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every seed, write per-seed traces, ``summary.json`` and ``aggregate.csv``."""
    os.makedirs(cfg.out, exist_ok=True)
    inst = build_instance(cfg)
    oq = oracle_quantities(inst)
    summary = {
        "config": dataclasses.asdict(cfg),
        "instance": inst.to_dict(),
        "oracle": oq.summary(),
    }
    if cfg.algo == "noise-free":
        I, J = noise_free_max(inst.Rbar, inst.d)
        summary.update(
            found={"rows": list(I), "cols": list(J)},
            found_equals_oracle=bool(I == oq.best_drow and J == oq.best_dcol),
        )
    else:
        jobs = [(cfg, inst, s) for s in cfg.seeds]
        if cfg.workers > 1:
            with ProcessPoolExecutor(cfg.workers) as pool:
                runs = list(pool.map(_run_one_star, jobs))
        else:
            runs = [_run_one_star(j) for j in jobs]
        regrets = np.array([r["final_regret"] for r in runs])
        p25, med, p75 = np.percentile(regrets, [25, 50, 75])
        summary["runs"] = runs
        summary["aggregate"] = {
            "seeds": len(runs),
            "mean_regret": float(regrets.mean()),
            "median_regret": float(med),
            "p25": float(p25),
            "p75": float(p75),
            "min_regret": float(regrets.min()),
            "max_regret": float(regrets.max()),
        }
        with open(os.path.join(cfg.out, "aggregate.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(AGGREGATE_HEADER)
            for r in runs:
                w.writerow(
                    [
                        r["seed"],
                        repr(r["final_regret"]),
                        r["budget_used"],
                        r["completed_stages"],
                        "-".join(map(str, r["found_rows"])) if r["found_rows"] else "",
                        "-".join(map(str, r["found_cols"])) if r["found_cols"] else "",
                    ]
                )
    try:
        summary["theorem1"] = analysis.theorem1_bound(inst, cfg.n, oracle=oq).to_dict()
    except analysis.DegenerateInstanceError as exc:
        summary["theorem1"] = {"error": str(exc)}
    # the only non-reproducible key
    summary["generated_at"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    with open(os.path.join(cfg.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, default=_json_default)
        fh.write("\n")
    return summary


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj)}")


# ---------------------------------------------------------------------------
# verification suites (pinned seeds)


def _suite_instance_d1() -> HottTopicsInstance:
    u = [1.0, 0.6, 0.45, 0.3]
    return make_instance(u, u)


def _suite_instance_d2() -> HottTopicsInstance:
    base = np.array([[0.85, 0.1], [0.1, 0.85]])
    mix = np.array([[1, 0], [0, 1], [0.6, 0.3], [0.2, 0.7], [0.45, 0.45]])
    return make_instance(mix @ base, mix @ base)


def suite_lemmas(quick: bool = False) -> List[analysis.LemmaResult]:
    rng = np.random.default_rng(2024)
    results = []
    l2 = analysis.LemmaResult("lemma2", 0, 0, math.inf)
    for s in range(20 if quick else 100):
        d = 1 + s % 3
        K, L = int(rng.integers(d, 8)), int(rng.integers(d, 8))
        r = analysis.check_lemma2(generate_instance(K, L, d, seed=10_000 + s))
        l2.trials += r.trials
        l2.failures += r.failures
        l2.worst_margin = min(l2.worst_margin, r.worst_margin)
    results.append(l2)
    for d in (1, 2, 3, 4):
        results.append(analysis.check_lemma4(d, 1_000 if quick else 10_000, np.random.default_rng(d)))
    inst = _suite_instance_d1()
    noise = NoiseModel("bernoulli")
    results.append(analysis.check_concentration(inst, noise, 10_000, 50, seed0=0))
    results.append(analysis.check_elimination_stage(inst, noise, 100_000, 50, seed0=1_000))
    return results


def suite_estimators() -> List[analysis.LemmaResult]:
    inst = _suite_instance_d2()
    cols = enum_subsets(inst.L, 2)
    return [
        analysis.check_estimator(inst, NoiseModel("bernoulli"), DSubset([0, 1]), cols, 100_000, np.random.default_rng(7)),
        analysis.check_estimator(inst, NoiseModel("bernoulli"), DSubset([1, 3]), cols, 100_000, np.random.default_rng(8)),
        analysis.check_estimator(
            inst, NoiseModel("truncated-gaussian", 0.2), DSubset([0, 1]), cols, 100_000, np.random.default_rng(9)
        ),
    ]


def scaling_family() -> HottTopicsInstance:
    """d = 1, K = L = 4 with a fixed gap: one strong row/column, three equal weaker ones."""
    u = [1.0, 0.5, 0.5, 0.5]
    return make_instance(u, u)


def n_sweep(ns: List[int], seeds: int = 20, inst: Optional[HottTopicsInstance] = None, **cfg_kw) -> List[dict]:
    inst = inst or scaling_family()
    noise = NoiseModel("bernoulli")
    runs = {
        n: [lowrank_elim(inst, noise, ElimConfig(n, seed=s, **cfg_kw)).cumulative_regret for s in range(seeds)]
        for n in ns
    }
    return analysis.regret_scaling_report("n", runs)


def suite_scaling(ns: List[int], seeds: int = 20):
    table = n_sweep(ns, seeds)
    change = analysis.log_ratio_change(table)
    result = analysis.LemmaResult(
        "log-scaling", 1, int(change >= 0.5), 0.5 - change, details={"relative_change": change}
    )
    return table, result


# ---------------------------------------------------------------------------
# CLI


def _add_instance_flags(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--K", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--seed", type=int, help="instance generator seed")
    p.add_argument("--min-cmin", dest="min_cmin", type=float)
    p.add_argument("--min-gap", dest="min_gap", type=float)
    p.add_argument("--instance", help="serialized instance JSON (overrides generation)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowrank-bandits", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an algorithm over seeds and write traces")
    _add_instance_flags(run)
    run.add_argument("--algo", choices=ALGOS)
    run.add_argument("--exploration", choices=("restricted", "chain"))
    run.add_argument("--budget-unit", dest="budget_unit", choices=("step", "observation"))
    run.add_argument("--regret-mode", dest="regret_mode", choices=("best-entry", "sum-entries"))
    run.add_argument("--noise", help="bernoulli | deterministic | truncated-gaussian:SIGMA")
    run.add_argument("--n", type=int, help="horizon")
    run.add_argument("--seeds", help="e.g. 1..20 or 1,2,3")
    run.add_argument("--master-seed", dest="master_seed", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--workers", type=int)

    for name in ("verify", "check"):
        v = sub.add_parser(name, help="run a pinned-seed verification suite")
        v.add_argument("suite", choices=("lemmas", "scaling", "estimators"))
        v.add_argument("--ns", default="1000,10000,100000", help="horizons for the scaling suite")
        v.add_argument("--runs", type=int, default=20, help="seeds per horizon for the scaling suite")
        v.add_argument("--quick", action="store_true", help="smaller inequality suite")
        v.add_argument("--json", help="also write the report as JSON here")
        v.add_argument("--csv", help="scaling suite: write the table as CSV here")

    gen = sub.add_parser("gen-instance", help="generate and serialize an instance")
    _add_instance_flags(gen)
    gen.add_argument("--out", required=True)

    bound = sub.add_parser("bound", help="print the gap-dependent regret bound for a configuration")
    _add_instance_flags(bound)
    bound.add_argument("--n", type=int)
    return parser


def _overrides(args, keys) -> dict:
    return {k: getattr(args, k, None) for k in keys}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    inst_keys = ("K", "L", "d", "seed", "min_cmin", "min_gap", "instance")
    try:
        if args.command == "run":
            keys = inst_keys + ("algo", "exploration", "budget_unit", "regret_mode", "noise", "n", "seeds",
                                "master_seed", "out", "workers")
            cfg = load_config(args.config, _overrides(args, keys))
            summary = run_experiment(cfg)
            if cfg.algo == "noise-free":
                print(f"found={summary['found']} found_equals_oracle={summary['found_equals_oracle']}")
                return 0 if summary["found_equals_oracle"] else 1
            agg = summary["aggregate"]
            print(f"{agg['seeds']} seeds, median regret {agg['median_regret']:.6g} -> {cfg.out}")
            return 0

        if args.command in ("verify", "check"):
            if args.suite == "lemmas":
                results = suite_lemmas(quick=args.quick)
            elif args.suite == "estimators":
                results = suite_estimators()
            else:
                table, result = suite_scaling(parse_seeds(args.ns), seeds=args.runs)
                for row in table:
                    print(f"n={row['value']:<10g} median={row['median_regret']:<12.6g} "
                          f"p25={row['p25']:<12.6g} p75={row['p75']:.6g}")
                if args.csv:
                    analysis.write_scaling_csv(table, args.csv)
                results = [result]
            print(analysis.results_to_text(results))
            if args.json:
                with open(args.json, "w") as fh:
                    fh.write(analysis.results_to_json(results) + "\n")
            return 0 if all(r.passed for r in results) else 1

        if args.command == "gen-instance":
            cfg = load_config(args.config, _overrides(args, inst_keys))
            inst = build_instance(cfg)
            inst.to_json(args.out)
            print(json.dumps(oracle_quantities(inst).summary()))
            return 0

        if args.command == "bound":
            cfg = load_config(args.config, _overrides(args, inst_keys + ("n",)))
            rep = analysis.theorem1_bound(build_instance(cfg), cfg.n)
            print(f"theorem1={rep.theorem1_value:.10g} variant_cbar={rep.variant_value:.10g}")
            print(json.dumps(rep.components))
            return 0
    # ValueError covers config, domain, instance and size errors
    except (ValueError, GenerationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
