"""
Theoretical quantities and verification suites.

Each ``check_*`` function returns a ``LemmaResult``. Deterministic inequalities
must show zero failures; Monte-Carlo suites carry a ``tolerance`` on the
failure frequency, pinned at three standard errors.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from lowrank_bandits.bandit import ElimConfig, RegretTrace, c_of_n, lowrank_elim
from lowrank_bandits.environment import (
    HottTopicsInstance,
    NoiseModel,
    OracleQuantities,
    oracle_quantities,
)
from lowrank_bandits.matcore import DSubset, det_batch, det_max, enum_subsets

THEOREM_CONSTANT = 3072
# the proof chains 96 d^3 (K+L) / (c_max c_min) with 32 C(n) / (c_min Delta_min)
PROOF_PRODUCT = 96 * 32

SCALING_HEADER = ["sweep_param", "value", "median_regret", "p25", "p75"]


class DegenerateInstanceError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass
class BoundReport:
    theorem1_value: float
    variant_value: float
    empirical_regret: Optional[float]
    ratio: Optional[float]
    components: Dict[str, float]

    def recompute(self) -> float:
        c = self.components
        lead = c["c"] * c["d"] ** 3 * (c["K"] + c["L"]) / (c["c_max"] * c["c_min"] ** 2 * c["delta_min"])
        return lead * c["C_n"] + 4.0

    def is_consistent(self, rtol: float = 1e-9) -> bool:
        return math.isclose(self.recompute(), self.theorem1_value, rel_tol=rtol)

    def to_dict(self) -> dict:
        return asdict(self)


def theorem1_bound(
    inst: HottTopicsInstance,
    n: int,
    empirical_regret: Optional[float] = None,
    oracle: Optional[OracleQuantities] = None,
) -> BoundReport:
    """Gap-dependent regret bound, plus the variant with ``c_bar`` in place of ``c_min``."""
    oq = oracle or oracle_quantities(inst)
    if oq.c_min <= 0 or oq.delta_min <= 0:
        raise DegenerateInstanceError(f"bound needs c_min > 0 and delta_min > 0 (got {oq.c_min}, {oq.delta_min})")
    C = c_of_n(inst.K, inst.L, inst.d, n)
    d, KL = inst.d, inst.K + inst.L

    def bound(c_vol: float) -> float:
        if math.isinf(oq.delta_min):  # nothing to eliminate
            return 4.0
        return THEOREM_CONSTANT * d**3 * KL / (oq.c_max * c_vol**2 * oq.delta_min) * C + 4.0

    value = bound(oq.c_min)
    components = {
        "c": float(THEOREM_CONSTANT),
        "proof_product": float(PROOF_PRODUCT),
        "d": float(d),
        "K": float(inst.K),
        "L": float(inst.L),
        "n": float(n),
        "c_min": oq.c_min,
        "c_max": oq.c_max,
        "c_bar": oq.c_bar,
        "delta_min": oq.delta_min,
        "C_n": C,
    }
    ratio = None if empirical_regret is None else empirical_regret / value
    return BoundReport(value, bound(oq.c_bar), empirical_regret, ratio, components)


@dataclass
class LemmaResult:
    lemma: str
    trials: int
    failures: int
    worst_margin: float
    tolerance: float = 0.0
    witnesses: List[dict] = field(default_factory=list)
    details: Dict[str, float] = field(default_factory=dict)

    @property
    def failure_rate(self) -> float:
        return self.failures / self.trials if self.trials else 0.0

    @property
    def passed(self) -> bool:
        return self.failure_rate <= self.tolerance

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


# ---------------------------------------------------------------------------
# helpers


def sqdet_table(inst: HottTopicsInstance) -> np.ndarray:
    """``det(Rbar(I, J))^2`` for every d-row I (axis 0) and d-column J (axis 1)."""
    rows = np.array(enum_subsets(inst.K, inst.d))
    cols = np.array(enum_subsets(inst.L, inst.d))
    R = np.asarray(inst.Rbar)
    blocks = R[rows[:, None, :, None], cols[None, :, None, :]]
    return det_batch(blocks) ** 2


def best_value_table(inst: HottTopicsInstance) -> np.ndarray:
    """``max Rbar(I x J)`` for every d-row and d-column."""
    rows = np.array(enum_subsets(inst.K, inst.d))
    cols = np.array(enum_subsets(inst.L, inst.d))
    R = np.asarray(inst.Rbar)
    return R[rows[:, None, :, None], cols[None, :, None, :]].max(axis=(2, 3))


# ---------------------------------------------------------------------------
# regret decomposition


def check_lemma2(inst: HottTopicsInstance, oracle: Optional[OracleQuantities] = None) -> LemmaResult:
    oq = oracle or oracle_quantities(inst)
    rows, cols = enum_subsets(inst.K, inst.d), enum_subsets(inst.L, inst.d)
    best = float(np.asarray(inst.Rbar).max())
    lhs = best - best_value_table(inst)
    gu = np.array([oq.gaps_rows[I] for I in rows])
    gv = np.array([oq.gaps_cols[J] for J in cols])
    rhs = 6 * inst.d**3 * (gu[:, None] + gv[None, :]) / oq.c_max
    slack = rhs - lhs
    # round-off allowance on the (I*, J*) equality case
    bad = np.argwhere(slack < -1e-12)
    witnesses = [{"I": list(rows[a]), "J": list(cols[b]), "slack": float(slack[a, b])} for a, b in bad[:10]]
    return LemmaResult("lemma2", int(slack.size), len(bad), float(slack.min()), witnesses=witnesses)


# ---------------------------------------------------------------------------
# simplex matching


def simplex_matching_witness(Z: np.ndarray):
    """Best permutation for ``sum_i ||e_i - Z[pi(i)]||_2``; returns (pi, lhs, rhs)."""
    d = Z.shape[0]
    E = np.eye(d)
    rhs = 6 * d**1.5 * (1 - det_batch(Z) ** 2)
    best_pi, best_lhs = None, math.inf
    for pi in itertools.permutations(range(d)):
        lhs = float(np.linalg.norm(E - Z[list(pi)], axis=1).sum())
        if lhs < best_lhs:
            best_pi, best_lhs = pi, lhs
    return best_pi, best_lhs, float(rhs)


def random_simplex_matrix(d: int, rng: np.random.Generator) -> np.ndarray:
    """d x d matrix with rows uniform on {z >= 0, |z|_1 <= 1}."""
    return rng.dirichlet(np.ones(d + 1), size=d)[:, :d]


def adversarial_corpus(d: int) -> List[np.ndarray]:
    E = np.eye(d)
    corpus = [E, np.zeros((d, d)), np.tile(E[0], (d, 1)), 0.5 * E]
    corpus += [E[list(p)] for p in itertools.permutations(range(d))]
    for eps in (1e-3, 1e-2, 0.1):
        # keep rows in the simplex: shrink the diagonal and spread the mass
        corpus.append((1 - eps) * E + eps / d * np.ones((d, d)) * (d > 1))
        corpus.append((1 - eps) * E)
    if d > 1:
        deficient = E.copy()
        deficient[-1] = deficient[0]
        corpus.append(deficient)
    return corpus


def check_lemma4(d: int, trials: int, rng: np.random.Generator) -> LemmaResult:
    if d > 6:
        raise ValueError("permutation search is limited to d <= 6")
    mats = adversarial_corpus(d) + [random_simplex_matrix(d, rng) for _ in range(trials)]
    failures, worst, witnesses = 0, math.inf, []
    for Z in mats:
        pi, lhs, rhs = simplex_matching_witness(Z)
        margin = rhs - lhs
        if margin < worst:
            worst = margin
            witnesses = [{"Z": Z.tolist(), "pi": list(pi), "lhs": lhs, "rhs": rhs}]
        if margin < -1e-12:
            failures += 1
    return LemmaResult(f"lemma4(d={d})", len(mats), failures, float(worst), witnesses=witnesses)


# ---------------------------------------------------------------------------
# concentration


def interval_misses(trace: RegretTrace, inst: HottTopicsInstance, table: Optional[np.ndarray] = None):
    """Check every confidence interval of a run against its true scaled volume.

    The target of a d-row is the draw-weighted average of ``det^2(Rbar(I, J))``
    over the active d-columns of that stage, and symmetrically for d-columns.
    Returns ``(misses, worst_margin)``.
    """
    table = sqdet_table(inst) if table is None else table
    r_index = {S: k for k, S in enumerate(enum_subsets(inst.K, inst.d))}
    c_index = {S: k for k, S in enumerate(enum_subsets(inst.L, inst.d))}
    misses, worst = 0, math.inf
    for st in trace.stages:
        cj = np.array([c_index[J] for J in st.active_cols])
        wj = np.array([st.col_draw_weights[J] for J in st.active_cols])
        ri = np.array([r_index[I] for I in st.active_rows])
        wi = np.array([st.row_draw_weights[I] for I in st.active_rows])
        mu_rows = table[np.ix_(ri, cj)] @ wj
        mu_cols = wi @ table[np.ix_(ri, cj)]
        for I, mu in zip(st.active_rows, mu_rows):
            margin = min(mu - st.lcb_rows[I], st.ucb_rows[I] - mu)
            worst = min(worst, margin)
            misses += margin < 0
        for J, mu in zip(st.active_cols, mu_cols):
            margin = min(mu - st.lcb_cols[J], st.ucb_cols[J] - mu)
            worst = min(worst, margin)
            misses += margin < 0
    return int(misses), float(worst)


def concentration_tolerance(n: int, runs: int) -> float:
    p = min(1.0, 4.0 / n)
    return p + 3.0 * math.sqrt(p * (1 - p) / runs)


def _runs(inst, noise, n, runs, seed0, **cfg_kw) -> Iterable[RegretTrace]:
    for r in range(runs):
        yield lowrank_elim(inst, noise, ElimConfig(n, seed=seed0 + r, **cfg_kw))


def check_concentration(
    inst: HottTopicsInstance,
    noise: NoiseModel,
    n: int,
    runs: int,
    seed0: int = 0,
    **cfg_kw,
) -> LemmaResult:
    table = sqdet_table(inst)
    failures, worst, intervals = 0, math.inf, 0
    for trace in _runs(inst, noise, n, runs, seed0, **cfg_kw):
        misses, margin = interval_misses(trace, inst, table)
        failures += misses > 0
        worst = min(worst, margin)
        intervals += sum(len(s.active_rows) + len(s.active_cols) for s in trace.stages)
    return LemmaResult(
        "lemma1",
        runs,
        failures,
        float(worst),
        tolerance=concentration_tolerance(n, runs),
        details={"intervals_checked": intervals},
    )


# ---------------------------------------------------------------------------
# elimination stage


def elimination_deadline(c_min: float, gap: float) -> int:
    """First stage m with ``2**-m < c_min * gap / 2``."""
    target = c_min * gap / 2.0
    if target <= 0:
        return math.inf
    m = 0
    while 2.0**-m >= target:
        m += 1
    return m


def check_elimination_stage(
    inst: HottTopicsInstance,
    noise: NoiseModel,
    n: int,
    runs: int,
    seed0: int = 0,
    oracle: Optional[OracleQuantities] = None,
    **cfg_kw,
) -> LemmaResult:
    """On clean runs, each suboptimal subset must be gone by its deadline stage."""
    oq = oracle or oracle_quantities(inst)
    table = sqdet_table(inst)
    failures = clean = checked = 0
    worst = math.inf
    witnesses: List[dict] = []
    for trace in _runs(inst, noise, n, runs, seed0, **cfg_kw):
        if interval_misses(trace, inst, table)[0]:
            continue
        clean += 1
        eliminated_at = {(e.side, e.subset): e.stage for e in trace.eliminations}
        bad = False
        for side, gaps, best in (("row", oq.gaps_rows, oq.best_drow), ("col", oq.gaps_cols, oq.best_dcol)):
            if (side, best) in eliminated_at:
                bad = True
                witnesses.append({"side": side, "subset": list(best), "reason": "optimum eliminated"})
            for S, gap in gaps.items():
                if S == best:
                    continue
                m = elimination_deadline(oq.c_min, gap)
                stage = eliminated_at.get((side, S), math.inf)
                if math.isinf(stage) and m >= trace.completed_stages:
                    continue  # still active, but the deadline stage never completed within the budget
                checked += 1
                worst = min(worst, m - stage)
                if stage > m:
                    bad = True
                    witnesses.append({"side": side, "subset": list(S), "deadline": m, "eliminated": stage})
        failures += bad
    return LemmaResult(
        "lemma3",
        clean,
        failures,
        float(worst),
        witnesses=witnesses[:10],
        details={"runs": runs, "clean_runs": clean, "deadlines_checked": checked},
    )


# ---------------------------------------------------------------------------
# estimator


def check_estimator(
    inst: HottTopicsInstance,
    noise: NoiseModel,
    I: DSubset,
    active_cols: Sequence[DSubset],
    samples: int,
    rng: np.random.Generator,
) -> LemmaResult:
    """Monte-Carlo check that the determinant-product estimate of a d-row is unbiased.

    Draws ``J_t`` uniformly from ``active_cols``, takes two independent noisy
    observations of ``Rbar(I, J_t)`` and multiplies their determinants. The mean
    must be within three standard errors of the average of
    ``det^2(Rbar(I, J))`` over ``active_cols``; every product must be bounded by
    ``det_max(d)^2``.
    """
    R = np.asarray(inst.Rbar)
    cols = np.array(active_cols)
    rows = np.array(I)
    target = float(np.mean(det_batch(R[rows[None, :, None], cols[:, None, :]]) ** 2))
    J = cols[rng.integers(0, len(cols), size=samples)]
    means = R[rows[None, :, None], J[:, None, :]]
    prod = det_batch(noise.sample(means, rng)) * det_batch(noise.sample(means, rng))
    mean = float(prod.mean())
    se = float(prod.std(ddof=1) / math.sqrt(samples))
    bound = det_max(inst.d) ** 2
    out_of_bounds = int(np.sum(np.abs(prod) > bound + 1e-12))
    z = abs(mean - target) / se if se > 0 else (0.0 if mean == target else math.inf)
    return LemmaResult(
        "estimator",
        samples,
        out_of_bounds + (z > 3.0),
        float(3.0 - z),
        details={"mean": mean, "target": target, "stderr": se, "z": z, "max_abs_product": float(np.abs(prod).max())},
    )


# ---------------------------------------------------------------------------
# scaling


def regret_scaling_report(sweep_param: str, runs: Mapping[float, Sequence[float]]) -> List[dict]:
    """Median and quartiles of final regret for each value of the swept parameter."""
    if len(runs) < 3:
        raise InsufficientDataError(f"need at least 3 points on the {sweep_param} axis, got {len(runs)}")
    table = []
    for value in sorted(runs):
        r = np.asarray(runs[value], dtype=float)
        p25, med, p75 = np.percentile(r, [25, 50, 75])
        table.append(
            {"sweep_param": sweep_param, "value": value, "median_regret": float(med), "p25": float(p25), "p75": float(p75)}
        )
    return table


def log_ratio_change(table: Sequence[dict]) -> float:
    """Relative change of median_regret / ln(n) between the two largest n."""
    a, b = table[-2], table[-1]
    ra = a["median_regret"] / math.log(a["value"])
    rb = b["median_regret"] / math.log(b["value"])
    return abs(rb - ra) / ra if ra > 0 else (0.0 if rb == 0 else math.inf)


def write_scaling_csv(table: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SCALING_HEADER, lineterminator="\n")
        w.writeheader()
        for row in table:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


# ---------------------------------------------------------------------------
# report rendering


def results_to_json(results: Sequence[LemmaResult]) -> str:
    return json.dumps([r.to_dict() for r in results], indent=1, default=float)


def results_to_text(results: Sequence[LemmaResult]) -> str:
    header = f"{'check':<14} {'trials':>8} {'failures':>9} {'worst_margin':>14} {'tolerance':>10}  result"
    lines = [header, "-" * len(header)]
    for r in results:
        lines.append(
            f"{r.lemma:<14} {r.trials:>8d} {r.failures:>9d} {r.worst_margin:>14.6g} "
            f"{r.tolerance:>10.3g}  {'PASS' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)
