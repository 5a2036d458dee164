"""
LowRankElim and friends.

``lowrank_elim`` runs the staged elimination over d-rows and d-columns: each
stage draws ``n_ell`` random active pairs ``(I_t, J_t)``, explores every
remaining row over ``J_t`` and every remaining column over ``I_t`` twice, forms
the determinant-product estimates of the scaled volumes and drops every subset
whose UCB is at most the best LCB.

Budget accounting (``ElimConfig.budget_unit``):

* ``"step"`` (default): one unit per draw of ``(I_t, J_t)``; the instantaneous
  regret of the step is that of ``(I_t, J_t)``.
* ``"observation"``: one unit per observed d x d submatrix (every row and
  column exploration, both passes); each contributes the regret of the
  observed pair.

Instantaneous regret is computed from the mean matrix unless
``stochastic_regret`` is set.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from lowrank_bandits.environment import HottTopicsInstance, NoiseModel, _guard
from lowrank_bandits.matcore import DSubset, DomainError, det_batch, det_max, enum_subsets

REGRET_MODES = ("best-entry", "sum-entries")
EXPLORATION_MODES = ("restricted", "chain")
BUDGET_UNITS = ("step", "observation")

TRACE_HEADER = ["step", "row_subset", "col_subset", "reward", "inst_regret", "cum_regret"]


class ChainError(RuntimeError):
    pass


class HorizonError(ValueError):
    pass


@dataclass(frozen=True)
class ElimConfig:
    n: int
    regret_mode: str = "best-entry"
    exploration_mode: str = "restricted"
    seed: int = 0
    budget_unit: str = "step"
    stochastic_regret: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise DomainError(f"horizon must be >= 1, got {self.n}")
        if self.regret_mode not in REGRET_MODES:
            raise ValueError(f"regret_mode must be one of {REGRET_MODES}")
        if self.exploration_mode not in EXPLORATION_MODES:
            raise ValueError(f"exploration_mode must be one of {EXPLORATION_MODES}")
        if self.budget_unit not in BUDGET_UNITS:
            raise ValueError(f"budget_unit must be one of {BUDGET_UNITS}")


@dataclass
class StageState:
    """Everything computed in one completed stage.

    ``row_draw_weights`` / ``col_draw_weights`` give the probability with which
    each active subset is drawn as ``I_t`` / ``J_t``; they define the expected
    scaled volumes the estimates concentrate around.
    """

    ell: int
    delta_tilde: float
    n_ell: int
    delta_ell: float
    active_rows: List[DSubset]
    active_cols: List[DSubset]
    mu_hat_rows: Dict[DSubset, float]
    mu_hat_cols: Dict[DSubset, float]
    ucb_rows: Dict[DSubset, float]
    lcb_rows: Dict[DSubset, float]
    ucb_cols: Dict[DSubset, float]
    lcb_cols: Dict[DSubset, float]
    best_row: DSubset
    best_col: DSubset
    eliminated_rows: List[DSubset]
    eliminated_cols: List[DSubset]
    row_draw_weights: Dict[DSubset, float]
    col_draw_weights: Dict[DSubset, float]
    submatrices_observed: int
    entries_observed: int
    max_abs_product: float


@dataclass(frozen=True)
class Elimination:
    stage: int
    side: str
    subset: DSubset
    eliminator: DSubset

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "side": self.side,
            "subset": list(self.subset),
            "eliminator": list(self.eliminator),
        }


@dataclass
class RegretTrace:
    row_subsets: List[DSubset]
    col_subsets: List[DSubset]
    row_ids: np.ndarray
    col_ids: np.ndarray
    rewards: np.ndarray
    inst_regret: np.ndarray
    eliminations: List[Elimination] = field(default_factory=list)
    observations_used: int = 0
    budget_used: int = 0
    completed_stages: int = 0
    stages: List[StageState] = field(default_factory=list)
    survivors: Optional[Tuple[DSubset, DSubset]] = None
    flags: List[str] = field(default_factory=list)

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.inst_regret)

    @property
    def cumulative_regret(self) -> float:
        return float(self.inst_regret.sum())

    def __len__(self) -> int:
        return len(self.inst_regret)

    def steps(self) -> Iterator[Tuple[int, DSubset, DSubset, float, float]]:
        for t in range(len(self)):
            yield (
                t,
                self.row_subsets[self.row_ids[t]],
                self.col_subsets[self.col_ids[t]],
                float(self.rewards[t]),
                float(self.inst_regret[t]),
            )

    def write_csv(self, path) -> None:
        rlab = [S.label() for S in self.row_subsets]
        clab = [S.label() for S in self.col_subsets]
        cum = self.cum_regret
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for t in range(len(self)):
                w.writerow(
                    [
                        t,
                        rlab[self.row_ids[t]],
                        clab[self.col_ids[t]],
                        repr(float(self.rewards[t])),
                        repr(float(self.inst_regret[t])),
                        repr(float(cum[t])),
                    ]
                )

    def write_eliminations(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.eliminations:
                fh.write(json.dumps(e.to_dict()) + "\n")


# ---------------------------------------------------------------------------
# noise-free


def noise_free_max(Rbar, d: int) -> Tuple[DSubset, DSubset]:
    """Optimal d-row and d-column of a noise-free rank-d mean matrix.

    Scans all d-rows against the fixed d-column ``0..d-1`` (and vice versa),
    keeping the largest squared determinant; ties go to the lexicographically
    smallest subset.
    """
    R = np.asarray(Rbar, dtype=float)
    K, L = R.shape
    rows, cols = enum_subsets(K, d), enum_subsets(L, d)
    J1, I1 = list(cols[0]), list(rows[0])
    row_vals = det_batch(R[np.array(rows)][:, :, J1]) ** 2
    col_vals = det_batch(R[I1][:, np.array(cols)].transpose(1, 0, 2)) ** 2
    best_i = _first_argmax(row_vals)
    best_j = _first_argmax(col_vals)
    if min(row_vals[best_i], col_vals[best_j]) < 1e-14:
        warnings.warn("winning squared determinant is below 1e-14; c_min may be zero", RuntimeWarning)
    return rows[best_i], cols[best_j]


def _first_argmax(vals: np.ndarray) -> int:
    # strict ">" update over the lexicographic scan
    best = 0
    for k in range(1, len(vals)):
        if vals[k] > vals[best]:
            best = k
    return best


# ---------------------------------------------------------------------------
# LowRankElim pieces


def c_of_n(K: int, L: int, d: int, n: int) -> float:
    """Confidence-radius numerator ``4 det_max(d)^2 log((K^d + L^d) n)``."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    total = (K**d + L**d) * n  # exact integer arithmetic
    if total.bit_length() > 1000:
        raise DomainError(f"(K^d + L^d) n is too large to represent (K={K}, L={L}, d={d})")
    return 4.0 * det_max(d) ** 2 * math.log(total)


def stage_estimate(obs1: Sequence, obs2: Sequence) -> float:
    """Mean of ``det(obs1[t]) * det(obs2[t])`` over the stage."""
    a, b = np.asarray(obs1, dtype=float), np.asarray(obs2, dtype=float)
    if a.shape != b.shape or a.ndim != 3 or a.shape[0] == 0:
        raise ValueError(f"observation stacks must match and be non-empty, got {a.shape} and {b.shape}")
    return float(np.mean(det_batch(a) * det_batch(b)))


def explore_cover(active: Sequence[DSubset], ground_size: Optional[int] = None) -> Dict[int, DSubset]:
    """Map each index in the union of ``active`` to the smallest active subset holding it."""
    cover: Dict[int, DSubset] = {}
    for S in sorted(active):
        for i in S:
            if ground_size is not None and not 0 <= i < ground_size:
                raise DomainError(f"index {i} outside [0, {ground_size})")
            cover.setdefault(i, S)
    return dict(sorted(cover.items()))


def chain_replace(drawn: DSubset, elim_map: Mapping[DSubset, DSubset]) -> DSubset:
    """Follow eliminator links from ``drawn`` until reaching an active subset."""
    seen = {drawn}
    cur = drawn
    while cur in elim_map:
        cur = elim_map[cur]
        if cur in seen:
            raise ChainError(f"elimination chain from {drawn} has a cycle at {cur}")
        seen.add(cur)
    return cur


def n_ell(delta_tilde: float, C: float) -> int:
    return int(math.ceil(4.0 * C / delta_tilde**2))


class _Recorder:
    """Accumulates per-unit records and evaluates their regret."""

    def __init__(self, inst, noise, cfg, rows_arr, cols_arr, rng):
        self.inst, self.noise, self.cfg, self.rng = inst, noise, cfg, rng
        self.rows_arr, self.cols_arr = rows_arr, cols_arr
        self.R = np.asarray(inst.Rbar)
        self.Istar, self.Jstar = list(inst.base_rows), list(inst.base_cols)
        self.best = float(self.R[np.ix_(self.Istar, self.Jstar)].max())
        self.best_sum = float(self.R[np.ix_(self.Istar, self.Jstar)].sum())
        self.parts: List[Tuple[np.ndarray, ...]] = []

    def add(self, ri: np.ndarray, ci: np.ndarray) -> None:
        if len(ri) == 0:
            return
        blocks = self.R[self.rows_arr[ri][:, :, None], self.cols_arr[ci][:, None, :]]
        vals = blocks.max(axis=(1, 2))
        rewards = self.noise.sample(vals, self.rng)
        if self.cfg.regret_mode == "best-entry":
            if self.cfg.stochastic_regret:
                regret = self.noise.sample(np.full(len(vals), self.best), self.rng) - rewards
            else:
                regret = self.best - vals
        else:
            if self.cfg.stochastic_regret:
                top = self.R[np.ix_(self.Istar, self.Jstar)]
                top_draw = self.noise.sample(np.broadcast_to(top, blocks.shape), self.rng).sum(axis=(1, 2))
                regret = top_draw - self.noise.sample(blocks, self.rng).sum(axis=(1, 2))
            else:
                regret = self.best_sum - blocks.sum(axis=(1, 2))
        self.parts.append((ri.astype(np.int32), ci.astype(np.int32), rewards, regret))

    def arrays(self):
        if not self.parts:
            e = np.zeros(0)
            return np.zeros(0, np.int32), np.zeros(0, np.int32), e, e
        return tuple(np.concatenate(p) for p in zip(*self.parts))


def _resolve_all(n_all: int, elim_map: Dict[int, int]) -> np.ndarray:
    out = np.arange(n_all)
    for s in range(n_all):
        seen = {s}
        cur = s
        while cur in elim_map:
            cur = elim_map[cur]
            if cur in seen:
                raise ChainError(f"elimination chain from subset {s} has a cycle")
            seen.add(cur)
        out[s] = cur
    return out


def _draw(active: List[int], n_all: int, elim_map: Dict[int, int], m: int, mode: str, rng):
    """Draw ``m`` subset ids and return them with the draw distribution over ``active``."""
    if mode == "restricted":
        act = np.asarray(active)
        ids = act[rng.integers(0, len(act), size=m)]
        weights = {a: 1.0 / len(act) for a in active}
    else:
        resolved = _resolve_all(n_all, elim_map)
        ids = resolved[rng.integers(0, n_all, size=m)]
        counts = np.bincount(resolved, minlength=n_all)
        weights = {a: counts[a] / n_all for a in active}
    return ids, weights


def _estimate_side(
    means_fn, m: int, covered: np.ndarray, subsets_pos: np.ndarray, noise, rng, d: int
) -> Tuple[np.ndarray, float]:
    """Sum over t of det(obs1) det(obs2) for every active subset, in t-blocks."""
    n_act = len(subsets_pos)
    sums = np.zeros(n_act)
    worst = 0.0
    block = max(1, 4_000_000 // (n_act * d * d + len(covered) * d))
    for start in range(0, m, block):
        stop = min(m, start + block)
        means = means_fn(start, stop)  # (b, |covered|, d)
        o1 = noise.sample(means, rng)
        o2 = noise.sample(means, rng)
        prod = det_batch(o1[:, subsets_pos, :]) * det_batch(o2[:, subsets_pos, :])
        sums += prod.sum(axis=0)
        worst = max(worst, float(np.abs(prod).max()))
    return sums, worst


def lowrank_elim(inst: HottTopicsInstance, noise: NoiseModel, cfg: ElimConfig) -> RegretTrace:
    K, L, d, n = inst.K, inst.L, inst.d, cfg.n
    _guard(K, L, d)
    R = np.asarray(inst.Rbar)
    rows, cols = enum_subsets(K, d), enum_subsets(L, d)
    rows_arr, cols_arr = np.array(rows, dtype=int), np.array(cols, dtype=int)
    draw_rng, obs_rng, rew_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3))
    rec = _Recorder(inst, noise, cfg, rows_arr, cols_arr, rew_rng)

    active_r, active_c = list(range(len(rows))), list(range(len(cols)))
    elim_r: Dict[int, int] = {}
    elim_c: Dict[int, int] = {}
    C = c_of_n(K, L, d, n)
    trace = RegretTrace(rows, cols, *(np.zeros(0),) * 4)
    used = observations = 0
    ell, dt = 0, 1.0

    while used < n:
        if len(active_r) == 1 and len(active_c) == 1:
            m = n - used
            rec.add(np.full(m, active_r[0]), np.full(m, active_c[0]))
            observations += m
            used = n
            break
        n_l = n_ell(dt, C)
        cover_r = explore_cover([rows[a] for a in active_r])
        cover_c = explore_cover([cols[a] for a in active_c])
        obs_per_step = 2 * (len(cover_r) + len(cover_c))
        cost = 1 if cfg.budget_unit == "step" else obs_per_step
        remaining = n - used
        complete = n_l * cost <= remaining
        m = n_l if complete else -(-remaining // cost)

        It, w_r = _draw(active_r, len(rows), elim_r, m, cfg.exploration_mode, draw_rng)
        Jt, w_c = _draw(active_c, len(cols), elim_c, m, cfg.exploration_mode, draw_rng)

        if cfg.budget_unit == "step":
            rec.add(It[:remaining], Jt[:remaining])
        else:
            cr = np.array([rows.index(S) for S in cover_r.values()])
            cc = np.array([cols.index(S) for S in cover_c.values()])
            # per step: (rows over J_t, columns over I_t) for k = 1, 2
            ri = np.concatenate([cr, np.repeat(-1, len(cc))] * 2)
            ci = np.concatenate([np.repeat(-1, len(cr)), cc] * 2)
            ri_all = np.where(ri[None, :] >= 0, ri[None, :], It[:, None]).ravel()
            ci_all = np.where(ci[None, :] >= 0, ci[None, :], Jt[:, None]).ravel()
            rec.add(ri_all[:remaining], ci_all[:remaining])
        if not complete:
            observations += remaining if cfg.budget_unit == "observation" else remaining * obs_per_step
            used = n
            trace.flags.append(f"stage {ell} truncated by the budget; its estimates were discarded")
            break

        used += n_l * cost
        observations += n_l * obs_per_step

        covered_r = np.array(list(cover_r.keys()))
        covered_c = np.array(list(cover_c.keys()))
        pos_r = np.searchsorted(covered_r, rows_arr[active_r])
        pos_c = np.searchsorted(covered_c, cols_arr[active_c])
        Jcols, Irows = cols_arr[Jt], rows_arr[It]

        def row_means(a, b):
            return R[covered_r[None, :, None], Jcols[a:b, None, :]]

        def col_means(a, b):
            return R[Irows[a:b, None, :], covered_c[None, :, None]]

        sum_r, worst_r = _estimate_side(row_means, n_l, covered_r, pos_r, noise, obs_rng, d)
        sum_c, worst_c = _estimate_side(col_means, n_l, covered_c, pos_c, noise, obs_rng, d)
        mu_r, mu_c = sum_r / n_l, sum_c / n_l
        delta = math.sqrt(C / n_l)

        ucb_r, lcb_r = mu_r + delta, mu_r - delta
        ucb_c, lcb_c = mu_c + delta, mu_c - delta
        # np.argmax keeps the first maximiser, i.e. the lexicographically smallest subset
        best_r, best_c = int(np.argmax(lcb_r)), int(np.argmax(lcb_c))
        drop_r = [a for a, u in zip(active_r, ucb_r) if u <= lcb_r[best_r]]
        drop_c = [a for a, u in zip(active_c, ucb_c) if u <= lcb_c[best_c]]
        for a in drop_r:
            elim_r[a] = active_r[best_r]
            trace.eliminations.append(Elimination(ell, "row", rows[a], rows[active_r[best_r]]))
        for a in drop_c:
            elim_c[a] = active_c[best_c]
            trace.eliminations.append(Elimination(ell, "col", cols[a], cols[active_c[best_c]]))

        trace.stages.append(
            StageState(
                ell=ell,
                delta_tilde=dt,
                n_ell=n_l,
                delta_ell=delta,
                active_rows=[rows[a] for a in active_r],
                active_cols=[cols[a] for a in active_c],
                mu_hat_rows={rows[a]: float(v) for a, v in zip(active_r, mu_r)},
                mu_hat_cols={cols[a]: float(v) for a, v in zip(active_c, mu_c)},
                ucb_rows={rows[a]: float(v) for a, v in zip(active_r, ucb_r)},
                lcb_rows={rows[a]: float(v) for a, v in zip(active_r, lcb_r)},
                ucb_cols={cols[a]: float(v) for a, v in zip(active_c, ucb_c)},
                lcb_cols={cols[a]: float(v) for a, v in zip(active_c, lcb_c)},
                best_row=rows[active_r[best_r]],
                best_col=cols[active_c[best_c]],
                eliminated_rows=[rows[a] for a in drop_r],
                eliminated_cols=[cols[a] for a in drop_c],
                row_draw_weights={rows[a]: float(w) for a, w in w_r.items()},
                col_draw_weights={cols[a]: float(w) for a, w in w_c.items()},
                submatrices_observed=n_l * obs_per_step,
                entries_observed=n_l * obs_per_step * d * d,
                max_abs_product=max(worst_r, worst_c),
            )
        )
        active_r = [a for a in active_r if a not in elim_r]
        active_c = [a for a in active_c if a not in elim_c]
        ell += 1
        dt /= 2.0

    trace.row_ids, trace.col_ids, trace.rewards, trace.inst_regret = rec.arrays()
    trace.budget_used = used
    trace.observations_used = observations
    trace.completed_stages = len(trace.stages)
    if len(active_r) == 1 and len(active_c) == 1:
        trace.survivors = (rows[active_r[0]], cols[active_c[0]])
    if trace.completed_stages == 0 and trace.survivors is None:
        trace.flags.append("budget too small for a single stage: no stage completed")
    return trace


# ---------------------------------------------------------------------------
# baseline


def ucb1_baseline(inst: HottTopicsInstance, noise: NoiseModel, n: int, rng: np.random.Generator) -> RegretTrace:
    """UCB1 over all K*L single entries: pull each once, then maximise mean + sqrt(2 ln t / pulls)."""
    K, L = inst.K, inst.L
    n_arms = K * L
    if n < n_arms:
        raise HorizonError(f"UCB1 needs n >= K*L = {n_arms}, got {n}")
    means = np.asarray(inst.Rbar).ravel()
    best = means.max()
    pulls = np.zeros(n_arms)
    sums = np.zeros(n_arms)
    arms = np.empty(n, dtype=np.int64)
    rewards = np.empty(n)
    queue: Dict[int, List[float]] = {}

    def pull(a: int) -> float:
        q = queue.get(a)
        if not q:
            q = list(noise.sample(np.full(256, means[a]), rng))
            q.reverse()
            queue[a] = q
        return q.pop()

    for t in range(n):
        if t < n_arms:
            a = t
        else:
            a = int(np.argmax(sums / pulls + np.sqrt(2.0 * math.log(t) / pulls)))
        r = pull(a)
        pulls[a] += 1
        sums[a] += r
        arms[t] = a
        rewards[t] = r
    singles_r = [DSubset([i]) for i in range(K)]
    singles_c = [DSubset([j]) for j in range(L)]
    return RegretTrace(
        singles_r,
        singles_c,
        (arms // L).astype(np.int32),
        (arms % L).astype(np.int32),
        rewards,
        best - means[arms],
        observations_used=n,
        budget_used=n,
    )
