import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowrank_bandits.bandit import (
    TRACE_HEADER,
    ChainError,
    ElimConfig,
    HorizonError,
    c_of_n,
    chain_replace,
    explore_cover,
    lowrank_elim,
    n_ell,
    noise_free_max,
    stage_estimate,
    ucb1_baseline,
)
from lowrank_bandits.environment import NoiseModel, generate_instance, make_instance
from lowrank_bandits.matcore import DSubset, DomainError

BERN = NoiseModel("bernoulli")
EXACT = NoiseModel("deterministic")


def test_c_of_n_frozen_values():
    # 4 * 1^2 * ln((2 + 2) * 100) = 4 ln 400
    assert c_of_n(2, 2, 1, 100) == pytest.approx(23.965858188431927, rel=1e-14)
    # det_max(3)^2 = 4, so the prefactor is 16
    assert c_of_n(4, 4, 3, 10) == pytest.approx(16 * math.log(128 * 10), rel=1e-14)
    with pytest.raises(DomainError):
        c_of_n(2, 2, 1, 0)


@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 4), st.integers(1, 10**7))
def test_c_of_n_monotone(K, L, d, n):
    base = c_of_n(K, L, d, n)
    assert c_of_n(K, L, d, n + 1) > base
    assert c_of_n(K + 1, L, d, n) > base


def test_n_ell_ceiling():
    assert n_ell(1.0, 2.5) == 10
    assert n_ell(0.5, 2.6) == 42


def test_stage_estimate_examples():
    eye = np.eye(2)[None]
    assert stage_estimate(eye, eye) == 1.0
    swap = np.array([[[0.0, 1.0], [1.0, 0.0]]])
    assert stage_estimate(np.concatenate([eye, swap]), np.concatenate([eye, eye])) == 0.0
    with pytest.raises(ValueError):
        stage_estimate(np.zeros((0, 2, 2)), np.zeros((0, 2, 2)))


def test_explore_cover():
    active = [DSubset([1, 3]), DSubset([0, 1]), DSubset([2, 3])]
    cover = explore_cover(active)
    assert cover == {0: (0, 1), 1: (0, 1), 2: (2, 3), 3: (1, 3)}
    with pytest.raises(DomainError):
        explore_cover(active, ground_size=3)


def test_chain_replace():
    a, b, c = DSubset([0]), DSubset([1]), DSubset([2])
    assert chain_replace(a, {a: b, b: c}) == c
    assert chain_replace(c, {a: b}) == c
    with pytest.raises(ChainError):
        chain_replace(a, {a: b, b: a})


def test_noise_free_max_examples():
    inst = make_instance([0.2, 0.9, 0.5], [0.4, 0.7], base_rows=[1], base_cols=[1])
    assert noise_free_max(inst.Rbar, 1) == (DSubset([1]), DSubset([1]))
    for seed in range(20):
        g = generate_instance(6, 5, 2, seed)
        assert noise_free_max(g.Rbar, 2) == (g.base_rows, g.base_cols)
    with pytest.warns(RuntimeWarning):
        noise_free_max(np.zeros((2, 2)), 1)


def test_config_validation():
    with pytest.raises(DomainError):
        ElimConfig(n=0)
    for bad in ({"regret_mode": "x"}, {"exploration_mode": "x"}, {"budget_unit": "x"}):
        with pytest.raises(ValueError):
            ElimConfig(n=10, **bad)


@pytest.fixture(scope="module")
def d2_trace():
    inst = generate_instance(5, 4, 2, 7)
    return inst, lowrank_elim(inst, BERN, ElimConfig(n=200_000, seed=3))


def test_stage_invariants(d2_trace):
    inst, trace = d2_trace
    C = c_of_n(inst.K, inst.L, inst.d, 200_000)
    assert trace.completed_stages >= 2
    for k, st_ in enumerate(trace.stages):
        assert st_.ell == k and st_.delta_tilde == 2.0**-k
        assert st_.n_ell == math.ceil(4 * C * 4**k)
        assert st_.delta_ell == pytest.approx(math.sqrt(C / st_.n_ell))
        assert st_.delta_ell <= st_.delta_tilde / 2
        for S in st_.active_rows:
            assert st_.ucb_rows[S] - st_.lcb_rows[S] == pytest.approx(2 * st_.delta_ell)
        assert st_.max_abs_product <= 1.0  # det_max(2)^2
    for a, b in zip(trace.stages, trace.stages[1:]):
        assert 4 * a.n_ell - 3 <= b.n_ell <= 4 * a.n_ell
        assert set(b.active_rows) <= set(a.active_rows)
    assert trace.budget_used == len(trace) == 200_000


def test_optimum_survives(d2_trace):
    inst, trace = d2_trace
    for st_ in trace.stages:
        assert inst.base_rows in st_.active_rows and inst.base_cols in st_.active_cols
    assert all(e.subset not in (inst.base_rows, inst.base_cols) for e in trace.eliminations)


@pytest.mark.parametrize("n", [1, 50, 3_000, 40_000])
def test_observation_budget_cap(n):
    inst = generate_instance(4, 4, 2, 1)
    trace = lowrank_elim(inst, BERN, ElimConfig(n=n, budget_unit="observation"))
    assert trace.observations_used <= n
    assert trace.budget_used == len(trace) == n


def test_small_budget_flags():
    inst = generate_instance(4, 4, 1, 1)
    trace = lowrank_elim(inst, BERN, ElimConfig(n=5))
    assert trace.completed_stages == 0 and len(trace) == 5
    assert any("no stage completed" in f for f in trace.flags)


def test_determinism():
    inst = generate_instance(5, 5, 2, 2)
    cfg = ElimConfig(n=30_000, seed=11)
    a, b = lowrank_elim(inst, BERN, cfg), lowrank_elim(inst, BERN, cfg)
    np.testing.assert_array_equal(a.rewards, b.rewards)
    np.testing.assert_array_equal(a.row_ids, b.row_ids)
    assert a.eliminations == b.eliminations
    c = lowrank_elim(inst, BERN, ElimConfig(n=30_000, seed=12))
    assert not np.array_equal(a.rewards, c.rewards)


WIDE = make_instance([0.3, 1.0, 0.2], [0.2, 0.1, 1.0], base_rows=[1], base_cols=[2])


@pytest.mark.parametrize("seed", range(5))
def test_zero_noise_converges_to_optimum(seed):
    trace = lowrank_elim(WIDE, EXACT, ElimConfig(n=100_000, seed=seed))
    assert trace.survivors == (DSubset([1]), DSubset([2]))
    assert trace.inst_regret[-1] == 0.0


def test_full_rank_square_has_no_regret():
    inst = generate_instance(3, 3, 3, 0)
    trace = lowrank_elim(inst, BERN, ElimConfig(n=1000))
    assert trace.cumulative_regret == 0.0 and trace.completed_stages == 0
    assert trace.survivors == (DSubset([0, 1, 2]), DSubset([0, 1, 2]))


def test_symmetric_factors_eliminate_the_same_subsets():
    u = [1.0, 0.3, 0.2, 0.1]
    trace = lowrank_elim(make_instance(u, u), EXACT, ElimConfig(n=100_000))
    rows = {e.subset for e in trace.eliminations if e.side == "row"}
    cols = {e.subset for e in trace.eliminations if e.side == "col"}
    assert rows == cols == {DSubset([1]), DSubset([2]), DSubset([3])}


def test_chain_mode_runs_and_keeps_optimum():
    trace = lowrank_elim(WIDE, EXACT, ElimConfig(n=100_000, exploration_mode="chain"))
    assert trace.survivors == (DSubset([1]), DSubset([2]))
    later = trace.stages[-1]
    assert sum(later.row_draw_weights.values()) == pytest.approx(1.0)


def test_sum_entries_regret_mode():
    inst = generate_instance(4, 4, 2, 5)
    a = lowrank_elim(inst, EXACT, ElimConfig(n=20_000, regret_mode="sum-entries"))
    R = np.asarray(inst.Rbar)
    top = R[np.ix_(inst.base_rows, inst.base_cols)].sum()
    for t, I, J, _, reg in list(a.steps())[:50]:
        assert reg == pytest.approx(top - R[np.ix_(I, J)].sum())


def test_trace_files(tmp_path, d2_trace):
    _, trace = d2_trace
    p = tmp_path / "trace.csv"
    trace.write_csv(p)
    with open(p, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == TRACE_HEADER and len(rows) == len(trace) + 1
    t, r, c, rew, inst_reg, cum = rows[-1]
    assert int(t) == len(trace) - 1
    assert DSubset.from_label(r).d == 2 and DSubset.from_label(c).d == 2
    assert float(cum) == pytest.approx(trace.cumulative_regret)
    assert b"\r\n" not in p.read_bytes()
    q = tmp_path / "elim.jsonl"
    trace.write_eliminations(q)
    docs = [json.loads(line) for line in q.read_text().splitlines()]
    assert len(docs) == len(trace.eliminations)
    assert all(set(doc) == {"stage", "side", "subset", "eliminator"} for doc in docs)


def test_ucb1_edge_cases():
    inst = make_instance([0.9, 0.3], [0.8, 0.2])
    with pytest.raises(HorizonError):
        ucb1_baseline(inst, BERN, 3, np.random.default_rng(0))
    tr = ucb1_baseline(inst, BERN, 4, np.random.default_rng(0))
    assert sorted(zip(tr.row_ids, tr.col_ids)) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    tr = ucb1_baseline(inst, EXACT, 5000, np.random.default_rng(0))
    assert tr.inst_regret.min() >= 0
    assert (tr.inst_regret[-1000:] == 0).mean() > 0.9
