import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowrank_bandits.analysis import (
    PROOF_PRODUCT,
    SCALING_HEADER,
    THEOREM_CONSTANT,
    DegenerateInstanceError,
    InsufficientDataError,
    LemmaResult,
    adversarial_corpus,
    best_value_table,
    check_concentration,
    check_elimination_stage,
    check_estimator,
    check_lemma2,
    check_lemma4,
    concentration_tolerance,
    elimination_deadline,
    log_ratio_change,
    regret_scaling_report,
    results_to_json,
    results_to_text,
    simplex_matching_witness,
    sqdet_table,
    theorem1_bound,
    write_scaling_csv,
)
from lowrank_bandits.bandit import c_of_n
from lowrank_bandits.environment import NoiseModel, generate_instance, make_instance
from lowrank_bandits.matcore import DSubset


def test_constants():
    assert THEOREM_CONSTANT == PROOF_PRODUCT == 3072


def test_matching_repeated_rows_example():
    Z = np.array([[1.0, 0.0], [1.0, 0.0]])
    pi, lhs, rhs = simplex_matching_witness(Z)
    assert lhs == pytest.approx(1.4142135623730951, abs=1e-15)
    assert rhs == pytest.approx(16.970562748477143, abs=1e-12)


def test_matching_permutation_is_free():
    Z = np.eye(3)[[2, 0, 1]]
    pi, lhs, rhs = simplex_matching_witness(Z)
    assert lhs == 0.0 and rhs == pytest.approx(0.0, abs=1e-12)
    assert list(Z[list(pi)].argmax(axis=1)) == [0, 1, 2]


@pytest.mark.parametrize("d", [1, 2, 3])
def test_lemma4_holds_on_corpus(d):
    res = check_lemma4(d, 300, np.random.default_rng(d))
    assert res.trials == 300 + len(adversarial_corpus(d))
    assert res.failures == 0 and res.passed
    for Z in adversarial_corpus(d):
        assert Z.min() >= 0 and Z.sum(axis=1).max() <= 1 + 1e-12


def test_lemma2_hand_case():
    inst = make_instance([0.9, 0.3], [0.8, 0.2])
    lhs = 0.72 - best_value_table(inst)
    np.testing.assert_allclose(lhs, [[0.0, 0.72 - 0.18], [0.72 - 0.24, 0.72 - 0.06]], atol=1e-15)
    res = check_lemma2(inst)
    assert res.trials == 4 and res.failures == 0
    # tightest case is the optimum itself, where both sides are zero
    assert res.worst_margin == pytest.approx(0.0, abs=1e-15)


@given(st.integers(1, 3), st.integers(0, 5000))
@settings(max_examples=25)
def test_lemma2_random(d, seed):
    assert check_lemma2(generate_instance(d + 2, d + 1, d, seed)).failures == 0


def test_sqdet_table_rank_one():
    inst = make_instance([0.9, 0.3], [0.8, 0.2])
    np.testing.assert_allclose(sqdet_table(inst), np.outer([0.81, 0.09], [0.64, 0.04]))


def test_bound_components_and_recompute():
    inst = make_instance([0.9, 0.3], [0.8, 0.2])
    rep = theorem1_bound(inst, 1000, empirical_regret=10.0)
    C = c_of_n(2, 2, 1, 1000)
    expected = 3072 * 1 * 4 / (0.64 * 0.04**2 * 0.60) * C + 4
    assert rep.theorem1_value == pytest.approx(expected, rel=1e-12)
    assert rep.is_consistent()
    assert rep.ratio == pytest.approx(10.0 / rep.theorem1_value)
    # c_bar > c_min here, so the variant is tighter
    assert rep.variant_value < rep.theorem1_value
    json.dumps(rep.to_dict())


def test_bound_monotone_in_n():
    inst = generate_instance(5, 5, 2, 1)
    values = [theorem1_bound(inst, n).theorem1_value for n in (10, 100, 1000, 10_000)]
    assert values == sorted(values)


def test_bound_degenerate():
    inst = make_instance([0.9, 0.0], [0.8, 0.2])
    with pytest.raises(DegenerateInstanceError):
        theorem1_bound(inst, 100)
    single = make_instance(np.eye(2) * 0.5, np.eye(2) * 0.8)
    assert theorem1_bound(single, 100).theorem1_value == 4.0


def test_elimination_deadline():
    assert elimination_deadline(1.0, 1.0) == 2  # 2^-2 < 0.5 <= 2^-1
    assert elimination_deadline(0.5, 0.5) == 4  # 2^-3 equals the target, not below it
    assert elimination_deadline(0.0, 1.0) == math.inf
    gaps = [0.9, 0.5, 0.1, 0.01]
    deadlines = [elimination_deadline(0.2, g) for g in gaps]
    assert deadlines == sorted(deadlines)


def test_concentration_tolerance():
    assert concentration_tolerance(10_000, 50) == pytest.approx(4e-4 + 3 * math.sqrt(4e-4 * (1 - 4e-4) / 50))
    assert concentration_tolerance(2, 10) == 1.0


def test_concentration_and_elimination_checks():
    inst = make_instance([1.0, 0.6, 0.45, 0.3], [1.0, 0.6, 0.45, 0.3])
    noise = NoiseModel("bernoulli")
    c = check_concentration(inst, noise, 20_000, 5)
    assert c.trials == 5 and c.passed and c.details["intervals_checked"] > 0
    e = check_elimination_stage(inst, noise, 20_000, 5)
    assert e.failures == 0 and e.details["deadlines_checked"] > 0


def test_estimator_check(rank_two):
    cols = [DSubset(J) for J in [(0, 1), (0, 2), (1, 3), (2, 4)]]
    res = check_estimator(rank_two, NoiseModel("bernoulli"), DSubset([0, 1]), cols, 20_000, np.random.default_rng(0))
    assert res.passed and res.details["max_abs_product"] <= 1.0
    exact = check_estimator(rank_two, NoiseModel("deterministic"), DSubset([0, 1]), cols[:1], 100, np.random.default_rng(0))
    assert exact.details["mean"] == pytest.approx(exact.details["target"])


def test_scaling_report(tmp_path):
    with pytest.raises(InsufficientDataError):
        regret_scaling_report("n", {10: [1.0], 100: [2.0]})
    table = regret_scaling_report("n", {1000: [1, 2, 3], 100: [1, 1, 1], 10_000: [4, 4, 5]})
    assert [r["value"] for r in table] == [100, 1000, 10_000]
    assert table[1]["median_regret"] == 2.0
    ra, rb = 2 / math.log(1000), 4 / math.log(10_000)
    assert log_ratio_change(table) == pytest.approx(abs(rb - ra) / ra)
    p = tmp_path / "s.csv"
    write_scaling_csv(table, p)
    rows = list(csv.DictReader(open(p)))
    assert list(rows[0]) == SCALING_HEADER and float(rows[2]["p75"]) == 4.5


def test_report_rendering():
    results = [LemmaResult("a", 10, 0, 0.5), LemmaResult("b", 10, 2, -0.1, tolerance=0.1)]
    text = results_to_text(results)
    assert "PASS" in text.splitlines()[2] and "FAIL" in text.splitlines()[3]
    doc = json.loads(results_to_json(results))
    assert [d["passed"] for d in doc] == [True, False]
