import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heralded_cluster import analytic, growth
from heralded_cluster.analytic import GrowthConditionError
from heralded_cluster.growth import GrowthStrategy
from heralded_cluster.protocol import ProtocolConfig


def within(report, sigmas=3.0):
    return abs(report.mean - report.analytic) <= sigmas * report.stderr


def test_sequential_discard_matches_sum():
    r = growth.simulate_sequential(4, 0.5, 40_000, seed=1)
    assert r.analytic == 14
    assert within(r)


def test_sequential_keep_remnant_matches_recursion():
    r = growth.simulate_sequential(4, 0.5, 40_000, seed=2, keep_remnant=True)
    assert r.analytic == pytest.approx(12)
    assert within(r)


@given(st.integers(2, 10), st.floats(0.05, 1.0))
def test_remnant_recursion_and_ordering(m, p):
    total = growth.sequential_cost(m, p, keep_remnant=True)
    prev = growth.sequential_cost(m - 1, p, keep_remnant=True)
    # cost of the last step obeys p T_k = 1 + (1 - p) T_{k-1}
    t_last = total - prev
    t_before = prev - growth.sequential_cost(m - 2, p, keep_remnant=True) if m > 2 else 0.0
    assert p * t_last == pytest.approx(1 + (1 - p) * t_before, rel=1e-9)
    assert total <= growth.sequential_cost(m, p) + 1e-9


def test_per_try_sampler_matches_step_sampler():
    rng = np.random.default_rng(0)
    a, qa = growth._grow(rng, np.ones(100_000), 5, 0.4, False)
    b, qb = growth._grow_from_scratch(rng, 100_000, 5, 0.4)
    for x, y in ((a, b), (qa, qb)):
        se = math.sqrt((x.var() + y.var()) / x.size)
        assert abs(x.mean() - y.mean()) < 4 * se
        assert y.var() == pytest.approx(x.var(), rel=0.05)


def test_results_independent_of_worker_count():
    trials = 2 * growth.BLOCK + 17
    serial = growth.simulate_sequential(3, 0.6, trials, seed=5, jobs=1)
    parallel = growth.simulate_sequential(3, 0.6, trials, seed=5, jobs=2)
    assert serial == parallel
    assert growth.simulate_sequential(3, 0.6, 1000, seed=6) != growth.simulate_sequential(3, 0.6, 1000, seed=7)


def test_join_growth_unit_probability():
    r = growth.simulate_join_growth(GrowthStrategy(m=4), 1.0, joins=500)
    assert r.mean == pytest.approx(4 / 3)
    assert r.stderr == 0


@pytest.mark.parametrize("recipe,m,p", [("sequential", 4, 0.5), ("pairwise", 5, 0.4), ("sequential", 3, 0.7)])
def test_join_growth_matches_closed_form(recipe, m, p):
    strat = GrowthStrategy(m=m, recipe=recipe)
    r = growth.simulate_join_growth(strat, p, joins=60_000, seed=3)
    assert within(r)
    assert r.extra["mean_gain"] == pytest.approx(p * m - 1, abs=4 * r.extra["gain_stderr"])
    assert r.extra["mean_build_eo"] == pytest.approx(r.extra["expected_build_eo"], rel=0.03)


def test_keep_remnant_join_growth_is_cheaper():
    p = 0.45
    discard = growth.simulate_join_growth(GrowthStrategy(m=4), p, 40_000, seed=4)
    keep = growth.simulate_join_growth(GrowthStrategy(m=4, keep_remnant=True), p, 40_000, seed=4)
    assert keep.analytic is not None and within(keep)
    assert keep.mean < discard.mean


def test_growth_condition():
    with pytest.raises(GrowthConditionError, match="m > 1/p"):
        growth.simulate_join_growth(GrowthStrategy(m=4), 0.25, joins=100)
    with pytest.raises(GrowthConditionError):
        growth.trace_join_growth(GrowthStrategy(m=3), 0.3, 20)


def test_strategy_validation():
    with pytest.raises(NotImplementedError):
        GrowthStrategy(recycling=True)
    with pytest.raises(ValueError):
        GrowthStrategy(kind="RANDOM")
    with pytest.raises(ValueError):
        GrowthStrategy(m=1)
    with pytest.raises(ValueError):
        GrowthStrategy(recipe="magic")
    with pytest.raises(ValueError):
        growth.simulate_sequential(4, 0.0)
    assert GrowthStrategy(m=5).pair_lengths() == (3, 3)
    assert GrowthStrategy(m=4).pair_lengths() == (3, 2)


def test_pairwise_five_chain_build_cost():
    p = 0.245
    assert growth.build_cost(GrowthStrategy(m=5, recipe="pairwise"), p) == pytest.approx(analytic.five_chain_cost_pairwise(p))
    assert growth.join_cost_per_qubit(GrowthStrategy(m=5, recipe="pairwise"), p) == pytest.approx(
        analytic.cost_per_qubit("C5", p)
    )


@pytest.mark.parametrize("N,m,p", [(10, 3, 0.3), (20, 5, 0.8)])
def test_single_join_length(N, m, p):
    r = growth.empirical_join_length(N, m, p, trials=20_000, seed=1)
    assert r.expected == pytest.approx(p * (N + m - 1) + (1 - p) * (N - 1))
    assert abs(r.mean - r.expected) <= 3 * r.stderr


def test_threshold_scan():
    rows = {r["p"]: r for r in growth.threshold_scan([0.24, 0.26, 0.5])}
    assert rows[0.24]["minimal_m"] == 5 and rows[0.24]["C4"] is None and rows[0.24]["cheapest"] == "C5"
    assert rows[0.26]["minimal_m"] == 4
    assert rows[0.5]["minimal_m"] == 3 and rows[0.5]["cheapest"] == "C4"


def test_traces():
    t = growth.trace_sequential(6, 0.5, seed=2)
    assert t.final_length == 6 and t.eo_attempts == len(t.events) == t.makespan
    assert all(json.loads(line)["kind"] == "extend" for line in t.to_jsonl().splitlines())
    j = growth.trace_join_growth(GrowthStrategy(m=4), 0.5, 30, seed=2)
    assert j.final_length >= 30
    assert j.makespan <= j.eo_attempts
    assert j.events[0].kind == "build"


def test_physical_probability_feeds_growth():
    p = growth.physical_success_probability(ProtocolConfig.converged())
    assert p == pytest.approx(0.5, abs=1e-9)
