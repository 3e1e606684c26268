import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from restoroute.degrade import ALL_KINDS, DegradationKind as K, Severity
from restoroute.errors import InvalidArgumentError, NothingToPlanError, RouteExhaustedError
from restoroute.router import (
    EXPERT_ORDER,
    STRATEGIES,
    ExperienceRecord,
    HeuristicPredictor,
    KnowledgeBase,
    Route,
    RouteState,
    ScriptedPredictor,
    enumerate_full,
    enumerate_tree,
    expert_order,
    plan,
    reroute,
    simulate_strategy,
    t_full,
    t_ours,
    t_tree,
)


def record(seq, success, score=None, ts=0, kinds=None):
    kinds = kinds or seq
    return ExperienceRecord({k: Severity.MEDIUM for k in kinds}, tuple(seq), (), success, score, ts)


# --- plan ---------------------------------------------------------------------


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_singleton_plans_to_itself(strategy):
    assert plan([K.NOISE], strategy).subtasks == (K.NOISE,)


def test_expert_and_reverse_examples():
    assert plan({K.NOISE, K.COMPRESSION}, "expert").subtasks == (K.COMPRESSION, K.NOISE)
    assert plan({K.NOISE, K.COMPRESSION}, "reverse").subtasks == (K.NOISE, K.COMPRESSION)


def test_expert_order_covers_all_kinds():
    assert sorted(EXPERT_ORDER, key=lambda k: k.index) == list(ALL_KINDS)


@given(st.sets(st.sampled_from(ALL_KINDS), min_size=1), st.sampled_from(STRATEGIES), st.integers(0, 2**32))
def test_every_route_is_a_permutation_of_active(kinds, strategy, seed):
    route = plan(kinds, strategy, KnowledgeBase(), seed=seed)
    assert sorted(route.subtasks, key=lambda k: k.index) == sorted(kinds, key=lambda k: k.index)
    assert route.origin == strategy


def test_random_plan_is_seeded():
    kinds = set(ALL_KINDS)
    assert plan(kinds, "random", seed=5) == plan(kinds, "random", seed=5)
    assert len({plan(kinds, "random", seed=s).subtasks for s in range(10)}) > 1


def test_experience_uses_kb_top_sequence():
    kb = KnowledgeBase([record([K.NOISE, K.COMPRESSION], True, 30.0)]).consolidate()
    assert plan({K.NOISE, K.COMPRESSION}, "experience", kb).subtasks == (K.NOISE, K.COMPRESSION)
    assert plan({K.NOISE, K.COMPRESSION}, "ours", kb).subtasks == (K.NOISE, K.COMPRESSION)
    # zero-shot ignores the kb
    assert plan({K.NOISE, K.COMPRESSION}, "zero-shot", kb).subtasks == (K.COMPRESSION, K.NOISE)


def test_plan_errors():
    with pytest.raises(NothingToPlanError):
        plan([], "expert")
    with pytest.raises(InvalidArgumentError):
        plan([K.NOISE], "bogus")
    with pytest.raises(InvalidArgumentError):
        Route((K.NOISE, K.NOISE))


# --- reroute ------------------------------------------------------------------


def test_two_kind_swap():
    state = RouteState.start(Route((K.COMPRESSION, K.NOISE)))
    new = reroute(state, K.COMPRESSION, HeuristicPredictor())
    assert new.subtasks == (K.NOISE, K.COMPRESSION)
    assert state.failed_prefixes == {(K.COMPRESSION,)}
    assert state.rollback_count == 0


def test_reroute_requires_failed_head():
    state = RouteState.start(Route((K.COMPRESSION, K.NOISE)))
    with pytest.raises(InvalidArgumentError):
        reroute(state, K.NOISE)


def drive(kinds, fails, predictor):
    """Run the route state machine against ``fails(prefix)``; returns every executed prefix."""
    state = RouteState.start(Route(tuple(predictor.complete(kinds, set(), None))))
    executed = []
    while state.remaining:
        kind = state.remaining[0]
        node = state.prefix + (kind,)
        executed.append(node)
        if fails(node):
            reroute(state, kind, predictor, on_rollback=lambda snap: None)
        else:
            state.advance("tool", snapshot=node)
        assert len(state.snapshots) == len(state.completed)
    return executed, state


def test_exhaustion_visits_each_tree_node_once():
    kinds = [K.NOISE, K.BLUR, K.HAZE]
    with pytest.raises(RouteExhaustedError):
        drive(kinds, lambda node: len(node) == 3, HeuristicPredictor())
    executed = []

    def fails(node):
        executed.append(node)
        return len(node) == 3

    with pytest.raises(RouteExhaustedError):
        drive(kinds, fails, HeuristicPredictor())
    tree = {p for k in range(1, 4) for p in itertools.permutations(kinds, k)}
    assert len(executed) == len(set(executed)) == 15
    assert set(executed) == tree


def test_exhaustion_when_every_first_step_fails():
    with pytest.raises(RouteExhaustedError):
        drive([K.NOISE, K.BLUR, K.HAZE], lambda node: True, HeuristicPredictor())


def check_never_reproposed(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    kinds = list(rng.choice(np.array(ALL_KINDS, dtype=object), n, replace=False))
    correct = list(rng.permutation(np.array(kinds, dtype=object)))
    predictor = ScriptedPredictor(correct, p=float(rng.uniform(0.3, 1.0)), seed=seed)
    fail_p = float(rng.uniform(0.0, 0.6))
    state = RouteState.start(Route(tuple(predictor.complete(kinds, set(), None))))
    seen_failed = set()
    while state.remaining:
        kind = state.remaining[0]
        proposed = state.prefix + tuple(state.remaining)
        for i in range(1, len(proposed) + 1):
            assert proposed[:i] not in state.failed_prefixes
        assert set(proposed) == set(kinds) and len(proposed) == n
        if rng.random() < fail_p:
            before = set(state.failed_prefixes)
            try:
                reroute(state, kind, predictor)
            except RouteExhaustedError:
                return
            assert before < state.failed_prefixes
            seen_failed |= state.failed_prefixes
        else:
            state.advance("t")


def test_cached_prefix_never_reproposed_seeded_trials():
    for seed in range(1000):
        check_never_reproposed(seed)


@given(st.integers(0, 2**32 - 1))
def test_cached_prefix_never_reproposed_property(seed):
    check_never_reproposed(seed)


@given(st.sets(st.sampled_from(ALL_KINDS), min_size=1, max_size=5), st.integers(0, 1000))
def test_scripted_predictor_returns_active_kinds(kinds, seed):
    pred = ScriptedPredictor(None, 1.0, seed)
    assert pred.next_step(kinds, set(), None) in kinds


def test_scripted_predictor_p1_follows_correct_order():
    order = [K.HAZE, K.NOISE, K.BLUR]
    assert ScriptedPredictor(order, 1.0, 0).complete(order, set(), None) == order


# --- knowledge base -----------------------------------------------------------


def test_empty_kb_has_no_rules():
    assert KnowledgeBase().consolidate().rules == {}


def test_consolidation_counting_example():
    a, b = K.NOISE, K.BLUR
    recs = [record([b, a], i < 7, ts=i) for i in range(8)] + [record([a, b], i < 1, ts=10 + i) for i in range(2)]
    kb = KnowledgeBase(recs).consolidate()
    top = kb.ranked({a, b})[0]
    assert top.sequence == (b, a)
    assert top.success_rate == pytest.approx(7 / 8)
    assert top.trials == 8
    assert kb.best_sequence({a, b}) == (b, a)


def test_consolidation_tiebreaks_by_score_then_expert_order():
    a, b = K.NOISE, K.COMPRESSION
    kb = KnowledgeBase([record([a, b], True, 20.0), record([b, a], True, 25.0)]).consolidate()
    assert kb.ranked({a, b})[0].sequence == (b, a)
    kb = KnowledgeBase([record([a, b], True, 20.0), record([b, a], True, 20.0)]).consolidate()
    assert kb.ranked({a, b})[0].sequence == tuple(expert_order({a, b}))
    assert kb.ranked({a, b}) == KnowledgeBase(kb.records[::-1]).consolidate().ranked({a, b})


def test_consolidate_idempotent_and_roundtrip(tmp_path):
    recs = [record([K.NOISE, K.BLUR], True, 31.5, 0), record([K.BLUR, K.NOISE], False, None, 1),
            record([K.HAZE], True, 28.0, 2)]
    kb = KnowledgeBase(recs).consolidate()
    once = kb.to_json()
    assert kb.consolidate().to_json() == once
    back = KnowledgeBase.from_json(json.loads(json.dumps(once)))
    assert back == kb
    path = kb.save(tmp_path / KnowledgeBase.FILENAME)
    assert KnowledgeBase.load(path) == kb
    assert KnowledgeBase.load(tmp_path / "missing.json").records == []


def test_save_merges_records_on_disk(tmp_path):
    path = tmp_path / "experience.json"
    KnowledgeBase([record([K.NOISE], True, 1.0, 0)]).consolidate().save(path)
    KnowledgeBase([record([K.BLUR], True, 2.0, 0)]).consolidate().save(path)
    kb = KnowledgeBase.load(path)
    assert {r.sequence for r in kb.records} == {(K.NOISE,), (K.BLUR,)}
    assert set(kb.rules) == {frozenset({K.NOISE}), frozenset({K.BLUR})}


def test_merge_dedupes_by_id():
    r = record([K.NOISE], True, 1.0, 0)
    merged = KnowledgeBase([r]).merge(KnowledgeBase([r, record([K.BLUR], False, None, 1)]))
    assert len(merged.records) == 2


def test_record_sequence_must_come_from_degradation_set():
    with pytest.raises(InvalidArgumentError):
        ExperienceRecord({K.NOISE: Severity.LOW}, (K.BLUR,))
    with pytest.raises(InvalidArgumentError):
        ExperienceRecord({K.NOISE: Severity.LOW}, (K.NOISE, K.NOISE))


# --- complexity ---------------------------------------------------------------


@pytest.mark.parametrize("n", range(1, 7))
def test_formulas_match_brute_force(n):
    assert t_full(n) == enumerate_full(n)
    assert t_tree(n) == enumerate_tree(n)
    assert t_tree(n) == pytest.approx(math.factorial(n) * sum(1 / math.factorial(k) for k in range(n)))


def test_formula_examples():
    assert t_full(3) == 18
    assert t_tree(3) == 15
    assert t_tree(1) == t_full(1) == 1
    assert t_ours(1, 1.0) == 1
    assert t_ours(3, 0.8) == pytest.approx(5.55)


def test_complexity_ordering():
    # both models count 2 + 2 nodes at n=2; strict from n=3
    assert t_tree(2) == t_full(2) == 4
    for n in range(3, 7):
        assert t_tree(n) < t_full(n)
    for n in range(3, 7):
        for p in np.linspace(0.5, 1.0, 11):
            assert t_ours(n, p) < t_tree(n)


@pytest.mark.parametrize("bad", [(0, 0.5), (2, 0.0), (2, 1.5), (1.5, 0.5)])
def test_complexity_argument_errors(bad):
    n, p = bad
    with pytest.raises(InvalidArgumentError):
        t_ours(n, p)


def test_simulation_examples():
    full = simulate_strategy(3, "full", trials=50)
    assert full.min == full.max == 18
    for n in range(1, 7):
        ours = simulate_strategy(n, "ours", 1.0, trials=200, seed=n)
        assert ours.min == ours.max == n
    a = simulate_strategy(3, "ours", 0.8, trials=500, seed=9)
    assert a == simulate_strategy(3, "ours", 0.8, trials=500, seed=9)


def test_simulation_matches_formula_p08():
    stats = simulate_strategy(3, "ours", 0.8, trials=10_000, seed=1)
    assert abs(stats.mean - t_ours(3, 0.8)) / t_ours(3, 0.8) < 0.15
