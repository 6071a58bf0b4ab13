import json
import random
from dataclasses import replace

import numpy as np
import pytest

from refinemcts import planner as planner_mod
from refinemcts.domain import PlannerConfig, ValidationError
from refinemcts.models import ExpansionEntry, ExpansionResult, TabularModel, UniformModel
from refinemcts.oracle import enumerate_optimal, sequence_value
from refinemcts.planner import StepSearch, check_converged, mcts_iteration, read_trace, tdsr_generate
from refinemcts.reward import coverage_quality
from refinemcts.tree import backpropagate, expand_node, select_leaf
from refinemcts.valuenet import init_params, n_features
from refinemcts.worlds import easy_world, random_world, saliency_world

from conftest import make_world


class EosModel:
    value_range = (0.0, 1.0)

    def evaluate(self, region_prompt, state, world):
        p = np.zeros(world.vocab_size)
        p[world.eos_token] = 1.0
        return p, 0.0


class CountingModel:
    value_range = (0.0, 1.0)

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def evaluate(self, region_prompt, state, world):
        self.calls += 1
        return self.inner.evaluate(region_prompt, state, world)


def test_converged_examples():
    assert check_converged([1.0] * 6, 1e-4, 5)
    assert not check_converged([1.0 + 1e-3 * i for i in range(10)], 1e-4, 5)
    assert not check_converged([1.0] * 5, 1e-4, 5)
    assert not check_converged([], 1e-4, 5)


def test_converged_uses_signed_change():
    assert check_converged([1.0, 0.9, 0.8, 0.7, 0.6, 0.5], 1e-4, 5)
    assert not check_converged([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.001], 1e-4, 5)


def fresh_search(world=None, config=PlannerConfig(), model=None, params=None):
    world = world or saliency_world(sigma=0.0)
    return StepSearch(world, world.initial_state(), model or TabularModel(), params, config, random.Random(0))


def test_first_iteration_structure():
    search = fresh_search()
    rec = mcts_iteration(search)
    root = search.tree[search.root_id]
    assert rec.index == 1 and root.expanded and root.visit_total == 1
    assert sum(e.visits for e in root.children.values()) == 1


def test_terminal_leaf_value_is_reward_without_model_calls():
    w = make_world([({0}, 1.0)], vocab_size=3, max_length=1)
    search = fresh_search(w, PlannerConfig(), UniformModel())
    mcts_iteration(search)
    calls = search.model_calls
    rec = mcts_iteration(search)
    assert search.model_calls == calls
    assert rec.v_vlm is None and rec.leaf_depth == 1
    totals = {sequence_value((t,), w, PlannerConfig()) for t in range(3)}
    assert rec.value in totals


def test_iteration_follows_hand_scores():
    w = make_world([({0}, 1.0)], vocab_size=3, max_length=4)
    search = fresh_search(w, PlannerConfig(c_puct=1.5), UniformModel())
    pol = np.array([0.6, 0.4, 0.0])
    expand_node(search.tree, 0, ExpansionResult((ExpansionEntry(0, 1.0, pol, 0.0),)), PlannerConfig(top_m_actions=2))
    root = search.tree[0]
    root.children[0].visits, root.children[0].total_value = 3, 1.5
    root.children[1].visits, root.children[1].total_value = 1, 0.8
    root.visit_total = 4
    rec = mcts_iteration(search)
    assert rec.leaf_depth == 1 and root.children[1].visits == 2 and root.children[0].visits == 3


def test_eos_only_model_stops_immediately():
    w = saliency_world(sigma=0.0)
    state, trace = tdsr_generate(w, EosModel(), None, PlannerConfig())
    assert state.tokens == (w.eos_token,) and len(trace.steps) == 1


def test_one_region_world_gets_covered():
    w = easy_world(0)
    cfg = PlannerConfig(n_max_iterations=200)
    state, trace = tdsr_generate(w, TabularModel(), None, cfg)
    oracle = enumerate_optimal(w, cfg)
    assert coverage_quality(oracle.best_sequence, w) == 1.0
    assert coverage_quality(state, w) == 1.0


def test_single_iteration_picks_max_prior():
    w = saliency_world(sigma=0.0)
    cfg = PlannerConfig(n_max_iterations=1)
    state, trace = tdsr_generate(w, TabularModel(), None, cfg)
    for step in trace.steps:
        assert step.iterations_used == 1
        kids = step.root_children
        best_prior = max(kids, key=lambda t: (kids[t]["P"], -t))
        assert step.chosen_token == best_prior
        assert [t for t, s in kids.items() if s["N"] == 1] == [best_prior]


def test_iteration_budget_and_stop_rule():
    w = saliency_world(sigma=0.05)
    cfg = PlannerConfig(n_max_iterations=60)
    _, trace = tdsr_generate(w, TabularModel(), None, cfg)
    for step in trace.steps:
        assert step.iterations_used <= 60
        if step.converged:
            hist = [r.best_root_uct for r in step.iterations]
            tail = [b - a for a, b in zip(hist[-6:], hist[-5:])]
            assert len(tail) == 5 and all(d < cfg.eps_stop for d in tail)


def test_model_call_accounting():
    w = saliency_world(sigma=0.0)
    counting = CountingModel(TabularModel())
    _, trace = tdsr_generate(w, counting, None, PlannerConfig(n_max_iterations=50))
    assert trace.model_calls == counting.calls
    for step in trace.steps:
        # one root expansion plus at most one expansion per iteration
        assert step.model_calls <= (step.iterations_used + 1) * PlannerConfig().branching_k


def test_adaptive_stop_reduces_calls():
    w = easy_world(3)
    a = tdsr_generate(w, TabularModel(), None, PlannerConfig())[1]
    b = tdsr_generate(w, TabularModel(), None, PlannerConfig(adaptive_stop=False))[1]
    assert a.model_calls < b.model_calls


def test_determinism_and_replay():
    w = saliency_world(sigma=0.2)
    cfg = PlannerConfig(seed=11, n_max_iterations=80)
    s1, t1 = tdsr_generate(w, TabularModel(), None, cfg)
    s2, t2 = tdsr_generate(w, TabularModel(), None, cfg)
    assert s1 == s2
    assert [x.to_dict() for x in t1.steps] == [x.to_dict() for x in t2.steps]
    assert t1.replay() == s1


def test_value_net_changes_fused_values():
    w = saliency_world(sigma=0.0)
    params = init_params(n_features(w), seed=1)
    cfg = PlannerConfig(n_max_iterations=20)
    _, t0 = tdsr_generate(w, TabularModel(), params, replace(cfg, lambda_v=0.0))
    _, t1 = tdsr_generate(w, TabularModel(), params, replace(cfg, lambda_v=1.0))
    r0 = [r for s in t0.steps for r in s.iterations if r.v_vlm is not None]
    r1 = [r for s in t1.steps for r in s.iterations if r.v_vlm is not None]
    assert all(r.value == r.v_hat for r in r0) and all(r.value == r.v_vlm for r in r1)
    assert [r.value for r in r0] != [r.value for r in r1]


def test_initial_tokens_respected():
    w = saliency_world(sigma=0.0)
    state, trace = tdsr_generate(w, TabularModel(), None, PlannerConfig(initial_tokens=(2,)))
    assert state.tokens[0] == 2 and trace.steps[0].root_tokens == (2,)


def test_malformed_world_rejected():
    w = make_world([({0}, 0.5)])
    with pytest.raises(ValidationError, match="weight-sum"):
        tdsr_generate(w, TabularModel(), None, PlannerConfig())


def test_trace_persistence(tmp_path):
    w = saliency_world(sigma=0.0)
    _, trace = tdsr_generate(w, TabularModel(), None, PlannerConfig(n_max_iterations=30))
    jl, sm = tmp_path / "t.jsonl", tmp_path / "s.json"
    trace.write(jl, sm)
    summary = json.loads(sm.read_text())
    assert summary["model_calls"] == trace.model_calls
    assert summary["iterations_per_step"] == trace.iterations_per_step
    assert len(jl.read_text().splitlines()) == len(trace.steps)
    rec = read_trace(jl, sm, w)
    assert rec.states == trace.intermediate_states and rec.terminal_total == trace.final_reward.total
    with pytest.raises(ValidationError):
        read_trace(jl, sm, replace(w, world_id="other"))


def test_root_accounting_long_run(monkeypatch):
    w = random_world(5)
    through_root = {"n": 0}
    real = planner_mod.backpropagate

    def counting(tree, path, value, gamma):
        if path.edges and path.edges[0][0] == 0:
            through_root["n"] += 1
        real(tree, path, value, gamma)

    monkeypatch.setattr(planner_mod, "backpropagate", counting)
    search = fresh_search(w, PlannerConfig(n_max_iterations=1000, adaptive_stop=False))
    search.run()
    root = search.tree[0]
    assert len(search.records) == 1000
    assert sum(e.visits for e in root.children.values()) == through_root["n"] == root.visit_total
    for node in search.tree.nodes:
        if node.expanded:
            assert sum(e.visits for e in node.children.values()) == node.visit_total


def scripted_visits(scale):
    w = make_world([({0, 1}, 0.6), ({2}, 0.4)], vocab_size=5, max_length=4)
    cfg = PlannerConfig(c_puct=1.5 * scale, gamma=1.0)
    search = fresh_search(w, cfg, TabularModel())
    tree = search.tree
    for _ in range(300):
        path = select_leaf(tree, 0, cfg)
        leaf = tree[path.leaf]
        if not leaf.state.terminal:
            expand_node(tree, path.leaf, ExpansionResult((ExpansionEntry(None, 1.0, np.full(5, 0.2), 0.0),)), cfg)
        # deterministic leaf value in (0, 1)
        v = coverage_quality(leaf.state, w) + 0.05 * len(leaf.state)
        backpropagate(tree, path, scale * v, cfg.gamma)
    return [(n.node_id, {t: e.visits for t, e in n.children.items()}) for n in tree.nodes]


@pytest.mark.parametrize("scale", [0.5, 2.0, 4.0])
def test_visit_counts_invariant_under_joint_scaling(scale):
    assert scripted_visits(scale) == scripted_visits(1.0)


def test_q_within_observed_range():
    search = fresh_search(saliency_world(sigma=0.3), PlannerConfig(n_max_iterations=300, adaptive_stop=False))
    search.run()
    values = [r.value for r in search.records]
    lo = min(min(values), 0.0) - 1e-12
    hi = max(max(values), 0.0) + 1e-12
    for node in search.tree.nodes:
        for e in node.children.values():
            if e.visits:
                assert lo <= e.mean_value <= hi
