"""Token-by-token planning: one fresh search tree per outer step.

Each inner iteration selects a leaf by PUCT, expands it with saliency-guided
parallel prompts, scores it by blending the model's coarse value with the
value network, and backs the result up the path. Terminal leaves are scored
by the (possibly noisy) terminal reward instead.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .domain import (
    PlannerConfig,
    RewardBreakdown,
    SequenceState,
    TokenId,
    ValidationError,
    WorldInstance,
    append_token,
    validate_world,
)
from .models import SequenceModel, run_expansion
from .reward import QualityScorer, coverage_quality, noiseless_reward, sample_noise
from .tree import (
    SearchTree,
    backpropagate,
    best_action_by_visits,
    best_child_by_uct,
    expand_node,
    select_leaf,
)
from .valuenet import TraceRecord, ValueNetParams, featurize, fuse_value, predict


@dataclass(frozen=True)
class IterationRecord:
    index: int
    best_root_uct: float
    leaf_depth: int
    value: float
    v_vlm: float | None = None
    v_hat: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "i": self.index,
            "uct": self.best_root_uct,
            "depth": self.leaf_depth,
            "V": self.value,
            "v_vlm": self.v_vlm,
            "v_hat": self.v_hat,
        }


def check_converged(history: Sequence[float], eps_stop: float, window: int) -> bool:
    """True iff each of the last ``window`` successive changes is below ``eps_stop``."""
    if len(history) < window + 1:
        return False
    return all(history[i] - history[i - 1] < eps_stop for i in range(len(history) - window, len(history)))


class StepSearch:
    """Search state for one outer step: the tree plus counters and history."""

    def __init__(
        self,
        world: WorldInstance,
        root_state: SequenceState,
        model: SequenceModel,
        value_params: ValueNetParams | None,
        config: PlannerConfig,
        rng: random.Random,
        scorer: QualityScorer = coverage_quality,
    ):
        self.world = world
        self.model = model
        self.value_params = value_params
        self.config = config
        self.rng = rng
        self.scorer = scorer
        self.tree = SearchTree(world, root_state)
        self.root_id = self.tree.root_id
        self.records: list[IterationRecord] = []
        self.history: list[float] = []
        self.model_calls = 0
        self.expansions = 0

    def _expand(self, node_id: int) -> tuple[float, float, float]:
        node = self.tree.nodes[node_id]
        expansion = run_expansion(self.model, node.state, self.world, self.config.branching_k)
        self.model_calls += len(expansion)
        self.expansions += 1
        expand_node(self.tree, node_id, expansion, self.config)
        v_vlm = expansion.coarse_value()
        if self.value_params is None:
            v_hat = v_vlm
        else:
            v_hat = predict(self.value_params, featurize(node.state, self.world, self.config.max_ngram_order))
        return fuse_value(v_vlm, v_hat, self.config.lambda_v), v_vlm, v_hat

    def _terminal_value(self, node_id: int) -> float:
        node = self.tree.nodes[node_id]
        if node.reward is None:
            node.reward = noiseless_reward(node.state, self.world, self.config, self.scorer)
        return node.reward.total + sample_noise(self.world.reward_noise_sigma, self.rng)

    def iterate(self) -> IterationRecord:
        root = self.tree.nodes[self.root_id]
        if not root.expanded and not root.state.terminal:
            # the root has no incoming edge, so its own estimate is not backed up
            self._expand(self.root_id)
        path = select_leaf(self.tree, self.root_id, self.config)
        leaf = self.tree.nodes[path.leaf]
        v_vlm = v_hat = None
        if leaf.state.terminal:
            value = self._terminal_value(path.leaf)
        else:
            value, v_vlm, v_hat = self._expand(path.leaf)
        backpropagate(self.tree, path, value, self.config.gamma)
        best_uct = best_child_by_uct(root, self.config.c_puct)[1] if root.children else 0.0
        rec = IterationRecord(len(self.records) + 1, best_uct, path.depth, value, v_vlm, v_hat)
        self.records.append(rec)
        self.history.append(best_uct)
        return rec

    def converged(self) -> bool:
        return self.config.adaptive_stop and check_converged(
            self.history, self.config.eps_stop, self.config.stop_window
        )

    def run(self, checkpoints: Iterable[int] = ()) -> dict[int, TokenId]:
        """Iterate until the budget is spent or the root converges.

        ``checkpoints`` lists iteration counts at which to record the current
        visit-count choice; with adaptive stopping off, the choice at ``T`` equals
        that of a separate run with budget ``T`` and the same seed.
        """
        marks = set(checkpoints)
        picks: dict[int, TokenId] = {}
        for i in range(1, self.config.n_max_iterations + 1):
            self.iterate()
            if i in marks:
                picks[i] = best_action_by_visits(self.tree, self.root_id)
            if self.converged():
                break
        return picks

    def best_action(self) -> TokenId:
        return best_action_by_visits(self.tree, self.root_id)


def mcts_iteration(search: StepSearch) -> IterationRecord:
    """One select/expand/evaluate/fuse/backpropagate cycle."""
    return search.iterate()


@dataclass
class StepRecord:
    step: int
    root_tokens: tuple[TokenId, ...]
    chosen_token: TokenId
    iterations_used: int
    converged: bool
    model_calls: int
    root_children: dict[TokenId, dict[str, float]]
    iterations: list[IterationRecord]
    wall_clock_s: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        # wall-clock time is left out so persisted traces are reproducible byte for byte
        return {
            "step": self.step,
            "root_tokens": list(self.root_tokens),
            "chosen_token": self.chosen_token,
            "iterations_used": self.iterations_used,
            "converged": self.converged,
            "model_calls": self.model_calls,
            "root_children": [{"token": t, **s} for t, s in self.root_children.items()],
            "iterations": [r.to_dict() for r in self.iterations],
        }


@dataclass
class RunTrace:
    world: WorldInstance
    config: PlannerConfig
    steps: list[StepRecord] = field(default_factory=list)
    intermediate_states: list[SequenceState] = field(default_factory=list)
    final_state: SequenceState | None = None
    final_reward: RewardBreakdown | None = None  # noiseless

    @property
    def world_id(self) -> str:
        return self.world.world_id

    @property
    def model_calls(self) -> int:
        return sum(s.model_calls for s in self.steps)

    @property
    def iterations_per_step(self) -> list[int]:
        return [s.iterations_used for s in self.steps]

    @property
    def chosen_tokens(self) -> list[TokenId]:
        return [s.chosen_token for s in self.steps]

    def replay(self) -> SequenceState:
        state = self.world.initial_state(self.config.initial_tokens)
        for t in self.chosen_tokens:
            state = append_token(state, t, self.world)
        return state

    def as_training_record(self) -> TraceRecord:
        total = None if self.final_reward is None else self.final_reward.total
        return TraceRecord(list(self.intermediate_states), total, self.world, self.config.max_ngram_order)

    def summary(self) -> dict[str, Any]:
        iters = self.iterations_per_step
        return {
            "world_id": self.world_id,
            "config": self.config.to_dict(),
            "final_tokens": list(self.final_state.tokens) if self.final_state else None,
            "final_length": len(self.final_state) if self.final_state else None,
            "reward": self.final_reward.to_dict() if self.final_reward else None,
            "n_steps": len(self.steps),
            "iterations_per_step": iters,
            "total_iterations": sum(iters),
            "mean_iterations_per_step": (sum(iters) / len(iters)) if iters else 0.0,
            "model_calls": self.model_calls,
        }

    def write(self, jsonl_path: str | Path, summary_path: str | Path) -> None:
        with open(jsonl_path, "w") as fh:
            for s in self.steps:
                fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")
        Path(summary_path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def read_trace(jsonl_path: str | Path, summary_path: str | Path, world: WorldInstance) -> TraceRecord:
    """Load a persisted run as a training record (intermediate states + noiseless total)."""
    summary = json.loads(Path(summary_path).read_text())
    if summary.get("world_id") != world.world_id:
        raise ValidationError(
            f"trace {summary_path} belongs to world {summary.get('world_id')!r}, not {world.world_id!r}"
        )
    states = []
    with open(jsonl_path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                states.append(world.initial_state(rec["root_tokens"]))
    reward = summary.get("reward")
    total = None if reward is None else reward.get("total")
    order = summary.get("config", {}).get("max_ngram_order", 3)
    return TraceRecord(states, total, world, order)


def tdsr_generate(
    world: WorldInstance,
    model: SequenceModel,
    value_params: ValueNetParams | None,
    config: PlannerConfig,
    scorer: QualityScorer = coverage_quality,
) -> tuple[SequenceState, RunTrace]:
    """Plan a full caption. Returns the final state and the complete run trace."""
    problems = validate_world(world)
    if problems:
        raise ValidationError("world is malformed: " + "; ".join(problems))
    rng = random.Random(config.seed)
    state = world.initial_state(config.initial_tokens)
    trace = RunTrace(world, config)
    step = 0
    while not state.terminal:
        step += 1
        t0 = time.perf_counter()
        search = StepSearch(world, state, model, value_params, config, rng, scorer)
        search.run()
        token = search.best_action()
        trace.intermediate_states.append(state)
        trace.steps.append(
            StepRecord(
                step=step,
                root_tokens=state.tokens,
                chosen_token=token,
                iterations_used=len(search.records),
                converged=search.converged(),
                model_calls=search.model_calls,
                root_children=search.tree.root_child_stats(),
                iterations=search.records,
                wall_clock_s=time.perf_counter() - t0,
            )
        )
        state = append_token(state, token, world)
    trace.final_state = state
    trace.final_reward = noiseless_reward(state, world, config, scorer)
    return state, trace
