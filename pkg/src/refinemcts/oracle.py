"""Exhaustive enumeration of terminal captions on small worlds.

Shares only the transition and reward code with the planner; there is no
search logic here, just a depth-first walk over every reachable terminal state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

from .domain import PlannerConfig, SequenceState, ValidationError, WorldInstance, append_token
from .reward import QualityScorer, coverage_quality, noiseless_reward

SEARCH_SPACE_GUARD = 2**20


class OracleRefusal(ValidationError):
    def __init__(self, size: int):
        super().__init__(f"search space vocab_size**max_length = {size} exceeds the oracle guard {SEARCH_SPACE_GUARD}")
        self.size = size


@dataclass(frozen=True)
class OracleResult:
    best_sequence: SequenceState
    optimal_value: float
    value_table: dict[tuple[int, ...], float]


def search_space_size(world: WorldInstance) -> int:
    return world.vocab_size**world.max_length


def count_terminal_sequences(world: WorldInstance, prefix_len: int = 0) -> int:
    """Closed form: EOS-terminated sequences of every length plus full-length ones without EOS."""
    V, L = world.vocab_size, world.max_length
    remaining = L - prefix_len
    return sum((V - 1) ** (j - 1) for j in range(1, remaining + 1)) + (V - 1) ** remaining


def enumerate_optimal(
    world: WorldInstance,
    config: PlannerConfig = PlannerConfig(),
    scorer: QualityScorer = coverage_quality,
) -> OracleResult:
    size = search_space_size(world)
    if size > SEARCH_SPACE_GUARD:
        raise OracleRefusal(size)
    quiet = replace(world, reward_noise_sigma=0.0)
    start = quiet.initial_state(config.initial_tokens)
    table: dict[tuple[int, ...], float] = {}
    stack = [start]
    while stack:
        state = stack.pop()
        if state.terminal:
            table[state.tokens] = noiseless_reward(state, quiet, config, scorer).total
            continue
        for t in range(quiet.vocab_size):
            stack.append(append_token(state, t, quiet))
    best_tokens = min(table, key=lambda seq: (-table[seq], seq))
    best = SequenceState(best_tokens, True)
    return OracleResult(best, table[best_tokens], table)


def sequence_value(
    state: SequenceState | tuple[int, ...],
    world: WorldInstance,
    config: PlannerConfig = PlannerConfig(),
    scorer: QualityScorer = coverage_quality,
) -> float:
    if not isinstance(state, SequenceState):
        state = SequenceState(tuple(state), True)
    return noiseless_reward(state, replace(world, reward_noise_sigma=0.0), config, scorer).total


def simple_regret(
    world: WorldInstance,
    config: PlannerConfig,
    final_state: SequenceState,
    oracle: OracleResult | None = None,
    scorer: QualityScorer = coverage_quality,
) -> float:
    """``V* - value(final caption)`` using noiseless totals."""
    if oracle is None:
        oracle = enumerate_optimal(world, config, scorer)
    return oracle.optimal_value - sequence_value(final_state, world, config, scorer)


def write_value_table(result: OracleResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tokens", "total"])
        for seq in sorted(result.value_table):
            w.writerow([" ".join(map(str, seq)), repr(result.value_table[seq])])
