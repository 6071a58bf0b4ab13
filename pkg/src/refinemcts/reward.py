"""Composite terminal reward: quality + depth incentive - redundancy penalty."""

from __future__ import annotations

import math
import random
from typing import Callable, Sequence

from .domain import (
    ContractViolation,
    PlannerConfig,
    RewardBreakdown,
    SequenceState,
    WorldInstance,
)

# score(state, world) -> [0, 1]; must be pure
QualityScorer = Callable[[SequenceState, WorldInstance], float]

NOISE_CLIP_SIGMAS = 6.0


def depth_reward(state: SequenceState | Sequence[int], alpha: float) -> float:
    """``alpha * ln(1 + |s|)``."""
    n = len(state.tokens) if isinstance(state, SequenceState) else len(state)
    return alpha * math.log1p(n)


def redundancy_penalty(state: SequenceState | Sequence[int], max_order: int) -> float:
    """Worst n-gram repetition ratio ``1 - distinct/total`` over orders 1..max_order.

    Orders with no complete n-gram contribute 0.
    """
    if max_order < 1:
        raise ValueError(f"max_order must be >= 1, got {max_order}")
    tokens = tuple(state.tokens if isinstance(state, SequenceState) else state)
    size = len(tokens)
    worst = 0.0
    for n in range(1, max_order + 1):
        total = size - n + 1
        if total <= 0:
            break
        if n == 1:
            distinct = len(set(tokens))
        else:
            distinct = len({tokens[i : i + n] for i in range(total)})
        ratio = 1.0 - distinct / total
        if ratio > worst:
            worst = ratio
    return worst


def coverage_quality(state: SequenceState, world: WorldInstance) -> float:
    """Total saliency weight of regions whose attribute tokens all appear in the caption."""
    present = set(state.tokens)
    return math.fsum(r.saliency_weight for r in world.regions if r.attribute_tokens <= present)


def sample_noise(sigma: float, rng: random.Random) -> float:
    if sigma <= 0:
        return 0.0
    bound = NOISE_CLIP_SIGMAS * sigma
    return min(bound, max(-bound, rng.gauss(0.0, sigma)))


def noiseless_reward(
    state: SequenceState,
    world: WorldInstance,
    config: PlannerConfig,
    scorer: QualityScorer = coverage_quality,
) -> RewardBreakdown:
    quality = scorer(state, world)
    depth = depth_reward(state, config.alpha)
    redundancy = redundancy_penalty(state, config.max_ngram_order)
    total = quality + depth - redundancy
    return RewardBreakdown(quality, depth, redundancy, total, total)


def terminal_reward(
    state: SequenceState,
    world: WorldInstance,
    config: PlannerConfig,
    scorer: QualityScorer = coverage_quality,
    rng: random.Random | None = None,
) -> RewardBreakdown:
    """Reward of a finished caption, with an observation perturbed by reward noise.

    ``rng`` is required only when the world carries nonzero reward noise.
    """
    if not state.terminal:
        raise ContractViolation(f"terminal_reward called on non-terminal state {state.tokens}")
    base = noiseless_reward(state, world, config, scorer)
    sigma = world.reward_noise_sigma
    if sigma <= 0:
        return base
    if rng is None:
        raise ContractViolation("noisy world requires a seeded random source")
    return RewardBreakdown(
        base.quality, base.depth, base.redundancy, base.total, base.total + sample_noise(sigma, rng)
    )
