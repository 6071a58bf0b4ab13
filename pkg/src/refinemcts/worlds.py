"""Built-in synthetic worlds used by the experiments and tests."""

from __future__ import annotations

import random
from typing import Sequence

from .domain import RegionSpec, WorldInstance


def _normalized(weights: Sequence[float]) -> list[float]:
    s = sum(weights)
    return [w / s for w in weights]


def random_world(
    seed: int,
    max_vocab: int = 8,
    max_length: int = 6,
    sigma: float = 0.0,
    min_vocab: int = 3,
    min_length: int = 2,
) -> WorldInstance:
    """Small random world: 1-3 regions with 1-2 distinct attribute tokens each."""
    rng = random.Random(seed)
    V = rng.randint(min_vocab, max_vocab)
    L = rng.randint(min_length, max_length)
    eos = V - 1
    pool = list(range(V - 1))
    rng.shuffle(pool)
    n_regions = rng.randint(1, min(3, len(pool)))
    regions = []
    weights = _normalized([rng.uniform(0.2, 1.0) for _ in range(n_regions)])
    for rid in range(n_regions):
        remaining = len(pool) - (n_regions - rid - 1)
        size = min(rng.randint(1, 2), remaining)
        attrs, pool = pool[:size], pool[size:]
        regions.append(RegionSpec(rid, frozenset(attrs), weights[rid]))
    return WorldInstance(f"random-{seed}", V, eos, L, tuple(regions), sigma)


def bandit_world(
    means: Sequence[float] = (0.4, 0.3, 0.2, 0.1),
    sigma: float = 0.5,
    seed: int = 0,
    world_id: str = "bandit",
) -> WorldInstance:
    """Depth-one world: each token is an arm whose coverage weight is its mean.

    ``means`` must sum to 1. Arms are assigned to token ids by a seeded
    permutation so that no arm is favoured by the lowest-token tie-break.
    """
    K = len(means)
    perm = list(range(K))
    random.Random(seed).shuffle(perm)
    regions = tuple(RegionSpec(i, frozenset({perm[i]}), float(m)) for i, m in enumerate(means))
    return WorldInstance(f"{world_id}-{seed}", K, K - 1, 1, regions, sigma)


def arm_token(world: WorldInstance, region_id: int) -> int:
    (tok,) = world.region(region_id).attribute_tokens
    return tok


def hallucination_means(delta_h: float, n_arms: int = 4) -> list[float]:
    """Best arm, a hallucination arm ``delta_h`` below it, and weaker filler arms.

    Fillers get half the hallucination arm's mean so it stays the strongest
    wrong choice; the means sum to 1.
    """
    if not 0.0 <= delta_h < 1.0 or n_arms < 2:
        raise ValueError(f"need 0 <= delta_h < 1 and n_arms >= 2, got {delta_h}, {n_arms}")
    n_fill = n_arms - 2
    h = (1.0 - delta_h) / (2.0 + n_fill / 2.0)
    return [h + delta_h, h] + [h / 2.0] * n_fill


def saliency_world(sigma: float = 0.05) -> WorldInstance:
    """Three regions of decreasing weight over a 10-token vocabulary."""
    regions = (
        RegionSpec(0, frozenset({2, 5}), 0.5),
        RegionSpec(1, frozenset({7}), 0.3),
        RegionSpec(2, frozenset({1}), 0.2),
    )
    return WorldInstance("saliency", 10, 9, 6, regions, sigma)


def easy_world(seed: int = 0, vocab_size: int = 6, max_length: int = 4) -> WorldInstance:
    """One region with two attribute tokens placed by a seeded permutation."""
    rng = random.Random(seed)
    attrs = rng.sample(range(vocab_size - 1), 2)
    regions = (RegionSpec(0, frozenset(attrs), 1.0),)
    return WorldInstance(f"easy-{seed}", vocab_size, vocab_size - 1, max_length, regions, 0.0)


def branching_world(
    seed: int = 0, n_actions: int = 64, n_regions: int = 4, max_length: int = 3
) -> WorldInstance:
    """Large vocabulary with a few single-token regions holding all the reward."""
    weights = _normalized([n_regions - i for i in range(n_regions)])
    rng = random.Random(seed)
    attrs = rng.sample(range(n_actions - 1), n_regions)
    regions = tuple(RegionSpec(i, frozenset({attrs[i]}), weights[i]) for i in range(n_regions))
    return WorldInstance(f"branching-{seed}", n_actions, n_actions - 1, max_length, regions, 0.0)
