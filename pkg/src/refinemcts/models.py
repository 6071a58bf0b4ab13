"""Sequence-model contract and synthetic models standing in for the VLM.

A model answers ``evaluate(region_prompt, state, world) -> (policy, coarse_value)``.
``region_prompt`` is the id of the region the expansion asks about, or ``None``
for a generic "continue the caption" prompt (used once every region is covered).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .domain import ContractViolation, SequenceState, ValidationError, WorldInstance
from .reward import coverage_quality

SIMPLEX_TOL = 1e-9


class SequenceModel(Protocol):
    value_range: tuple[float, float]

    def evaluate(
        self, region_prompt: int | None, state: SequenceState, world: WorldInstance
    ) -> tuple[np.ndarray, float]: ...


@dataclass(frozen=True)
class ExpansionEntry:
    region_id: int | None
    weight: float  # saliency weight of the prompted region (1.0 for the generic prompt)
    policy: np.ndarray
    coarse_value: float


@dataclass(frozen=True)
class ExpansionResult:
    entries: tuple[ExpansionEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def merged_prior(self) -> np.ndarray:
        """Saliency-weighted average of the entries' policies, renormalized."""
        acc = np.zeros_like(self.entries[0].policy)
        for e in self.entries:
            acc += e.weight * e.policy
        return acc / acc.sum()

    def coarse_value(self) -> float:
        """Saliency-weighted mean of the entries' coarse values."""
        num = sum(e.weight * e.coarse_value for e in self.entries)
        den = sum(e.weight for e in self.entries)
        return num / den


def is_policy_vector(p: np.ndarray, vocab_size: int) -> bool:
    return p.shape == (vocab_size,) and bool(np.all(p >= 0)) and abs(float(p.sum()) - 1.0) <= SIMPLEX_TOL


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


def identify_salient_regions(state: SequenceState, world: WorldInstance, k: int) -> list[int]:
    """Up to ``k`` uncovered regions, heaviest first (ties by region id)."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    present = set(state.tokens)
    uncovered = [r for r in world.regions if not r.attribute_tokens <= present]
    uncovered.sort(key=lambda r: (-r.saliency_weight, r.region_id))
    return [r.region_id for r in uncovered[:k]]


@dataclass(frozen=True)
class TabularModel:
    """Region-affinity softmax policy.

    Logits: +``affinity`` on the prompted region's attribute tokens, 0 elsewhere,
    and ``eos_slope * coverage`` on EOS. The coarse value is the current coverage.
    ``eos_slope`` must exceed ``affinity`` so EOS is the clear favourite once
    everything is covered.
    """

    affinity: float = 2.0
    eos_slope: float = 2.2
    value_range: tuple[float, float] = (0.0, 1.0)

    def evaluate(self, region_prompt, state, world):
        coverage = coverage_quality(state, world)
        logits = np.zeros(world.vocab_size)
        if region_prompt is not None:
            for t in world.region(region_prompt).attribute_tokens:
                logits[t] += self.affinity
        logits[world.eos_token] += self.eos_slope * coverage
        return softmax(logits), coverage


def tabular_model_evaluate(
    region_prompt: int | None, state: SequenceState, world: WorldInstance, affinity: float = 2.0
) -> tuple[np.ndarray, float]:
    return TabularModel(affinity=affinity).evaluate(region_prompt, state, world)


@dataclass(frozen=True)
class UniformModel:
    """Uninformed policy; coarse value is still the coverage. Used for full-width search."""

    value_range: tuple[float, float] = (0.0, 1.0)

    def evaluate(self, region_prompt, state, world):
        if region_prompt is not None:
            world.region(region_prompt)
        return np.full(world.vocab_size, 1.0 / world.vocab_size), coverage_quality(state, world)


@dataclass(frozen=True)
class BanditModel:
    """Depth-one worlds: every token is an arm. Uniform policy, zero coarse value."""

    value_range: tuple[float, float] = (0.0, 0.0)

    def evaluate(self, region_prompt, state, world):
        return bandit_world_evaluate(state, world)


def bandit_world_evaluate(state: SequenceState, world: WorldInstance) -> tuple[np.ndarray, float]:
    if not world.is_bandit:
        raise ContractViolation(f"world {world.world_id!r} is not a bandit world (max_length={world.max_length})")
    return np.full(world.vocab_size, 1.0 / world.vocab_size), 0.0


def run_expansion(
    model: SequenceModel, state: SequenceState, world: WorldInstance, k: int
) -> ExpansionResult:
    """Salient-region identification followed by one model call per region.

    The calls are independent; with synthetic models they run in-process.
    """
    regions = identify_salient_regions(state, world, k)
    entries = []
    if regions:
        for rid in regions:
            policy, value = model.evaluate(rid, state, world)
            entries.append(ExpansionEntry(rid, world.region(rid).saliency_weight, policy, float(value)))
    else:
        policy, value = model.evaluate(None, state, world)
        entries.append(ExpansionEntry(None, 1.0, policy, float(value)))
    return ExpansionResult(tuple(entries))
