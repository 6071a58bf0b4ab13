"""Shared domain records: sequence states, synthetic worlds, planner config.

Everything here is an immutable value object. Worlds are symbolic stand-ins
for images: a vocabulary, an end-of-sequence token, a length bound and a set
of weighted regions, each described by a set of attribute tokens.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

TokenId = int

WEIGHT_SUM_TOL = 1e-9


class ContractViolation(RuntimeError):
    """A caller broke an operation's precondition (e.g. appending to a finished caption)."""


class ValidationError(ValueError):
    """Malformed input data: out-of-range tokens, bad config values, bad files."""


@dataclass(frozen=True)
class SequenceState:
    tokens: tuple[TokenId, ...] = ()
    terminal: bool = False

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class RegionSpec:
    region_id: int
    attribute_tokens: frozenset[TokenId]
    saliency_weight: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "region_id": self.region_id,
            "attribute_tokens": sorted(self.attribute_tokens),
            "saliency_weight": self.saliency_weight,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RegionSpec":
        try:
            return cls(
                region_id=int(d["region_id"]),
                attribute_tokens=frozenset(int(t) for t in d["attribute_tokens"]),
                saliency_weight=float(d["saliency_weight"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad region record {d!r}: {exc}") from exc


@dataclass(frozen=True)
class WorldInstance:
    world_id: str
    vocab_size: int
    eos_token: TokenId
    max_length: int
    regions: tuple[RegionSpec, ...]
    reward_noise_sigma: float = 0.0

    @property
    def is_bandit(self) -> bool:
        return self.max_length == 1

    def region(self, region_id: int) -> RegionSpec:
        for r in self.regions:
            if r.region_id == region_id:
                return r
        raise ValidationError(f"world {self.world_id!r} has no region {region_id}")

    def initial_state(self, tokens: Iterable[TokenId] = ()) -> SequenceState:
        state = SequenceState()
        for t in tokens:
            state = append_token(state, t, self)
        return state

    def to_dict(self) -> dict[str, Any]:
        return {
            "world_id": self.world_id,
            "vocab_size": self.vocab_size,
            "eos_token": self.eos_token,
            "max_length": self.max_length,
            "reward_noise_sigma": self.reward_noise_sigma,
            "regions": [r.to_dict() for r in self.regions],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "WorldInstance":
        try:
            return cls(
                world_id=str(d["world_id"]),
                vocab_size=int(d["vocab_size"]),
                eos_token=int(d["eos_token"]),
                max_length=int(d["max_length"]),
                regions=tuple(RegionSpec.from_dict(r) for r in d["regions"]),
                reward_noise_sigma=float(d.get("reward_noise_sigma", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad world record: missing or malformed {exc}") from exc


def append_token(state: SequenceState, token: TokenId, world: WorldInstance) -> SequenceState:
    """Deterministic transition ``s ⊕ a``."""
    if state.terminal:
        raise ContractViolation(f"cannot append token {token} to terminal state {state.tokens}")
    if not 0 <= token < world.vocab_size:
        raise ValidationError(f"token {token} outside vocabulary of size {world.vocab_size}")
    tokens = state.tokens + (token,)
    return SequenceState(tokens, token == world.eos_token or len(tokens) >= world.max_length)


def validate_world(world: WorldInstance) -> list[str]:
    """Return a list of invariant violations; empty iff the world is well-formed."""
    problems: list[str] = []
    if world.vocab_size < 2:
        problems.append(f"vocab-size: vocab_size={world.vocab_size} must be >= 2")
    if not 0 <= world.eos_token < world.vocab_size:
        problems.append(f"eos-range: eos_token={world.eos_token} not < vocab_size={world.vocab_size}")
    if world.max_length < 1:
        problems.append(f"max-length: max_length={world.max_length} must be >= 1")
    if not (world.reward_noise_sigma >= 0 and math.isfinite(world.reward_noise_sigma)):
        problems.append(f"noise-sigma: reward_noise_sigma={world.reward_noise_sigma} must be finite and >= 0")
    if not world.regions:
        problems.append("regions: world has no regions")
    ids = [r.region_id for r in world.regions]
    if len(set(ids)) != len(ids):
        problems.append(f"region-ids: duplicate region ids in {ids}")
    for r in world.regions:
        if not r.attribute_tokens:
            problems.append(f"attribute-nonempty: region {r.region_id} has no attribute tokens")
        bad = sorted(t for t in r.attribute_tokens if not 0 <= t < world.vocab_size)
        if bad:
            problems.append(
                f"token-range: region {r.region_id} attribute tokens {bad} outside vocab_size={world.vocab_size}"
            )
        if not 0 < r.saliency_weight <= 1:
            problems.append(f"weight-range: region {r.region_id} weight {r.saliency_weight} not in (0, 1]")
    if world.regions:
        total = math.fsum(r.saliency_weight for r in world.regions)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            problems.append(f"weight-sum: saliency weights sum to {total!r}, expected 1")
    return problems


def load_world(path: str | Path) -> WorldInstance:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"world file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"world file {path} is not valid JSON: {exc}") from exc
    world = WorldInstance.from_dict(raw)
    problems = validate_world(world)
    if problems:
        raise ValidationError(f"world file {path} is malformed: " + "; ".join(problems))
    return world


def save_world(world: WorldInstance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(world.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class PlannerConfig:
    """Every search hyperparameter. Defaults follow the reference configuration."""

    c_puct: float = 1.5
    alpha: float = 0.1
    lambda_v: float = 0.5
    branching_k: int = 4
    top_m_actions: int = 8
    n_max_iterations: int = 200
    eps_stop: float = 1e-4
    stop_window: int = 5
    gamma: float = 0.99
    max_ngram_order: int = 3
    seed: int = 0
    # extensions: starting prefix, and a switch for budget-only runs
    initial_tokens: tuple[TokenId, ...] = field(default=())
    adaptive_stop: bool = True

    def __post_init__(self) -> None:
        problems = []
        if not self.c_puct > 0:
            problems.append(f"c_puct={self.c_puct} must be > 0")
        if not self.alpha >= 0:
            problems.append(f"alpha={self.alpha} must be >= 0")
        if not 0 <= self.lambda_v <= 1:
            problems.append(f"lambda_v={self.lambda_v} must be in [0, 1]")
        if self.branching_k < 1:
            problems.append(f"branching_k={self.branching_k} must be >= 1")
        if self.top_m_actions < 1:
            problems.append(f"top_m_actions={self.top_m_actions} must be >= 1")
        if self.n_max_iterations < 1:
            problems.append(f"n_max_iterations={self.n_max_iterations} must be >= 1")
        if not self.eps_stop > 0:
            problems.append(f"eps_stop={self.eps_stop} must be > 0")
        if self.stop_window < 1:
            problems.append(f"stop_window={self.stop_window} must be >= 1")
        if not 0 < self.gamma <= 1:
            problems.append(f"gamma={self.gamma} must be in (0, 1]")
        if self.max_ngram_order < 1:
            problems.append(f"max_ngram_order={self.max_ngram_order} must be >= 1")
        if not 0 <= self.seed < 2**64:
            problems.append(f"seed={self.seed} must be a 64-bit unsigned integer")
        if problems:
            raise ValidationError("invalid planner config: " + "; ".join(problems))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["initial_tokens"] = list(self.initial_tokens)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PlannerConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ValidationError(f"unknown planner config keys: {unknown}")
        kwargs = {k: _coerce(known[k].name, v) for k, v in d.items()}
        return cls(**kwargs)

    def with_overrides(self, **overrides: Any) -> "PlannerConfig":
        known = {f.name for f in fields(self)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ValidationError(f"unknown planner config keys: {unknown}")
        return replace(self, **{k: _coerce(k, v) for k, v in overrides.items()})


_INT_FIELDS = {"branching_k", "top_m_actions", "n_max_iterations", "stop_window", "max_ngram_order", "seed"}
_FLOAT_FIELDS = {"c_puct", "alpha", "lambda_v", "eps_stop", "gamma"}


def _coerce(name: str, value: Any) -> Any:
    try:
        if name in _INT_FIELDS:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if name in _FLOAT_FIELDS:
            return float(value)
        if name == "initial_tokens":
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split()]
            return tuple(int(v) for v in value)
        if name == "adaptive_stop":
            if isinstance(value, str):
                if value.lower() in {"1", "true", "yes", "on"}:
                    return True
                if value.lower() in {"0", "false", "no", "off"}:
                    return False
                raise ValueError(value)
            return bool(value)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad value for {name}: {value!r}") from exc
    return value


def load_config(path: str | Path | None) -> PlannerConfig:
    if path is None:
        return PlannerConfig()
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError(f"config file {path} must hold a JSON object")
    return PlannerConfig.from_dict(raw)


@dataclass(frozen=True)
class RewardBreakdown:
    quality: float
    depth: float
    redundancy: float
    total: float
    observed_total: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)
