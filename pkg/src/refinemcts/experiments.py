"""Experiment runners behind the CLI.

Every runner takes explicit seeds, derives all randomness from them, and
returns records sorted by their keys, so reruns (serial or parallel) agree
exactly.
"""

from __future__ import annotations

import csv
import math
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from functools import partial
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .domain import PlannerConfig, RegionSpec, ValidationError, WorldInstance
from .models import BanditModel, SequenceModel, TabularModel, UniformModel
from .oracle import OracleResult, enumerate_optimal, sequence_value
from .planner import RunTrace, StepSearch, tdsr_generate
from .valuenet import TrainingHyper, ValueNetParams, collect_training_data, train
from .worlds import arm_token, bandit_world, branching_world, easy_world, hallucination_means

T_VALUES = (16, 64, 256, 1024, 4096)
BUDGET_GRID = tuple(2**i for i in range(13))  # 1 .. 4096
SWEEP_GRIDS: dict[str, tuple[float, ...]] = {
    "c_puct": (0.5, 1.0, 1.5, 2.0, 2.5),
    "alpha": (0.0, 0.05, 0.1, 0.2, 0.3),
    "lambda_v": (0.0, 0.25, 0.5, 0.75, 1.0),
}
# small-data schedule used when a value net is bootstrapped from a handful of runs
DESK_HYPER = TrainingHyper(learning_rate=1e-2, batch_size=32, epochs=200, weight_decay=0.01)


def parallel_map(fn: Callable[[Any], Any], items: Sequence[Any], workers: int = 1) -> list[Any]:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def default_model(world: WorldInstance) -> SequenceModel:
    return BanditModel() if world.is_bandit else TabularModel()


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v: Any) -> Any:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v


def root_action_values(oracle: OracleResult, prefix: tuple[int, ...] = ()) -> dict[int, float]:
    """Best achievable total after committing to each first action below ``prefix``."""
    out: dict[int, float] = {}
    n = len(prefix)
    for seq, v in oracle.value_table.items():
        if len(seq) > n and seq[:n] == prefix:
            a = seq[n]
            if v > out.get(a, -math.inf):
                out[a] = v
    return out


# ---------------------------------------------------------------- regret


@dataclass(frozen=True)
class RegretRecord:
    T: int
    seed: int
    regret: float
    chosen: int


def _root_picks(world: WorldInstance, seed: int, T_values: Sequence[int], config: PlannerConfig,
                model: SequenceModel | None) -> dict[int, int]:
    cfg = replace(config, n_max_iterations=max(T_values), adaptive_stop=False, seed=seed)
    search = StepSearch(world, world.initial_state(cfg.initial_tokens), model or default_model(world),
                        None, cfg, random.Random(seed))
    return search.run(T_values)


def _regret_one(seed: int, world: WorldInstance | None, sigma: float, T_values: tuple[int, ...],
                config: PlannerConfig) -> list[RegretRecord]:
    w = world if world is not None else bandit_world(sigma=sigma, seed=seed)
    oracle = enumerate_optimal(w, config)
    q = root_action_values(oracle, tuple(config.initial_tokens))
    picks = _root_picks(w, seed, T_values, config, None)
    return [RegretRecord(T, seed, oracle.optimal_value - q[picks[T]], picks[T]) for T in T_values]


def run_regret(
    seeds: Sequence[int],
    world: WorldInstance | None = None,
    sigma: float = 0.5,
    T_values: Sequence[int] = T_VALUES,
    config: PlannerConfig = PlannerConfig(),
    workers: int = 1,
) -> list[RegretRecord]:
    """Simple regret at the root after budgets ``T``.

    Without a world, each seed gets the built-in 4-arm bandit (gaps 0, .1, .2, .3)
    with its own arm-to-token permutation.
    """
    if world is not None and world.reward_noise_sigma <= 0:
        raise ValidationError("regret experiment needs a world with reward_noise_sigma > 0")
    fn = partial(_regret_one, world=world, sigma=sigma, T_values=tuple(T_values), config=config)
    recs = [r for batch in parallel_map(fn, list(seeds), workers) for r in batch]
    return sorted(recs, key=lambda r: (r.T, r.seed))


def median_by_T(records: Iterable[RegretRecord]) -> dict[int, float]:
    by: dict[int, list[float]] = {}
    for r in records:
        by.setdefault(r.T, []).append(r.regret)
    return {T: statistics.median(v) for T, v in sorted(by.items())}


# ---------------------------------------------------------- hallucination


@dataclass(frozen=True)
class HallucinationRecord:
    T: int
    seed: int
    chosen: int
    hallucinated: bool


def hallucination_world(delta_h: float, sigma: float, seed: int) -> WorldInstance:
    return bandit_world(hallucination_means(delta_h), sigma=sigma, seed=seed, world_id=f"hallucination-{delta_h}")


def designated_hallucination_arm(world: WorldInstance, delta_h: float, config: PlannerConfig) -> int:
    """The root action whose true value sits ``delta_h`` below the optimum."""
    oracle = enumerate_optimal(world, config)
    q = root_action_values(oracle, tuple(config.initial_tokens))
    target = oracle.optimal_value - delta_h
    arm = min(q, key=lambda a: (abs(q[a] - target), a))
    if abs(q[arm] - target) > 1e-6:
        raise ValidationError(f"world {world.world_id!r} has no action {delta_h} below the optimum")
    return arm


def _hallucination_one(seed: int, world: WorldInstance | None, delta_h: float, sigma: float,
                       T_values: tuple[int, ...], config: PlannerConfig) -> list[HallucinationRecord]:
    if world is None:
        w = hallucination_world(delta_h, sigma, seed)
        bad = arm_token(w, 1)
    else:
        w = world
        bad = designated_hallucination_arm(w, delta_h, config)
    picks = _root_picks(w, seed, T_values, config, None)
    return [HallucinationRecord(T, seed, picks[T], picks[T] == bad) for T in T_values]


def run_hallucination(
    seeds: Sequence[int],
    delta_h: float = 0.2,
    sigma: float = 0.5,
    T_values: Sequence[int] = T_VALUES,
    config: PlannerConfig = PlannerConfig(),
    world: WorldInstance | None = None,
    workers: int = 1,
) -> list[HallucinationRecord]:
    fn = partial(_hallucination_one, world=world, delta_h=delta_h, sigma=sigma,
                 T_values=tuple(T_values), config=config)
    recs = [r for batch in parallel_map(fn, list(seeds), workers) for r in batch]
    return sorted(recs, key=lambda r: (r.T, r.seed))


def hallucination_fractions(records: Iterable[HallucinationRecord]) -> dict[int, float]:
    by: dict[int, list[bool]] = {}
    for r in records:
        by.setdefault(r.T, []).append(r.hallucinated)
    return {T: sum(v) / len(v) for T, v in sorted(by.items())}


# -------------------------------------------------------------- branching


@dataclass(frozen=True)
class BranchingRecord:
    mode: str
    seed: int
    iterations_to_target: int | None  # per-step budget; None if never reached
    total_iterations: int | None
    final_value: float
    optimal_value: float


def canonical_world(world: WorldInstance) -> WorldInstance:
    """Relabel non-EOS tokens so region attributes come first, in region order.

    Relabeling non-EOS tokens is a bijection on captions that preserves every
    reward term, so the canonical world has the same optimal value.
    """
    order: list[int] = []
    for r in world.regions:
        for t in sorted(r.attribute_tokens):
            if t not in order and t != world.eos_token:
                order.append(t)
    rest = [t for t in range(world.vocab_size) if t not in order and t != world.eos_token]
    mapping = {old: new for new, old in enumerate(order + rest)}
    mapping[world.eos_token] = world.vocab_size - 1
    regions = tuple(
        RegionSpec(r.region_id, frozenset(mapping[t] for t in r.attribute_tokens), r.saliency_weight)
        for r in world.regions
    )
    return WorldInstance("canonical", world.vocab_size, world.vocab_size - 1, world.max_length,
                         regions, world.reward_noise_sigma)


_ORACLE_CACHE: dict[tuple, float] = {}


def optimal_value(world: WorldInstance, config: PlannerConfig) -> float:
    canon = canonical_world(world)
    key = (canon.to_dict().__repr__(), config.alpha, config.max_ngram_order, tuple(config.initial_tokens))
    if config.initial_tokens:
        return enumerate_optimal(world, config).optimal_value
    if key not in _ORACLE_CACHE:
        _ORACLE_CACHE[key] = enumerate_optimal(canon, config).optimal_value
    return _ORACLE_CACHE[key]


def _branching_one(job: tuple[str, int], config: PlannerConfig, n_actions: int, n_regions: int,
                   max_length: int, restricted_top_m: int, budgets: tuple[int, ...],
                   target: float) -> BranchingRecord:
    mode, seed = job
    world = branching_world(seed, n_actions, n_regions, max_length)
    v_star = optimal_value(world, config)
    if mode == "restricted":
        model: SequenceModel = TabularModel()
        top_m = restricted_top_m
    else:
        model = UniformModel()
        top_m = n_actions
    value = -math.inf
    for T in budgets:
        cfg = replace(config, n_max_iterations=T, adaptive_stop=False, top_m_actions=top_m, seed=seed)
        state, trace = tdsr_generate(world, model, None, cfg)
        value = trace.final_reward.total
        if value >= target * v_star:
            return BranchingRecord(mode, seed, T, sum(trace.iterations_per_step), value, v_star)
    return BranchingRecord(mode, seed, None, None, value, v_star)


def run_branching(
    seeds: Sequence[int],
    config: PlannerConfig = PlannerConfig(),
    n_actions: int = 64,
    n_regions: int = 4,
    max_length: int = 3,
    restricted_top_m: int = 8,
    budgets: Sequence[int] = BUDGET_GRID,
    target: float = 0.95,
    modes: Sequence[str] = ("restricted", "full"),
    workers: int = 1,
) -> list[BranchingRecord]:
    """Smallest per-step budget reaching ``target`` x optimum, per mode and seed.

    ``restricted``: saliency-prompted tabular priors, top ``restricted_top_m`` children.
    ``full``: uniform priors over all ``n_actions`` children.
    """
    for m in modes:
        if m not in {"restricted", "full"}:
            raise ValidationError(f"unknown branching mode {m!r}")
    # warm the oracle cache once in the parent so workers don't each redo it
    optimal_value(branching_world(0, n_actions, n_regions, max_length), config)
    fn = partial(_branching_one, config=config, n_actions=n_actions, n_regions=n_regions,
                 max_length=max_length, restricted_top_m=restricted_top_m,
                 budgets=tuple(sorted(budgets)), target=target)
    jobs = [(m, s) for m in modes for s in seeds]
    recs = parallel_map(fn, jobs, workers)
    return sorted(recs, key=lambda r: (r.mode, r.seed))


def median_budget(records: Iterable[BranchingRecord], mode: str) -> float:
    vals = [math.inf if r.iterations_to_target is None else r.iterations_to_target
            for r in records if r.mode == mode]
    return statistics.median(vals)


# ------------------------------------------------------------------ sweep


@dataclass(frozen=True)
class SweepRow:
    param: str
    value: float
    seed: int
    total_reward: float
    length: int
    iterations: int
    mean_iterations_per_step: float
    model_calls: int
    mean_fused_value: float | None


def bootstrap_value_net(
    world: WorldInstance,
    config: PlannerConfig,
    seeds: Sequence[int],
    model: SequenceModel | None = None,
    hyper: TrainingHyper = DESK_HYPER,
) -> tuple[ValueNetParams, list[float]]:
    """Run the planner without a value net, then fit one to the resulting traces."""
    model = model or default_model(world)
    traces = [tdsr_generate(world, model, None, replace(config, seed=s))[1] for s in seeds]
    pairs, _ = collect_training_data(traces)
    return train(pairs, hyper)


def _sweep_one(job: tuple[str, float, int], world: WorldInstance, config: PlannerConfig,
               value_params: ValueNetParams | None) -> SweepRow:
    param, value, seed = job
    cfg = config.with_overrides(**{param: value, "seed": seed})
    state, trace = tdsr_generate(world, default_model(world), value_params, cfg)
    fused = [r.value for s in trace.steps for r in s.iterations if r.v_vlm is not None]
    iters = trace.iterations_per_step
    return SweepRow(
        param, float(value), seed, trace.final_reward.total, len(state), sum(iters),
        sum(iters) / len(iters), trace.model_calls, (sum(fused) / len(fused)) if fused else None,
    )


def run_sweep(
    world: WorldInstance,
    seeds: Sequence[int],
    config: PlannerConfig = PlannerConfig(),
    grids: dict[str, Sequence[float]] | None = None,
    value_params: ValueNetParams | None = None,
    workers: int = 1,
) -> list[SweepRow]:
    """Vary one hyperparameter at a time, the rest held at ``config``."""
    grids = dict(SWEEP_GRIDS if grids is None else grids)
    for p in grids:
        if p not in {f.name for f in fields(PlannerConfig)}:
            raise ValidationError(f"cannot sweep unknown parameter {p!r}")
    jobs = [(p, float(v), s) for p, grid in grids.items() for v in grid for s in seeds]
    fn = partial(_sweep_one, world=world, config=config, value_params=value_params)
    rows = parallel_map(fn, jobs, workers)
    return sorted(rows, key=lambda r: (r.param, r.value, r.seed))


def mean_length_by_value(rows: Iterable[SweepRow], param: str) -> dict[float, float]:
    by: dict[float, list[int]] = {}
    for r in rows:
        if r.param == param:
            by.setdefault(r.value, []).append(r.length)
    return {v: sum(ls) / len(ls) for v, ls in sorted(by.items())}


# ------------------------------------------------------ adaptive stopping


@dataclass(frozen=True)
class StoppingRecord:
    mode: str
    seed: int
    mean_iterations_per_step: float
    total_reward: float


def _stopping_one(job: tuple[str, int], config: PlannerConfig) -> StoppingRecord:
    mode, seed = job
    world = easy_world(seed)
    cfg = replace(config, seed=seed, adaptive_stop=(mode == "adaptive"))
    state, trace = tdsr_generate(world, TabularModel(), None, cfg)
    iters = trace.iterations_per_step
    return StoppingRecord(mode, seed, sum(iters) / len(iters), trace.final_reward.total)


def run_stopping(
    seeds: Sequence[int], config: PlannerConfig = PlannerConfig(), workers: int = 1
) -> list[StoppingRecord]:
    """Adaptive early stopping vs the fixed iteration budget on single-region worlds."""
    jobs = [(m, s) for m in ("adaptive", "fixed") for s in seeds]
    recs = parallel_map(partial(_stopping_one, config=config), jobs, workers)
    return sorted(recs, key=lambda r: (r.mode, r.seed))


# ------------------------------------------------------ oracle agreement


@dataclass(frozen=True)
class AgreementRecord:
    seed: int
    vocab_size: int
    max_length: int
    planner_tokens: tuple[int, ...]
    planner_value: float
    optimal_tokens: tuple[int, ...]
    optimal_value: float

    @property
    def ratio(self) -> float:
        return self.planner_value / self.optimal_value


def _agreement_one(seed: int, config: PlannerConfig, world_fn: Callable[[int], WorldInstance],
                   value_params: ValueNetParams | None) -> AgreementRecord:
    world = world_fn(seed)
    oracle = enumerate_optimal(world, config)
    state, trace = tdsr_generate(world, default_model(world), value_params, replace(config, seed=seed))
    return AgreementRecord(seed, world.vocab_size, world.max_length, state.tokens,
                           sequence_value(state, world, config), oracle.best_sequence.tokens,
                           oracle.optimal_value)


def run_agreement(
    seeds: Sequence[int],
    world_fn: Callable[[int], WorldInstance],
    config: PlannerConfig = PlannerConfig(),
    value_params: ValueNetParams | None = None,
    workers: int = 1,
) -> list[AgreementRecord]:
    """Planner output vs brute-force optimum on one world per seed."""
    fn = partial(_agreement_one, config=config, world_fn=world_fn, value_params=value_params)
    return sorted(parallel_map(fn, list(seeds), workers), key=lambda r: r.seed)


def records_to_rows(records: Iterable[Any]) -> tuple[list[str], list[list[Any]]]:
    records = list(records)
    if not records:
        return [], []
    header = [f.name for f in fields(records[0])]
    return header, [[getattr(r, h) for h in header] for r in records]


def trace_paths(out: Path, seed: int) -> tuple[Path, Path]:
    return out / f"trace_seed{seed}.jsonl", out / f"summary_seed{seed}.json"


def plan_runs(world: WorldInstance, seeds: Sequence[int], config: PlannerConfig,
              value_params: ValueNetParams | None = None) -> list[RunTrace]:
    return [tdsr_generate(world, default_model(world), value_params, replace(config, seed=s))[1] for s in seeds]
