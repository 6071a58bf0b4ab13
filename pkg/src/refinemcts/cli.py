"""``refinemcts`` command line.

Every subcommand writes into ``--out`` (default ``$REFINEMCTS_OUT`` or
``./refinemcts_out``). CSV headers are fixed and rows are sorted by key, so a
rerun with the same inputs and seeds reproduces every file byte for byte.

Output files and headers:

    plan           trace_seed<S>.jsonl, summary_seed<S>.json
    sweep          sweep.csv: param,value,seed,total_reward,length,iterations,
                   mean_iterations_per_step,model_calls,mean_fused_value
    regret         regret.csv: T,seed,regret,chosen
                   regret_summary.csv: T,median_regret,n_seeds
    hallucination  hallucination.csv: T,seed,chosen,hallucinated
                   hallucination_summary.csv: T,fraction,n_seeds
    branching      branching.csv: mode,seed,iterations_to_target,total_iterations,
                   final_value,optimal_value
                   branching_summary.csv: mode,median_iterations,n_reached,n_seeds
    train-value    value_params.json, loss_curve.csv: epoch,mse
    oracle         oracle.json, optionally value_table.csv: tokens,total
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import experiments as ex
from .domain import ContractViolation, PlannerConfig, ValidationError, load_config, load_world
from .oracle import OracleRefusal, enumerate_optimal, write_value_table
from .planner import read_trace
from .valuenet import TrainingHyper, ValueNetParams, collect_training_data, train
from .worlds import saliency_world

OUT_ENV = "REFINEMCTS_OUT"
DEFAULT_OUT = "refinemcts_out"

log = logging.getLogger("refinemcts")


def parse_seeds(text: str) -> list[int]:
    """``"10"`` means seeds 0..9; ``"3,5,8"`` is an explicit list."""
    text = text.strip()
    try:
        if "," in text:
            seeds = [int(s) for s in text.split(",") if s.strip()]
        else:
            seeds = list(range(int(text)))
    except ValueError:
        raise ValidationError(f"--seeds must be a count or a comma list, got {text!r}") from None
    if not seeds:
        raise ValidationError("seed list is empty")
    if any(s < 0 for s in seeds):
        raise ValidationError(f"seeds must be non-negative, got {seeds}")
    return sorted(set(seeds))


def parse_overrides(items: Sequence[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ValidationError(f"--override expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def parse_floats(text: str, name: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"{name} must be a comma list of numbers, got {text!r}") from None


def parse_ints(text: str, name: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"{name} must be a comma list of integers, got {text!r}") from None


def _config(args: argparse.Namespace) -> PlannerConfig:
    return load_config(args.config).with_overrides(**parse_overrides(args.override))


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _value_params(args: argparse.Namespace) -> ValueNetParams | None:
    path = getattr(args, "value_params", None)
    if path is None:
        return None
    try:
        return ValueNetParams.load(path)
    except FileNotFoundError:
        raise ValidationError(f"value-net file not found: {path}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise ValidationError(f"value-net file {path} is malformed: {exc}") from exc


def _write_json(path: Path, obj: object) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _world_or_none(args: argparse.Namespace):
    return load_world(args.world) if args.world else None


# ------------------------------------------------------------- commands


def cmd_plan(args: argparse.Namespace) -> int:
    if not args.world:
        raise ValidationError("plan needs --world")
    world = load_world(args.world)
    config = _config(args)
    out = _out_dir(args)
    traces = ex.plan_runs(world, parse_seeds(args.seeds), config, _value_params(args))
    for tr in traces:
        jsonl, summary = ex.trace_paths(out, tr.config.seed)
        tr.write(jsonl, summary)
        log.info("seed %d: total %.6f, %d steps", tr.config.seed, tr.final_reward.total, len(tr.steps))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    world = _world_or_none(args) or saliency_world()
    config = _config(args)
    grids = dict(ex.SWEEP_GRIDS)
    if args.param:
        grids = {}
        for item in args.param:
            name, sep, values = item.partition("=")
            grids[name] = parse_floats(values, f"--param {name}") if sep else ex.SWEEP_GRIDS.get(name)
            if grids[name] is None:
                raise ValidationError(f"no default grid for {name!r}; pass --param {name}=v1,v2,...")
    rows = ex.run_sweep(world, parse_seeds(args.seeds), config, grids, _value_params(args), args.workers)
    header, body = ex.records_to_rows(rows)
    ex.write_csv(_out_dir(args) / "sweep.csv", header, body)
    return 0


def cmd_regret(args: argparse.Namespace) -> int:
    world = _world_or_none(args)
    recs = ex.run_regret(parse_seeds(args.seeds), world, args.sigma, parse_ints(args.T, "--T"),
                         _config(args), args.workers)
    out = _out_dir(args)
    header, body = ex.records_to_rows(recs)
    ex.write_csv(out / "regret.csv", header, body)
    n = len({r.seed for r in recs})
    ex.write_csv(out / "regret_summary.csv", ["T", "median_regret", "n_seeds"],
                 [[T, float(m), n] for T, m in ex.median_by_T(recs).items()])
    return 0


def cmd_hallucination(args: argparse.Namespace) -> int:
    world = _world_or_none(args)
    recs = ex.run_hallucination(parse_seeds(args.seeds), args.delta_h, args.sigma,
                                parse_ints(args.T, "--T"), _config(args), world, args.workers)
    out = _out_dir(args)
    header, body = ex.records_to_rows(recs)
    ex.write_csv(out / "hallucination.csv", header, body)
    n = len({r.seed for r in recs})
    ex.write_csv(out / "hallucination_summary.csv", ["T", "fraction", "n_seeds"],
                 [[T, float(f), n] for T, f in ex.hallucination_fractions(recs).items()])
    return 0


def cmd_branching(args: argparse.Namespace) -> int:
    seeds = parse_seeds(args.seeds)
    recs = ex.run_branching(seeds, _config(args), args.n_actions, args.n_regions, args.max_length,
                            args.top_m, workers=args.workers)
    out = _out_dir(args)
    header, body = ex.records_to_rows(recs)
    ex.write_csv(out / "branching.csv", header, body)
    summary = []
    for mode in sorted({r.mode for r in recs}):
        mine = [r for r in recs if r.mode == mode]
        reached = sum(r.iterations_to_target is not None for r in mine)
        summary.append([mode, float(ex.median_budget(recs, mode)), reached, len(mine)])
    ex.write_csv(out / "branching_summary.csv", ["mode", "median_iterations", "n_reached", "n_seeds"], summary)
    return 0


def cmd_train_value(args: argparse.Namespace) -> int:
    if not args.world:
        raise ValidationError("train-value needs --world")
    world = load_world(args.world)
    trace_dir = Path(args.traces)
    if not trace_dir.is_dir():
        raise ValidationError(f"trace directory not found: {trace_dir}")
    records = []
    for jsonl in sorted(trace_dir.glob("trace_seed*.jsonl")):
        summary = jsonl.with_name(jsonl.name.replace("trace_", "summary_").replace(".jsonl", ".json"))
        if not summary.exists():
            raise ValidationError(f"trace {jsonl} has no summary file {summary}")
        records.append(read_trace(jsonl, summary, world))
    pairs, _ = collect_training_data(records)
    if not pairs:
        raise ValidationError(f"no training pairs found under {trace_dir}")
    hyper = TrainingHyper(
        learning_rate=args.lr, weight_decay=args.weight_decay, batch_size=args.batch_size,
        epochs=args.epochs, seed=args.train_seed, optimizer=args.optimizer,
    )
    params, curve = train(pairs, hyper)
    out = _out_dir(args)
    params.save(out / "value_params.json")
    ex.write_csv(out / "loss_curve.csv", ["epoch", "mse"], [[i + 1, float(v)] for i, v in enumerate(curve)])
    log.info("trained on %d pairs from %d traces; final mse %.3g", len(pairs), len(records), curve[-1] if curve else float("nan"))
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    if not args.world:
        raise ValidationError("oracle needs --world")
    world = load_world(args.world)
    config = _config(args)
    result = enumerate_optimal(world, config)
    out = _out_dir(args)
    _write_json(out / "oracle.json", {
        "world_id": world.world_id,
        "best_tokens": list(result.best_sequence.tokens),
        "optimal_value": result.optimal_value,
        "n_terminal_sequences": len(result.value_table),
    })
    if args.table:
        write_value_table(result, out / "value_table.csv")
    return 0


COMMANDS = {
    "plan": cmd_plan,
    "sweep": cmd_sweep,
    "regret": cmd_regret,
    "hallucination": cmd_hallucination,
    "branching": cmd_branching,
    "train-value": cmd_train_value,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--world", help="world JSON file")
    common.add_argument("--config", help="planner config JSON file")
    common.add_argument("--seeds", default="1", help="seed count N (seeds 0..N-1) or comma list")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="planner config override, repeatable")
    common.add_argument("--workers", type=int, default=1, help="worker processes for independent runs")
    common.add_argument("-v", "--verbose", action="store_true")

    T_default = ",".join(map(str, ex.T_VALUES))
    p = argparse.ArgumentParser(prog="refinemcts", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("plan", parents=[common], help="plan one caption per seed")
    s.add_argument("--value-params", help="trained value-net JSON")

    s = sub.add_parser("sweep", parents=[common], help="one-at-a-time hyperparameter sweep")
    s.add_argument("--param", action="append", metavar="NAME[=v1,v2,...]",
                   help="parameter to sweep (default grid if no values); repeatable")
    s.add_argument("--value-params", help="trained value-net JSON")

    s = sub.add_parser("regret", parents=[common], help="simple regret at the root vs budget")
    s.add_argument("--sigma", type=float, default=0.5, help="reward noise of the built-in bandit")
    s.add_argument("--T", default=T_default, help="comma list of iteration budgets")

    s = sub.add_parser("hallucination", parents=[common], help="hallucination-arm selection rate vs budget")
    s.add_argument("--delta-h", type=float, default=0.2)
    s.add_argument("--sigma", type=float, default=0.5)
    s.add_argument("--T", default=T_default)

    s = sub.add_parser("branching", parents=[common], help="restricted vs full expansion")
    s.add_argument("--n-actions", type=int, default=64)
    s.add_argument("--n-regions", type=int, default=4)
    s.add_argument("--max-length", type=int, default=3)
    s.add_argument("--top-m", type=int, default=8, help="children kept in restricted mode")

    s = sub.add_parser("train-value", parents=[common], help="fit the value net to planner traces")
    s.add_argument("--traces", required=True, help="directory holding trace_seed*.jsonl + summary_seed*.json")
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--weight-decay", type=float, default=0.01)
    s.add_argument("--batch-size", type=int, default=256)
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--train-seed", type=int, default=0)
    s.add_argument("--optimizer", choices=("adamw", "sgd"), default="adamw")

    s = sub.add_parser("oracle", parents=[common], help="brute-force optimum of a small world")
    s.add_argument("--table", action="store_true", help="also write the full value table")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except OracleRefusal as exc:
        print(f"error: {exc} (size {exc.size})", file=sys.stderr)
        return 3
    except (ValidationError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
