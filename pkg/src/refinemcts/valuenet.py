"""Lightweight value estimator: hand features + a two-layer softplus perceptron.

Trained offline with MSE against terminal rewards of finished planner runs.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .domain import SequenceState, ValidationError, WorldInstance
from .reward import coverage_quality, redundancy_penalty

log = logging.getLogger(__name__)

COUNT_CAP = 4
DEFAULT_HIDDEN = 32


def n_features(world: WorldInstance) -> int:
    return world.vocab_size + 3


def featurize(state: SequenceState, world: WorldInstance, max_order: int = 3) -> np.ndarray:
    """``[capped token counts / max_length ..., length / max_length, coverage, redundancy]``."""
    x = np.zeros(world.vocab_size + 3)
    L = world.max_length
    counts = np.bincount(np.asarray(state.tokens, dtype=np.int64), minlength=world.vocab_size)
    x[: world.vocab_size] = np.minimum(counts, COUNT_CAP) / L
    x[-3] = len(state.tokens) / L
    x[-2] = coverage_quality(state, world)
    x[-1] = redundancy_penalty(state, max_order)
    return x


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class ValueNetParams:
    """F -> H -> 1 perceptron: ``w2 . softplus(W1 x + b1) + b2``."""

    w1: np.ndarray  # (H, F)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H,)
    b2: float

    @property
    def n_features(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "ValueNetParams":
        return ValueNetParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), float(self.b2))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    @classmethod
    def from_flat(cls, v: np.ndarray, n_features: int, hidden: int) -> "ValueNetParams":
        H, F = hidden, n_features
        i = 0
        w1 = v[i : i + H * F].reshape(H, F)
        i += H * F
        b1 = v[i : i + H]
        i += H
        w2 = v[i : i + H]
        i += H
        return cls(w1.copy(), b1.copy(), w2.copy(), float(v[i]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "layers": [
                {"in": self.n_features, "out": self.hidden, "activation": "softplus",
                 "weights": self.w1.tolist(), "bias": self.b1.tolist()},
                {"in": self.hidden, "out": 1, "activation": "identity",
                 "weights": [self.w2.tolist()], "bias": [self.b2]},
            ]
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ValueNetParams":
        try:
            l1, l2 = d["layers"]
            w1 = np.asarray(l1["weights"], dtype=float)
            b1 = np.asarray(l1["bias"], dtype=float)
            w2 = np.asarray(l2["weights"], dtype=float).reshape(-1)
            b2 = float(l2["bias"][0])
        except (KeyError, ValueError, TypeError) as exc:
            raise ValidationError(f"malformed value-net parameters: {exc}") from exc
        if w1.shape != (l1["out"], l1["in"]) or b1.shape != (l1["out"],) or w2.shape != (l1["out"],):
            raise ValidationError("value-net parameter shapes disagree with layer metadata")
        params = cls(w1, b1, w2, b2)
        if not np.all(np.isfinite(params.flat())):
            raise ValidationError("value-net parameters contain non-finite entries")
        return params

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ValueNetParams":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except FileNotFoundError:
            raise ValidationError(f"value-net file not found: {path}") from None


def init_params(n_features: int, hidden: int = DEFAULT_HIDDEN, seed: int = 0) -> ValueNetParams:
    """Uniform in ``±1/sqrt(fan_in)``."""
    rng = np.random.default_rng(seed)
    a1 = 1.0 / math.sqrt(n_features)
    a2 = 1.0 / math.sqrt(hidden)
    return ValueNetParams(
        w1=rng.uniform(-a1, a1, (hidden, n_features)),
        b1=rng.uniform(-a1, a1, hidden),
        w2=rng.uniform(-a2, a2, hidden),
        b2=float(rng.uniform(-a2, a2)),
    )


def zero_params(n_features: int, hidden: int = DEFAULT_HIDDEN) -> ValueNetParams:
    return ValueNetParams(np.zeros((hidden, n_features)), np.zeros(hidden), np.zeros(hidden), 0.0)


def predict(params: ValueNetParams, features: np.ndarray) -> float:
    x = np.asarray(features, dtype=float)
    if x.shape != (params.n_features,):
        raise ValidationError(f"feature dimension {x.shape} does not match network input {params.n_features}")
    return float(params.w2 @ softplus(params.w1 @ x + params.b1) + params.b2)


def predict_batch(params: ValueNetParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.n_features:
        raise ValidationError(f"feature matrix shape {X.shape} does not match network input {params.n_features}")
    return softplus(X @ params.w1.T + params.b1) @ params.w2 + params.b2


def mse_and_grads(params: ValueNetParams, X: np.ndarray, y: np.ndarray) -> tuple[float, ValueNetParams]:
    """Mean squared error and its analytic gradient."""
    z = X @ params.w1.T + params.b1
    h = softplus(z)
    err = h @ params.w2 + params.b2 - y
    n = X.shape[0]
    g_out = 2.0 * err / n
    g_w2 = h.T @ g_out
    g_b2 = float(g_out.sum())
    g_z = np.outer(g_out, params.w2) * sigmoid(z)
    g_w1 = g_z.T @ X
    g_b1 = g_z.sum(axis=0)
    return float(np.mean(err**2)), ValueNetParams(g_w1, g_b1, g_w2, g_b2)


def lipschitz_bound(params: ValueNetParams) -> float:
    """Upper bound on the network's Lipschitz constant (softplus is 1-Lipschitz)."""
    return float(np.linalg.norm(params.w1, 2) * np.linalg.norm(params.w2))


def fuse_value(v_vlm: float, v_hat: float, lambda_v: float) -> float:
    """Convex blend ``lambda_v * v_vlm + (1 - lambda_v) * v_hat``."""
    if not 0.0 <= lambda_v <= 1.0:
        raise ValidationError(f"lambda_v={lambda_v} must lie in [0, 1]")
    if lambda_v == 1.0:
        return v_vlm
    if lambda_v == 0.0:
        return v_hat
    return lambda_v * v_vlm + (1.0 - lambda_v) * v_hat


@dataclass(frozen=True)
class TrainingPair:
    features: np.ndarray
    target: float


@dataclass(frozen=True)
class TrainingHyper:
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 256
    epochs: int = 10
    seed: int = 0
    hidden: int = DEFAULT_HIDDEN
    optimizer: str = "adamw"  # or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate={self.learning_rate} must be > 0")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size={self.batch_size} must be >= 1")
        if self.epochs < 0:
            raise ValidationError(f"epochs={self.epochs} must be >= 0")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay={self.weight_decay} must be >= 0")
        if self.optimizer not in {"adamw", "sgd"}:
            raise ValidationError(f"optimizer must be 'adamw' or 'sgd', got {self.optimizer!r}")


def cosine_lr(step: int, total_steps: int, peak: float) -> float:
    """Cosine annealing from ``peak`` (step 0) towards 0 (after the last step)."""
    return 0.5 * peak * (1.0 + math.cos(math.pi * step / total_steps))


def _stack(dataset: Sequence[TrainingPair]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([np.asarray(p.features, dtype=float) for p in dataset])
    y = np.array([p.target for p in dataset], dtype=float)
    return X, y


def train(
    dataset: Sequence[TrainingPair] | tuple[np.ndarray, np.ndarray],
    hyper: TrainingHyper = TrainingHyper(),
    init: ValueNetParams | None = None,
) -> tuple[ValueNetParams, list[float]]:
    """Mini-batch training with decoupled weight decay and a cosine-annealed rate.

    Returns the final parameters and one mean-MSE entry per epoch (the average of
    that epoch's mini-batch losses, weighted by batch size).
    """
    if isinstance(dataset, tuple):
        X, y = (np.asarray(a, dtype=float) for a in dataset)
    else:
        if len(dataset) == 0:
            raise ValidationError("cannot train on an empty dataset")
        X, y = _stack(dataset)
    n = X.shape[0]
    if n == 0:
        raise ValidationError("cannot train on an empty dataset")
    if not np.all(np.isfinite(y)):
        raise ValidationError("training targets must be finite")
    params = init.copy() if init is not None else init_params(X.shape[1], hyper.hidden, hyper.seed)
    if params.n_features != X.shape[1]:
        raise ValidationError(f"dataset has {X.shape[1]} features, network expects {params.n_features}")
    batch = min(hyper.batch_size, n)
    per_epoch = math.ceil(n / batch)
    total = per_epoch * hyper.epochs
    rng = np.random.default_rng(hyper.seed + 1)

    theta = params.flat()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    F, H = params.n_features, params.hidden
    curve: list[float] = []
    step = 0
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            cur = ValueNetParams.from_flat(theta, F, H)
            loss, grads = mse_and_grads(cur, X[idx], y[idx])
            loss_sum += loss * idx.size
            g = grads.flat()
            lr = cosine_lr(step, total, hyper.learning_rate)
            step += 1
            theta *= 1.0 - lr * hyper.weight_decay
            if hyper.optimizer == "sgd":
                theta -= lr * g
            else:
                m = hyper.beta1 * m + (1 - hyper.beta1) * g
                v = hyper.beta2 * v + (1 - hyper.beta2) * g * g
                m_hat = m / (1 - hyper.beta1**step)
                v_hat = v / (1 - hyper.beta2**step)
                theta -= lr * m_hat / (np.sqrt(v_hat) + hyper.adam_eps)
        curve.append(loss_sum / n)
    return ValueNetParams.from_flat(theta, F, H), curve


@dataclass
class TraceRecord:
    """Minimal view of a finished run used for data collection."""

    states: list[SequenceState]
    terminal_total: float | None
    world: WorldInstance
    max_order: int = 3


def collect_training_data(traces: Iterable[Any]) -> tuple[list[TrainingPair], int]:
    """One pair per intermediate state, targeting its run's noiseless terminal total.

    Accepts :class:`TraceRecord` objects or planner ``RunTrace`` objects. Returns
    the pairs and the number of traces skipped for lacking a terminal reward.
    """
    pairs: list[TrainingPair] = []
    skipped = 0
    for tr in traces:
        rec = tr.as_training_record() if hasattr(tr, "as_training_record") else tr
        if rec.terminal_total is None:
            skipped += 1
            continue
        for s in rec.states:
            pairs.append(TrainingPair(featurize(s, rec.world, rec.max_order), float(rec.terminal_total)))
    if skipped:
        log.warning("skipped %d trace(s) without a terminal reward", skipped)
    return pairs, skipped


def write_dataset_csv(pairs: Sequence[TrainingPair], path: str | Path) -> None:
    if not pairs:
        raise ValidationError("empty dataset")
    F = len(pairs[0].features)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(F)] + ["target"])
        for p in pairs:
            w.writerow([repr(float(v)) for v in p.features] + [repr(float(p.target))])


def read_dataset_csv(path: str | Path) -> list[TrainingPair]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[-1] != "target":
        raise ValidationError(f"{path}: last column must be 'target'")
    return [TrainingPair(np.array([float(v) for v in r[:-1]]), float(r[-1])) for r in body]
