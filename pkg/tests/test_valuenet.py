import math

import numpy as np
import pytest

from refinemcts.domain import SequenceState, ValidationError
from refinemcts.reward import redundancy_penalty
from refinemcts.valuenet import (
    TraceRecord,
    TrainingHyper,
    TrainingPair,
    ValueNetParams,
    collect_training_data,
    cosine_lr,
    featurize,
    fuse_value,
    init_params,
    lipschitz_bound,
    mse_and_grads,
    predict,
    predict_batch,
    read_dataset_csv,
    train,
    write_dataset_csv,
    zero_params,
)


CONSTANT_HYPER = TrainingHyper(learning_rate=1e-2, batch_size=32, epochs=400)


def numeric_grad(params, X, y, h=1e-5):
    theta = params.flat()
    g = np.zeros_like(theta)
    F, H = params.n_features, params.hidden
    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        lu, _ = mse_and_grads(ValueNetParams.from_flat(up, F, H), X, y)
        ld, _ = mse_and_grads(ValueNetParams.from_flat(dn, F, H), X, y)
        g[i] = (lu - ld) / (2 * h)
    return g


def test_featurize_empty_is_zero(three_region_world):
    assert not featurize(SequenceState(), three_region_world).any()


def test_featurize_full_coverage(three_region_world):
    x = featurize(SequenceState((0, 1, 2, 3)), three_region_world)
    assert x[-2] == 1.0 and x.shape == (11,)


def test_featurize_redundancy_matches_reward(three_region_world):
    s = SequenceState((4, 4, 4, 4))
    assert featurize(s, three_region_world)[-1] == redundancy_penalty(s, 3)
    assert featurize(s, three_region_world, max_order=2)[-1] == 0.75


def test_predict_zero_params():
    p = zero_params(5, 4)
    rng = np.random.default_rng(0)
    assert all(predict(p, rng.normal(size=5)) == 0.0 for _ in range(5))


def test_predict_hand_two_by_two():
    p = ValueNetParams(np.eye(2), np.zeros(2), np.array([1.0, 1.0]), 0.0)
    # ln(1+e) + ln(1+1/e) = ln(2 + e + 1/e)
    assert predict(p, np.array([1.0, -1.0])) == pytest.approx(math.log(2 + math.e + 1 / math.e), abs=1e-12)
    q = ValueNetParams(np.array([[2.0, 0.0], [0.0, 0.0]]), np.array([0.0, 1.0]), np.array([0.5, -1.0]), 0.25)
    expected = 0.5 * math.log1p(math.exp(2.0)) - math.log1p(math.e) + 0.25
    assert predict(q, np.array([1.0, 3.0])) == pytest.approx(expected, abs=1e-12)


def test_predict_deterministic_and_batch_consistent():
    p = init_params(6, 8, seed=3)
    X = np.random.default_rng(1).normal(size=(10, 6))
    assert predict(p, X[0]) == predict(p, X[0])
    assert np.allclose(predict_batch(p, X), [predict(p, x) for x in X], atol=1e-12)


def test_predict_dimension_mismatch():
    with pytest.raises(ValidationError):
        predict(init_params(4, 3), np.zeros(5))


def test_init_range_and_seed():
    p = init_params(16, 32, seed=5)
    assert np.all(np.abs(p.w1) <= 0.25) and np.all(np.abs(p.w2) <= 1 / math.sqrt(32))
    assert np.array_equal(p.flat(), init_params(16, 32, seed=5).flat())
    assert not np.array_equal(p.flat(), init_params(16, 32, seed=6).flat())


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    for point in range(20):
        p = init_params(5, 6, seed=point)
        X = rng.normal(size=(12, 5))
        y = rng.normal(size=12)
        _, g = mse_and_grads(p, X, y)
        num = numeric_grad(p, X, y)
        rel = np.linalg.norm(g.flat() - num) / max(np.linalg.norm(num), 1e-12)
        assert rel < 1e-4


def test_lipschitz_bound_holds():
    rng = np.random.default_rng(2)
    p = init_params(7, 16, seed=4)
    L = lipschitz_bound(p)
    for _ in range(500):
        x, y = rng.normal(size=7) * 3, rng.normal(size=7) * 3
        assert abs(predict(p, x) - predict(p, y)) <= L * np.linalg.norm(x - y) + 1e-12


def test_fuse_examples():
    assert fuse_value(0.2, 0.6, 1.0) == 0.2
    assert fuse_value(0.2, 0.6, 0.0) == 0.6
    assert fuse_value(0.2, 0.6, 0.5) == pytest.approx(0.4, abs=1e-12)
    with pytest.raises(ValidationError):
        fuse_value(0.2, 0.6, 1.5)


def test_fuse_monotone_in_lambda():
    lams = np.linspace(0, 1, 21)
    up = [fuse_value(0.9, 0.1, l) for l in lams]
    down = [fuse_value(0.1, 0.9, l) for l in lams]
    assert all(a <= b for a, b in zip(up, up[1:]))
    assert all(a >= b for a, b in zip(down, down[1:]))


def test_collect_training_data(three_region_world):
    states = [SequenceState(tuple(range(i))) for i in range(5)]
    pairs, skipped = collect_training_data([TraceRecord(states, 0.8, three_region_world)])
    assert len(pairs) == 5 and skipped == 0 and {p.target for p in pairs} == {0.8}
    assert collect_training_data([]) == ([], 0)


def test_collect_keeps_targets_per_trace(three_region_world):
    a = TraceRecord([SequenceState(), SequenceState((0,))], 0.3, three_region_world)
    b = TraceRecord([SequenceState()], 0.9, three_region_world)
    c = TraceRecord([SequenceState()], None, three_region_world)
    pairs, skipped = collect_training_data([a, b, c])
    assert [p.target for p in pairs] == [0.3, 0.3, 0.9] and skipped == 1


def test_train_zero_epochs_returns_init():
    X = np.random.default_rng(0).uniform(size=(20, 4))
    p, curve = train((X, np.ones(20)), TrainingHyper(epochs=0, hidden=5))
    assert curve == [] and np.array_equal(p.flat(), init_params(4, 5, seed=0).flat())


def test_train_empty_dataset_rejected():
    with pytest.raises(ValidationError):
        train([], TrainingHyper())


@pytest.mark.parametrize("c", [-1.0, 0.5, 2.0])
def test_constant_target_converges(c):
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(500, 11))
    params, _ = train([TrainingPair(x, c) for x in X], CONSTANT_HYPER)
    Xt = rng.uniform(size=(1000, 11))
    assert np.max(np.abs(predict_batch(params, Xt) - c)) < 1e-2


def test_constant_target_loss_nonincreasing():
    X = np.random.default_rng(0).uniform(size=(500, 11))
    hyper = TrainingHyper(learning_rate=0.02, batch_size=500, epochs=300, optimizer="sgd")
    _, curve = train((X, np.full(500, 1.3)), hyper)
    assert all(b <= a + 1e-9 for a, b in zip(curve, curve[1:]))
    assert curve[-1] < curve[0]


def test_planted_linear_target_default_schedule():
    F = 16
    rng = np.random.default_rng(0)
    w, b = rng.normal(0, 1 / math.sqrt(F), F), 0.3
    X = rng.uniform(size=(65536, F))
    Xt = rng.uniform(size=(4000, F))
    params, curve = train((X, X @ w + b), TrainingHyper(batch_size=32))
    assert len(curve) == 10
    assert float(np.mean((predict_batch(params, Xt) - (Xt @ w + b)) ** 2)) < 1e-3


def test_training_deterministic():
    X = np.random.default_rng(0).uniform(size=(100, 4))
    y = X.sum(axis=1)
    a = train((X, y), TrainingHyper(epochs=3, batch_size=16))
    b = train((X, y), TrainingHyper(epochs=3, batch_size=16))
    assert np.array_equal(a[0].flat(), b[0].flat()) and a[1] == b[1]


def test_cosine_schedule():
    assert cosine_lr(0, 10, 1.0) == 1.0
    assert cosine_lr(5, 10, 1.0) == pytest.approx(0.5, abs=1e-15)
    assert cosine_lr(10, 10, 1.0) == pytest.approx(0.0, abs=1e-15)


def test_hyper_validation():
    for bad in (dict(learning_rate=0), dict(batch_size=0), dict(epochs=-1), dict(weight_decay=-1),
                dict(optimizer="rmsprop")):
        with pytest.raises(ValidationError):
            TrainingHyper(**bad)


def test_params_persistence(tmp_path):
    p = init_params(5, 4, seed=1)
    path = tmp_path / "p.json"
    p.save(path)
    q = ValueNetParams.load(path)
    assert np.array_equal(p.flat(), q.flat())
    d = p.to_dict()
    assert [(l["in"], l["out"]) for l in d["layers"]] == [(5, 4), (4, 1)]
    d["layers"][0]["out"] = 3
    with pytest.raises(ValidationError):
        ValueNetParams.from_dict(d)
    with pytest.raises(ValidationError):
        ValueNetParams.load(tmp_path / "none.json")


def test_dataset_csv_roundtrip(tmp_path):
    pairs = [TrainingPair(np.array([0.1, 0.2]), 1.5), TrainingPair(np.array([1 / 3, 0.0]), -0.25)]
    path = tmp_path / "d.csv"
    write_dataset_csv(pairs, path)
    back = read_dataset_csv(path)
    assert path.read_text().splitlines()[0] == "f0,f1,target"
    assert all(np.array_equal(a.features, b.features) and a.target == b.target for a, b in zip(pairs, back))
