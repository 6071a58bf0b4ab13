import math

import pytest

from refinemcts.domain import validate_world
from refinemcts.worlds import (
    arm_token,
    bandit_world,
    branching_world,
    easy_world,
    hallucination_means,
    random_world,
    saliency_world,
)


def test_random_worlds_valid_and_in_range():
    for seed in range(200):
        w = random_world(seed)
        assert validate_world(w) == []
        assert 3 <= w.vocab_size <= 8 and 2 <= w.max_length <= 6
        assert w.vocab_size ** w.max_length <= 2**20


def test_random_world_seeded():
    assert random_world(7) == random_world(7)


def test_bandit_world():
    w = bandit_world(seed=3)
    assert validate_world(w) == [] and w.is_bandit and w.vocab_size == 4
    tokens = sorted(arm_token(w, r) for r in range(4))
    assert tokens == [0, 1, 2, 3]
    assert [r.saliency_weight for r in w.regions] == [0.4, 0.3, 0.2, 0.1]


def test_hallucination_means():
    for d in (0.0, 0.2, 0.5):
        m = hallucination_means(d)
        assert math.fsum(m) == pytest.approx(1.0, abs=1e-12)
        assert m[0] - m[1] == pytest.approx(d, abs=1e-12)
        assert all(m[1] > f > 0 for f in m[2:])
    with pytest.raises(ValueError):
        hallucination_means(1.0)


@pytest.mark.parametrize("w", [saliency_world(), easy_world(0), easy_world(5), branching_world(0), branching_world(9)])
def test_builtin_worlds_valid(w):
    assert validate_world(w) == []


def test_branching_world_shape():
    w = branching_world(1)
    assert w.vocab_size == 64 and len(w.regions) == 4 and w.max_length == 3
