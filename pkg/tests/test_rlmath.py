import math
import random

import pytest

from taskforge.rlmath import (GroupRewards, TokenLogProbs, clipped_term,
                              group_advantages, kl_low_var, objective_estimate,
                              token_ratio)


def test_advantages_examples():
    assert group_advantages([1, 0, 1, 0]) == [1.0, -1.0, 1.0, -1.0]
    assert group_advantages([0.7] * 5) == [0.0] * 5
    assert group_advantages([2, 0]) == [1.0, -1.0]
    assert group_advantages(GroupRewards((2, 0))) == [1.0, -1.0]


def test_advantages_empty_rejected():
    with pytest.raises(ValueError):
        group_advantages([])


def test_advantages_mean_zero_std_one():
    rng = random.Random(301)
    for _ in range(200):
        g = rng.randrange(2, 20)
        rewards = [rng.uniform(-5, 5) for _ in range(g)]
        adv = group_advantages(rewards)
        mean = sum(adv) / g
        if all(a == 0.0 for a in adv):
            continue
        std = math.sqrt(sum((a - mean) ** 2 for a in adv) / g)
        assert abs(mean) < 1e-9
        assert abs(std - 1.0) < 1e-9


def test_advantages_affine_invariance():
    rng = random.Random(303)
    base = [rng.uniform(0, 1) for _ in range(8)]
    want = group_advantages(base)
    for _ in range(1000):
        a = rng.uniform(1e-3, 100.0)
        b = rng.uniform(-50, 50)
        got = group_advantages([a * r + b for r in base])
        assert all(abs(x - y) < 1e-9 for x, y in zip(got, want))


def test_token_ratio():
    assert token_ratio(-1.5, -1.5) == 1.0
    assert abs(token_ratio(0.0, -math.log(2)) - 2.0) < 1e-12
    assert abs(token_ratio(-math.log(4), 0.0) - 0.25) < 1e-12


def test_clipped_term_examples():
    assert abs(clipped_term(1.5, 1.0) - 1.2) < 1e-12
    assert abs(clipped_term(0.5, -1.0) - (-0.72)) < 1e-12
    for adv in (-2.0, 0.0, 3.5):
        assert clipped_term(1.0, adv) == adv


def test_clipped_term_pessimistic_bound():
    rng = random.Random(307)
    for _ in range(1000):
        r = rng.uniform(0.01, 3.0)
        a = rng.uniform(-2, 2)
        assert clipped_term(r, a) <= r * a + 1e-15


def test_kl_values():
    assert kl_low_var(0.0, 0.0) == 0.0
    assert abs(kl_low_var(-1.0, 0.0) - (math.e - 2.0)) < 1e-12
    assert abs(kl_low_var(0.0, -1.0) - (1.0 / math.e)) < 1e-12


def test_kl_nonnegative():
    rng = random.Random(311)
    for _ in range(10_000):
        d = rng.uniform(-5, 5)
        v = kl_low_var(0.0, d)
        assert v >= 0.0
        assert (v == 0.0) == (d == 0.0)


def test_objective_single_token():
    out = TokenLogProbs((-1.0,), (-1.0,), (-1.0,))
    assert abs(objective_estimate([out], [1.0], beta=0.0) - 1.0) < 1e-12


def test_objective_token_denominator():
    o1 = TokenLogProbs((-1.0,), (-1.0,), (-1.0,))
    o3 = TokenLogProbs((-1.0,) * 3, (-1.0,) * 3, (-1.0,) * 3)
    # ratios all 1, KL 0: token mean of advantages weighted by length
    got = objective_estimate([o1, o3], [1.0, 0.0], beta=0.01)
    assert abs(got - 1.0 / 4.0) < 1e-12


def test_objective_kl_inactive_at_ratio_one():
    o = TokenLogProbs((-2.0, -0.5), (-2.0, -0.5), (-2.0, -0.5))
    got = objective_estimate([o], [0.3], beta=0.01)
    assert abs(got - 0.3) < 1e-12


def test_objective_shape_mismatch():
    o = TokenLogProbs((-1.0,), (-1.0,), (-1.0,))
    with pytest.raises(ValueError):
        objective_estimate([o], [1.0, 2.0])
    with pytest.raises(ValueError):
        TokenLogProbs((-1.0,), (-1.0, -2.0), (-1.0,))
