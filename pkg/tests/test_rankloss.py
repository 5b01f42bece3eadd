import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from salrank.gradcheck import GAMMA_GRID
from salrank.rankloss import (LossConfig, enumerate_pairs, pair_weights, ranking_loss,
                              ranking_loss_grad, softplus)

import oracles


def sp(x):
    return math.log1p(math.exp(x))


@pytest.mark.parametrize("gamma, want", [
    (0.0, [1 / 3, 1 / 3, 1 / 3]),
    (1.0, [0.25, 0.5, 0.25]),
    (2.0, [1 / 6, 2 / 3, 1 / 6]),
])
def test_weights_n3(gamma, want):
    assert np.allclose(pair_weights([1, 2, 3], LossConfig(gamma)), want, atol=1e-15)


def test_weights_normalized_over_grid():
    rng = np.random.default_rng(0)
    for n in range(2, 9):
        for gamma in GAMMA_GRID:
            w = pair_weights(rng.permutation(n) + 1, LossConfig(gamma))
            assert abs(w.sum() - 1.0) < 1e-12 and (w > 0).all()


def test_pairs_ordered_more_salient_first():
    ranks = [3, 1, 2]
    for hi, lo in enumerate_pairs(ranks):
        assert ranks[hi] < ranks[lo]
    assert len(enumerate_pairs(ranks)) == 3


def test_hand_value():
    got = ranking_loss([0.5, 0.0, -0.5], [1, 2, 3], LossConfig(1.0))
    want = 0.25 * sp(-0.5) + 0.5 * sp(-1.0) + 0.25 * sp(-0.5)
    assert got == pytest.approx(want, abs=1e-15)


def test_equal_scores_give_log2():
    for n in range(2, 9):
        for gamma in GAMMA_GRID:
            assert abs(ranking_loss(np.full(n, 0.7), np.arange(1, n + 1), LossConfig(gamma))
                       - math.log(2)) < 1e-12


def test_gamma0_is_uniform_pairwise_loss():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(2, 9))
        s = rng.normal(size=n) * 3
        r = rng.permutation(n) + 1
        assert abs(ranking_loss(s, r, LossConfig(0.0)) - oracles.uniform_pair_loss(s, r)) < 1e-12


def test_softplus_stable():
    assert softplus(1000.0) == 1000.0
    assert softplus(-1000.0) == 0.0
    assert softplus(0.0) == pytest.approx(math.log(2))


def test_batched_loss_matches_loop():
    rng = np.random.default_rng(2)
    s = rng.normal(size=(3, 4, 5))
    r = [2, 5, 1, 3, 4]
    batched = ranking_loss(s, r)
    for idx in itertools.product(range(3), range(4)):
        assert batched[idx] == pytest.approx(ranking_loss(s[idx], r), abs=1e-15)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 8), st.sampled_from(GAMMA_GRID), st.integers(0, 2**31))
def test_gradient_matches_central_differences(n, gamma, seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=n)
    r = rng.permutation(n) + 1
    cfg = LossConfig(gamma)
    h = 1e-6
    num = np.array([(ranking_loss(s + h * e, r, cfg) - ranking_loss(s - h * e, r, cfg)) / (2 * h)
                    for e in np.eye(n)])
    assert np.abs(ranking_loss_grad(s, r, cfg) - num).max() < 1e-8


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        LossConfig(-0.5)
    with pytest.raises(ValueError):
        ranking_loss([1.0, 2.0], [1, 1])
    with pytest.raises(ValueError):
        ranking_loss([1.0], [1])
