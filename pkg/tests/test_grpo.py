import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from manifold_rl.errors import InvalidInputError
from manifold_rl.grpo import (AdvantageSet, RolloutGroup, clipped_term, group_advantages,
                              grpo_objective, sequence_logprobs, softmax_policy_gradient)
from manifold_rl.toy_lab import ToyPolicy

from helpers import gradients_close, naive_logprobs, objective_of_logits, random_policy_group
from oracles import central_difference

reward_arrays = arrays(np.float64, st.integers(2, 32), elements=st.floats(-100, 100))


def test_constant_rewards_zero_advantage():
    adv = group_advantages([2.5] * 4)
    assert np.all(adv.advantages == 0)
    assert adv.std_reward == 0


def test_two_point_fixture():
    adv = group_advantages([1, 3], eps_std=1e-6)
    np.testing.assert_allclose(adv.advantages, [-0.999999, 0.999999], atol=1e-12)
    assert adv.mean_reward == 2 and adv.std_reward == 1


def test_three_point_fixture_population_std():
    adv = group_advantages([0, 1, 2], eps_std=0.0)
    np.testing.assert_allclose(adv.advantages, [-1.224745, 0, 1.224745], atol=5e-7)
    np.testing.assert_allclose(adv.advantages[2], np.sqrt(1.5), rtol=1e-15)


def test_group_too_small():
    with pytest.raises(InvalidInputError):
        group_advantages([1.0])
    with pytest.raises(InvalidInputError):
        RolloutGroup([1.0], ([-0.1],), ([-0.1],))


@given(reward_arrays, st.floats(-1e3, 1e3), st.floats(0.01, 100))
def test_shift_and_scale(r, c, k):
    base = group_advantages(r, eps_std=0.0).advantages
    shifted = group_advantages(r + c, eps_std=0.0).advantages
    scaled = group_advantages(r * k, eps_std=0.0).advantages
    if np.ptp(r) > 1e-6:
        np.testing.assert_allclose(shifted, base, atol=1e-9)
        np.testing.assert_allclose(scaled, base, atol=1e-9)
        with_eps = group_advantages(r * k).advantages
        assert np.array_equal(np.sign(with_eps), np.sign(base))
        assert np.array_equal(np.argsort(with_eps, kind="stable"), np.argsort(base, kind="stable"))
        assert abs(group_advantages(r).advantages.mean()) < 1e-9


def test_shift_exact_for_integers():
    r = np.array([3.0, -1.0, 4.0, 1.0, 5.0])
    np.testing.assert_allclose(group_advantages(r + 7).advantages, group_advantages(r).advantages,
                               atol=1e-12)


@pytest.mark.parametrize("ratio, adv, expected", [
    (1.0, 0.37, 0.37),
    (1.0, -2.0, -2.0),
    (2.0, 1.0, 1.2),
    (0.5, -1.0, -0.8),
    (0.5, 1.0, 0.5),
    (2.0, -1.0, -2.0),
])
def test_clipped_term_fixtures(ratio, adv, expected):
    assert clipped_term(ratio, adv, 0.2) == pytest.approx(expected, abs=1e-15)


@given(st.floats(1e-3, 10), st.floats(-10, 10), st.floats(0.01, 0.99))
def test_clipped_term_pessimistic(ratio, adv, eps):
    assert clipped_term(ratio, adv, eps) <= ratio * adv + 1e-12


def test_objective_on_policy_is_zero():
    rng = np.random.default_rng(0)
    for _ in range(20):
        _, group, _ = random_policy_group(rng)
        same = group.with_new_logprobs(group.old_logprobs)
        adv = group_advantages(same.rewards)
        assert grpo_objective(same, adv) == pytest.approx(0.0, abs=1e-12)


def test_objective_two_sequence_fixture():
    group = RolloutGroup([0.0, 1.0], ([-1.0], [-1.0]), ([-1.0], [-1.0 + np.log(2.0)]))
    adv = AdvantageSet(np.array([-1.0, 1.0]), 0.5, 0.5)
    assert grpo_objective(group, adv, 0.2) == pytest.approx(0.1, abs=1e-15)


def test_objective_inside_clip_band_is_importance_weighted_mean():
    rng = np.random.default_rng(1)
    old = tuple(np.log(rng.uniform(0.1, 0.9, size=n)) for n in (3, 5, 2))
    new = tuple(o + np.log(rng.uniform(0.81, 1.19, size=o.size)) for o in old)
    group = RolloutGroup(rng.normal(size=3), old, new)
    adv = group_advantages(group.rewards)
    expected = np.mean([np.mean(np.exp(n - o) * a) for n, o, a in zip(new, old, adv.advantages)])
    assert grpo_objective(group, adv) == pytest.approx(expected, rel=1e-14)


def test_objective_shape_mismatch():
    with pytest.raises(InvalidInputError):
        RolloutGroup([0.0, 1.0], ([-1.0], [-1.0, -2.0]), ([-1.0], [-1.0]))
    group = RolloutGroup([0.0, 1.0], ([-1.0], [-1.0]), ([-1.0], [-1.0]))
    with pytest.raises(InvalidInputError):
        grpo_objective(group, AdvantageSet(np.zeros(3), 0, 0))


def test_rejects_positive_logprob():
    with pytest.raises(InvalidInputError):
        RolloutGroup([0.0, 1.0], ([0.5], [-1.0]), ([0.5], [-1.0]))


def test_sequence_logprobs_matches_naive():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(5, 5))
    c, t = rng.integers(0, 5, 9), rng.integers(0, 5, 9)
    np.testing.assert_allclose(sequence_logprobs(logits, c, t, 0.6),
                               naive_logprobs(logits, c, t, 0.6), rtol=1e-13)


def test_gradient_zero_advantages():
    rng = np.random.default_rng(3)
    policy, group, temp = random_policy_group(rng)
    adv = AdvantageSet(np.zeros(group.group_size), 0.0, 0.0)
    assert not np.any(softmax_policy_gradient(group, adv, policy, temp))


def test_gradient_single_token_fixture():
    policy = ToyPolicy(2, "bigram", np.zeros((2, 2)))
    lp = (np.array([np.log(0.5)]), np.array([np.log(0.5)]))
    group = RolloutGroup([1.0, 0.0], lp, lp, (np.array([0]), np.array([0])),
                         (np.array([0]), np.array([0])))
    # only the first response carries signal; G=2 halves it
    adv = AdvantageSet(np.array([1.0, 0.0]), 0.0, 1.0)
    grad = softmax_policy_gradient(group, adv, policy, temperature=1.0)
    np.testing.assert_allclose(grad[0] * 2, [0.5, -0.5], atol=1e-15)
    assert not np.any(grad[1])


def test_gradient_context_out_of_range():
    policy = ToyPolicy(3, "bigram", np.zeros((3, 3)))
    lp = (np.array([-1.0]), np.array([-1.0]))
    group = RolloutGroup([1.0, 0.0], lp, lp, (np.array([5]), np.array([0])),
                         (np.array([0]), np.array([0])))
    with pytest.raises(InvalidInputError):
        softmax_policy_gradient(group, group_advantages(group.rewards), policy)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    policy, group, temp = random_policy_group(rng)
    adv = group_advantages(group.rewards)
    analytic = softmax_policy_gradient(group, adv, policy, temp)
    numeric = central_difference(objective_of_logits(group, adv, temp), policy.logits.copy())
    assert gradients_close(analytic, numeric)


def test_gradient_off_policy_respects_clipping():
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 20:
        policy, group, temp = random_policy_group(rng, off_policy=0.3)
        ratios = np.concatenate([np.exp(n - o) for n, o in zip(group.new_logprobs, group.old_logprobs)])
        # the min/clip kinks make finite differences meaningless right at the band edges
        if np.min(np.abs(np.abs(ratios - 1) - 0.2)) < 1e-3:
            continue
        adv = group_advantages(group.rewards)
        analytic = softmax_policy_gradient(group, adv, policy, temp)
        numeric = central_difference(objective_of_logits(group, adv, temp), policy.logits.copy())
        assert gradients_close(analytic, numeric)
        checked += 1
