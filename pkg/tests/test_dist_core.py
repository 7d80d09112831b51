import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from manifold_rl.dist_core import (ProbVector, StepStats, collision_mass, from_logits,
                                   shannon_entropy, step_stats)
from manifold_rl.errors import InvalidInputError

from oracles import naive_collision, naive_entropy


def random_dist(rng, v):
    return ProbVector(rng.dirichlet(np.full(v, 0.3)))


@pytest.mark.parametrize("logits, expected", [
    ([0, 0], [0.5, 0.5]),
    ([3.7] * 4, [0.25] * 4),
    ([-12.0] * 4, [0.25] * 4),
    ([math.log(3), 0], [0.75, 0.25]),
])
def test_from_logits_fixtures(logits, expected):
    np.testing.assert_allclose(from_logits(logits, 1.0).probs, expected, rtol=0, atol=1e-15)


def test_from_logits_temperature_sharpens():
    p_hot = from_logits([1.0, 0.0], 1.0).probs
    p_cold = from_logits([1.0, 0.0], 0.5).probs
    assert p_cold[0] > p_hot[0]
    np.testing.assert_allclose(p_cold, from_logits([2.0, 0.0], 1.0).probs, atol=1e-15)


@pytest.mark.parametrize("logits, temp", [
    ([0.0, float("nan")], 1.0),
    ([0.0, float("inf")], 1.0),
    ([], 1.0),
    ([0.0, 1.0], 0.0),
    ([0.0, 1.0], -1.0),
])
def test_from_logits_rejects(logits, temp):
    with pytest.raises(InvalidInputError):
        from_logits(logits, temp)


@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-30, 30)),
       st.floats(-50, 50), st.floats(0.1, 5.0))
def test_from_logits_shift_invariant(z, c, temp):
    np.testing.assert_allclose(from_logits(z, temp).probs, from_logits(z + c, temp).probs,
                               rtol=0, atol=1e-12)


@pytest.mark.parametrize("probs", [[0.5, 0.6], [1.2, -0.2], [float("nan"), 1.0], [0.3, 0.3]])
def test_prob_vector_validation(probs):
    with pytest.raises(InvalidInputError):
        ProbVector(probs)


def test_prob_vector_sum_tolerance():
    ProbVector([0.5, 0.5 + 5e-10])
    with pytest.raises(InvalidInputError):
        ProbVector([0.5, 0.5 + 5e-9])


def test_shannon_fixtures():
    assert shannon_entropy(ProbVector([1, 0, 0])) == 0.0
    assert shannon_entropy(ProbVector([0.25] * 4)) == pytest.approx(math.log(4), abs=1e-15)
    h = shannon_entropy(ProbVector([0.75, 0.25]))
    assert h == pytest.approx(0.562335, abs=5e-7)
    # second, independent summation order
    assert h == pytest.approx(-(0.25 * math.log(0.25) + 0.75 * math.log(0.75)), abs=1e-15)


def test_shannon_ignores_subnormal_tail():
    p = np.array([1.0 - 1e-305, 1e-305, 0.0])
    assert shannon_entropy(ProbVector(p)) == pytest.approx(0.0, abs=1e-300)


def test_collision_fixtures():
    assert collision_mass(ProbVector([0, 1, 0])) == 1.0
    assert collision_mass(ProbVector([0.125] * 8)) == pytest.approx(0.125, abs=1e-16)
    assert collision_mass(ProbVector([0.5, 0.3, 0.2])) == pytest.approx(0.38, abs=1e-15)


@settings(max_examples=200)
@given(st.integers(2, 300), st.integers(0, 2**32 - 1))
def test_bounds_and_renyi_ordering(v, seed):
    p = random_dist(np.random.default_rng(seed), v)
    h, c = shannon_entropy(p), collision_mass(p)
    assert 0.0 <= h <= math.log(v) + 1e-12
    assert 1.0 / v - 1e-15 <= c <= 1.0
    assert -math.log(c) <= h + 1e-12
    assert h == pytest.approx(naive_entropy(p.probs), rel=1e-12, abs=1e-14)
    assert c == pytest.approx(naive_collision(p.probs), rel=1e-12)


@pytest.mark.parametrize("v", [2, 7, 1000])
def test_bounds_attained(v):
    one_hot = np.zeros(v)
    one_hot[v // 2] = 1.0
    s = step_stats(ProbVector(one_hot))
    assert s.shannon == 0.0 and s.collision == 1.0
    u = step_stats(ProbVector(np.full(v, 1.0 / v)))
    assert u.shannon == pytest.approx(math.log(v), rel=1e-12)
    assert u.collision == pytest.approx(1.0 / v, rel=1e-12)


def test_large_vocabulary_is_valid():
    rng = np.random.default_rng(3)
    p = from_logits(rng.normal(size=100_000), 0.6)
    assert 0 < shannon_entropy(p) < math.log(100_000)


def test_step_stats_invariants():
    with pytest.raises(InvalidInputError):
        StepStats(-0.1, 0.5)
    with pytest.raises(InvalidInputError):
        StepStats(0.1, 0.0)
