import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manifold_rl.dist_core import ProbVector, StepStats
from manifold_rl.errors import InvalidInputError
from manifold_rl.rewards import RewardKind, StepDistSequence, reward


def one_hot(v, i=0):
    p = np.zeros(v)
    p[i] = 1.0
    return ProbVector(p)


def uniform(v):
    return ProbVector(np.full(v, 1.0 / v))


def random_seq(seed, max_t=20, max_v=50):
    rng = np.random.default_rng(seed)
    T, V = rng.integers(1, max_t + 1), rng.integers(2, max_v + 1)
    return StepDistSequence.from_probs(rng.dirichlet(np.full(V, 0.5), size=T))


@pytest.mark.parametrize("kind, dists, t_max, expected", [
    ("ent", [one_hot(5)] * 5, 5, 0.0),
    ("ent", [uniform(2)] * 3, 3, -3 * math.log(2)),
    ("avgent", [uniform(2)] * 3, 3, -math.log(2)),
    ("ch2", [uniform(4)] * 2, 2, 2 * math.log(0.25)),
    ("cp", [one_hot(3)] * 7, 7, 7.0),
])
def test_reward_fixtures(kind, dists, t_max, expected):
    assert reward(kind, StepDistSequence.from_probs(dists), t_max) == pytest.approx(expected, abs=1e-12)


def test_lp_fixture():
    seq = StepDistSequence(np.zeros(512), np.ones(512))
    assert reward(RewardKind.LP, seq, 1024) == -0.5


def test_fixture_decimals():
    three = StepDistSequence.from_probs([uniform(2)] * 3)
    assert reward("ent", three, 3) == pytest.approx(-2.079442, abs=5e-7)
    assert reward("avgent", three, 3) == pytest.approx(-0.693147, abs=5e-7)
    two = StepDistSequence.from_probs([uniform(4)] * 2)
    assert reward("ch2", two, 2) == pytest.approx(-2.772589, abs=5e-7)


def test_t_max_shorter_than_response():
    seq = StepDistSequence.from_probs([uniform(2)] * 3)
    with pytest.raises(InvalidInputError):
        reward("lp", seq, 2)
    with pytest.raises(InvalidInputError):
        reward("ent", seq, 2)


def test_empty_sequence_rejected():
    with pytest.raises(InvalidInputError):
        StepDistSequence(np.array([]), np.array([]))
    with pytest.raises(InvalidInputError):
        StepDistSequence.from_steps([])


def test_parse_kind():
    assert [RewardKind.parse(s) for s in ("ent", "avgent", "lp", "ch2", "cp")] == list(RewardKind)
    with pytest.raises(InvalidInputError, match="ent, avgent, lp, ch2, cp"):
        RewardKind.parse("Ent")


def test_from_steps_matches_from_probs():
    rng = np.random.default_rng(0)
    rows = rng.dirichlet(np.ones(6), size=4)
    a = StepDistSequence.from_probs(rows)
    b = StepDistSequence.from_steps(a.steps)
    for k in RewardKind:
        assert reward(k, a, 10) == reward(k, b, 10)
    assert isinstance(a.steps[0], StepStats)


@settings(max_examples=300)
@given(st.integers(0, 2**32 - 1))
def test_ent_avgent_identity_and_signs(seed):
    s = random_seq(seed)
    T = s.length
    ent, avg = reward("ent", s, T), reward("avgent", s, T)
    assert ent == pytest.approx(T * avg, rel=1e-9, abs=1e-300)
    assert ent <= 0 and avg <= 0
    assert -1 <= reward("lp", s, T) < 0
    assert reward("ch2", s, T) <= 0
    assert reward("cp", s, T) > 0


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_length_monotonicity(seed):
    rng = np.random.default_rng(seed)
    s = random_seq(seed)
    V = 7
    extra = rng.dirichlet(np.full(V, 0.5))
    longer = StepDistSequence(np.append(s.shannon, StepDistSequence.from_probs([extra]).shannon),
                              np.append(s.collision, np.sum(extra ** 2)))
    t_max = longer.length
    assert reward("ent", longer, t_max) <= reward("ent", s, t_max)
    assert reward("cp", longer, t_max) > reward("cp", s, t_max)


@pytest.mark.parametrize("q", [0.9, 0.95, 0.99])
def test_ch2_dominated_by_top1(q):
    k = 10_000
    rng = np.random.default_rng(int(q * 100))
    concentrated = np.zeros(k + 1)
    concentrated[0], concentrated[1] = q, 1 - q
    spread = np.zeros(k + 1)
    spread[0] = q
    spread[1:] = rng.dirichlet(np.ones(k)) * (1 - q)
    a = StepDistSequence.from_probs([concentrated])
    b = StepDistSequence.from_probs([spread])
    for s in (a, b):
        assert q * q <= s.collision[0] <= q * q + (1 - q) ** 2 + 1e-15
    ch2_gap = abs(reward("ch2", a, 1) - reward("ch2", b, 1))
    ent_gap = abs(reward("ent", a, 1) - reward("ent", b, 1))
    assert abs(a.collision[0] - b.collision[0]) <= (1 - q) ** 2
    # the long-tail spread costs Shannon entropy far more than collision mass
    assert ent_gap > (1 - q) ** 2
    assert ent_gap > 10 * ch2_gap
