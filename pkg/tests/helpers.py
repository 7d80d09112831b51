"""Random fixtures shared by the GRPO tests and the acceptance suite."""
from __future__ import annotations

import math

import numpy as np

from manifold_rl.grpo import RolloutGroup, grpo_objective
from manifold_rl.toy_lab import ToyPolicy
from manifold_rl.trace_ingest import EntropyTrajectory


def naive_logprobs(logits, contexts, tokens, temperature):
    out = []
    for c, t in zip(contexts, tokens):
        row = [x / temperature for x in logits[c]]
        m = max(row)
        lse = m + math.log(sum(math.exp(x - m) for x in row))
        out.append(row[t] - lse)
    return np.array(out)


def random_policy_group(rng, off_policy: float = 0.0):
    """A random bigram policy plus a group of G random responses scored against it.

    With ``off_policy > 0`` the old log-probs come from a perturbed copy of
    the logits, so ratios differ from 1.
    """
    V = int(rng.integers(3, 7))
    G = int(rng.integers(2, 6))
    temperature = float(rng.choice([1.0, 0.6]))
    policy = ToyPolicy(V, "bigram", rng.normal(size=(V, V)))
    old_logits = policy.logits + off_policy * rng.normal(size=policy.logits.shape)
    contexts, tokens, old, new = [], [], [], []
    for _ in range(G):
        T = int(rng.integers(1, 7))
        c = rng.integers(0, V, size=T)
        t = rng.integers(0, V, size=T)
        contexts.append(c)
        tokens.append(t)
        old.append(naive_logprobs(old_logits, c, t, temperature))
        new.append(naive_logprobs(policy.logits, c, t, temperature))
    group = RolloutGroup(rng.normal(size=G), tuple(old), tuple(new), tuple(contexts), tuple(tokens))
    return policy, group, temperature


def objective_of_logits(group, advantages, temperature, eps_clip=0.2):
    def f(logits):
        new = [naive_logprobs(logits, c, t, temperature) for c, t in zip(group.contexts, group.tokens)]
        return grpo_objective(group.with_new_logprobs(new), advantages, eps_clip)
    return f


def gradients_close(analytic, numeric, rel=1e-5, floor=1e-8) -> bool:
    return bool(np.all(np.abs(analytic - numeric) <= rel * np.abs(numeric) + floor))


def level_trajectories(seed, levels=(0.1, 0.8, 2.0), per_level=50, sigma=0.05):
    """Noisy constant-level trajectories of length 3..12 and their generating level index."""
    rng = np.random.default_rng(seed)
    trajs, truth = [], []
    for lab, level in enumerate(levels):
        for i in range(per_level):
            n = int(rng.integers(3, 13))
            steps = np.sort(rng.choice(np.arange(1, 13), size=n, replace=False))
            h = np.abs(level + sigma * rng.standard_normal(n))
            trajs.append(EntropyTrajectory((f"p{lab}", f"t{i}"), tuple(steps / 12), tuple(h),
                                           tuple(int(s) for s in steps), n))
            truth.append(lab)
    return trajs, np.array(truth)
