"""Group-relative advantages and the clipped surrogate, without critic or KL.

Ratios are per token and the objective is aggregated seq-mean-token-mean:
each response contributes the mean of its clipped token terms, and the
group objective is the mean over responses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from manifold_rl.dist_core import softmax_rows
from manifold_rl.errors import InvalidInputError

if TYPE_CHECKING:
    from manifold_rl.toy_lab import ToyPolicy

DEFAULT_EPS_STD = 1e-6
DEFAULT_EPS_CLIP = 0.2


def _as_logprob_rows(rows, name: str) -> tuple[np.ndarray, ...]:
    out = []
    for i, r in enumerate(rows):
        a = np.asarray(r, dtype=np.float64).reshape(-1)
        if a.size == 0:
            raise InvalidInputError(f"{name}[{i}] is empty")
        if not np.all(np.isfinite(a)) or np.any(a > 0):
            raise InvalidInputError(f"{name}[{i}] must hold finite log-probabilities <= 0")
        a.setflags(write=False)
        out.append(a)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class RolloutGroup:
    """G responses to one prompt.

    ``contexts`` and ``tokens`` are only needed for the tabular policy
    gradient; the objective itself uses rewards and log-probabilities.
    """

    rewards: np.ndarray
    old_logprobs: tuple[np.ndarray, ...]
    new_logprobs: tuple[np.ndarray, ...]
    contexts: tuple[np.ndarray, ...] | None = None
    tokens: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        r = np.asarray(self.rewards, dtype=np.float64).reshape(-1)
        if r.size < 2:
            raise InvalidInputError(f"a group needs G >= 2 responses, got {r.size}")
        if not np.all(np.isfinite(r)):
            raise InvalidInputError("rewards must be finite")
        old = _as_logprob_rows(self.old_logprobs, "old_logprobs")
        new = _as_logprob_rows(self.new_logprobs, "new_logprobs")
        if len(old) != r.size or len(new) != r.size:
            raise InvalidInputError("need one log-probability sequence per reward")
        for i, (a, b) in enumerate(zip(old, new)):
            if a.shape != b.shape:
                raise InvalidInputError(f"sequence {i}: old/new log-prob lengths differ")
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "old_logprobs", old)
        object.__setattr__(self, "new_logprobs", new)
        for name in ("contexts", "tokens"):
            rows = getattr(self, name)
            if rows is None:
                continue
            rows = tuple(np.asarray(x, dtype=np.int64).reshape(-1) for x in rows)
            if len(rows) != r.size or any(x.shape != a.shape for x, a in zip(rows, old)):
                raise InvalidInputError(f"{name} shape does not match the log-probabilities")
            object.__setattr__(self, name, rows)

    @property
    def group_size(self) -> int:
        return self.rewards.size

    def with_new_logprobs(self, new_logprobs: Sequence[np.ndarray]) -> "RolloutGroup":
        return RolloutGroup(self.rewards, self.old_logprobs, tuple(new_logprobs),
                            self.contexts, self.tokens)


@dataclass(frozen=True, eq=False)
class AdvantageSet:
    advantages: np.ndarray
    mean_reward: float
    std_reward: float


def group_advantages(rewards: Sequence[float], eps_std: float = DEFAULT_EPS_STD) -> AdvantageSet:
    """Standardise rewards within the group (population std)."""
    r = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if r.size < 2:
        raise InvalidInputError(f"a group needs G >= 2 rewards, got {r.size}")
    if eps_std < 0 or not math.isfinite(eps_std):
        raise InvalidInputError("eps_std must be a finite non-negative number")
    mu = float(r.mean())
    centered = r - mu
    sigma = float(np.sqrt(np.mean(centered * centered)))
    if sigma == 0.0:
        adv = np.zeros_like(r)
    else:
        adv = centered / (sigma + eps_std)
    return AdvantageSet(advantages=adv, mean_reward=mu, std_reward=sigma)


def clipped_term(ratio, advantage, eps_clip: float = DEFAULT_EPS_CLIP):
    """min(ratio*A, clip(ratio, 1-eps, 1+eps)*A); broadcasts over arrays."""
    ratio = np.asarray(ratio, dtype=np.float64)
    out = np.minimum(ratio * advantage, np.clip(ratio, 1 - eps_clip, 1 + eps_clip) * advantage)
    return float(out) if out.ndim == 0 else out


def _check_advantages(group: RolloutGroup, advantages: AdvantageSet) -> np.ndarray:
    a = np.asarray(advantages.advantages, dtype=np.float64)
    if a.shape != group.rewards.shape:
        raise InvalidInputError("advantage count does not match the group size")
    return a


def grpo_objective(group: RolloutGroup, advantages: AdvantageSet,
                   eps_clip: float = DEFAULT_EPS_CLIP) -> float:
    adv = _check_advantages(group, advantages)
    per_seq = [
        float(np.mean(clipped_term(np.exp(new - old), a_i, eps_clip)))
        for new, old, a_i in zip(group.new_logprobs, group.old_logprobs, adv)
    ]
    return float(np.mean(per_seq))


def sequence_logprobs(logits: np.ndarray, contexts: np.ndarray, tokens: np.ndarray,
                      temperature: float = 1.0) -> np.ndarray:
    """log pi(token | context) for each step under a tabular softmax policy."""
    z = np.asarray(logits, dtype=np.float64)[contexts] / temperature
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    return z[np.arange(len(tokens)), tokens] - lse


def softmax_policy_gradient(group: RolloutGroup, advantages: AdvantageSet, policy: "ToyPolicy",
                            temperature: float = 1.0,
                            eps_clip: float = DEFAULT_EPS_CLIP) -> np.ndarray:
    """Analytic d(objective)/d(logits) for a tabular softmax policy.

    The policy is pi(.|c) = softmax(logits[c] / temperature). A token term
    contributes rho*A only while the unclipped branch of the min is the
    active one; otherwise it is flat in the logits.
    """
    if group.contexts is None or group.tokens is None:
        raise InvalidInputError("the group carries no contexts/tokens for a tabular gradient")
    adv = _check_advantages(group, advantages)
    logits = np.asarray(policy.logits, dtype=np.float64)
    n_ctx, vocab = logits.shape
    grad = np.zeros_like(logits)
    g = group.group_size
    for ctx, tok, old, new, a_i in zip(group.contexts, group.tokens, group.old_logprobs,
                                       group.new_logprobs, adv):
        if a_i == 0.0:
            continue
        if ctx.min() < 0 or ctx.max() >= n_ctx:
            raise InvalidInputError(f"context index out of range [0, {n_ctx})")
        if tok.min() < 0 or tok.max() >= vocab:
            raise InvalidInputError(f"token index out of range [0, {vocab})")
        rho = np.exp(new - old)
        clipped = np.clip(rho, 1 - eps_clip, 1 + eps_clip)
        active = (rho == clipped) | (rho * a_i < clipped * a_i)
        coef = np.where(active, rho * a_i, 0.0) / (g * tok.size * temperature)
        probs = softmax_rows(logits[ctx], temperature)
        np.add.at(grad, (ctx, tok), coef)
        np.add.at(grad, ctx, -coef[:, None] * probs)
    return grad
