"""Sequence-level intrinsic rewards.

All five rewards are computed from per-step (entropy, collision) pairs, so a
toy rollout and an externally logged trace go through the same code.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from manifold_rl.dist_core import ProbVector, StepStats, collision_mass, shannon_entropy
from manifold_rl.errors import InvalidInputError


class RewardKind(str, enum.Enum):
    ENT = "ent"
    AVGENT = "avgent"
    LP = "lp"
    CH2 = "ch2"
    CP = "cp"

    @classmethod
    def parse(cls, text: str) -> "RewardKind":
        try:
            return cls(text)
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise InvalidInputError(f"unknown reward {text!r}; expected one of: {valid}") from None


@dataclass(frozen=True, eq=False)
class StepDistSequence:
    """Per-step entropy and collision mass of one generated response."""

    shannon: np.ndarray
    collision: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.shannon, dtype=np.float64).reshape(-1)
        c = np.asarray(self.collision, dtype=np.float64).reshape(-1)
        if h.size == 0:
            raise InvalidInputError("a response needs at least one step")
        if h.shape != c.shape:
            raise InvalidInputError("entropy and collision series differ in length")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(c))):
            raise InvalidInputError("step statistics must be finite")
        if np.any(h < 0) or np.any(c <= 0) or np.any(c > 1 + 1e-9):
            raise InvalidInputError("step statistics out of range")
        h.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "shannon", h)
        object.__setattr__(self, "collision", c)

    @classmethod
    def from_steps(cls, steps: Iterable[StepStats]) -> "StepDistSequence":
        steps = list(steps)
        return cls(np.array([s.shannon for s in steps]), np.array([s.collision for s in steps]))

    @classmethod
    def from_probs(cls, dists: Sequence[ProbVector] | np.ndarray) -> "StepDistSequence":
        rows = np.stack([d.probs if isinstance(d, ProbVector) else np.asarray(d) for d in dists])
        return cls(shannon_entropy(rows), collision_mass(rows))

    @property
    def length(self) -> int:
        return self.shannon.size

    @property
    def steps(self) -> tuple[StepStats, ...]:
        return tuple(StepStats(float(h), float(c)) for h, c in zip(self.shannon, self.collision))

    def __len__(self) -> int:
        return self.length


def reward(kind: RewardKind | str, seq: StepDistSequence, t_max: int) -> float:
    if not isinstance(kind, RewardKind):
        kind = RewardKind.parse(kind)
    n = seq.length
    if t_max < n:
        raise InvalidInputError(f"t_max={t_max} is shorter than the response ({n} steps)")
    if kind is RewardKind.ENT:
        return -float(np.sum(seq.shannon))
    if kind is RewardKind.AVGENT:
        return -float(np.sum(seq.shannon)) / n
    if kind is RewardKind.LP:
        return -n / t_max
    if kind is RewardKind.CH2:
        return float(np.sum(np.log(seq.collision)))
    return float(np.sum(seq.collision))
