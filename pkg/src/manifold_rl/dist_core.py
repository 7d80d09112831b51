"""Categorical distributions and the two per-step uncertainty statistics.

Entropies are in nats. Probabilities at or below ``PROB_FLOOR`` contribute
nothing to the Shannon sum (0 log 0 := 0); they are never clamped upwards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from manifold_rl.errors import InvalidInputError

SUM_TOL = 1e-9
PROB_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class ProbVector:
    """A validated probability vector over a dense vocabulary."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise InvalidInputError("probability vector must be 1-D and non-empty")
        if not np.all(np.isfinite(p)):
            raise InvalidInputError("probability vector has non-finite entries")
        if np.any(p < 0):
            raise InvalidInputError("probability vector has negative entries")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise InvalidInputError(f"probabilities sum to {p.sum()!r}, expected 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return self.probs.size

    def __eq__(self, other) -> bool:
        return isinstance(other, ProbVector) and np.array_equal(self.probs, other.probs)

    __hash__ = None


@dataclass(frozen=True)
class StepStats:
    """Sufficient statistics of one generation step for every reward."""

    shannon: float
    collision: float

    def __post_init__(self):
        if not (math.isfinite(self.shannon) and math.isfinite(self.collision)):
            raise InvalidInputError("step statistics must be finite")
        if self.shannon < 0:
            raise InvalidInputError(f"negative entropy {self.shannon}")
        if not 0 < self.collision <= 1 + SUM_TOL:
            raise InvalidInputError(f"collision mass {self.collision} outside (0, 1]")


def softmax_rows(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise tempered softmax; works on 1-D or 2-D arrays."""
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def from_logits(logits: Sequence[float], temperature: float = 0.6) -> ProbVector:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise InvalidInputError("logits must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits must be finite")
    if not (math.isfinite(temperature) and temperature > 0):
        raise InvalidInputError(f"temperature must be positive, got {temperature}")
    return ProbVector(softmax_rows(z, temperature))


def _as_array(p) -> np.ndarray:
    return p.probs if isinstance(p, ProbVector) else np.asarray(p, dtype=np.float64)


def shannon_entropy(p: ProbVector | np.ndarray) -> float | np.ndarray:
    """-sum p ln p. Accepts a ProbVector or a (..., V) array of rows."""
    a = _as_array(p)
    mask = a > PROB_FLOOR
    safe = np.where(mask, a, 1.0)
    h = -np.sum(np.where(mask, a * np.log(safe), 0.0), axis=-1)
    # -0.0 and tiny negative round-off from one-hot rows
    h = np.maximum(h, 0.0)
    return float(h) if np.ndim(h) == 0 else h


def collision_mass(p: ProbVector | np.ndarray) -> float | np.ndarray:
    a = _as_array(p)
    c = np.sum(a * a, axis=-1)
    return float(c) if np.ndim(c) == 0 else c


def step_stats(p: ProbVector) -> StepStats:
    return StepStats(shannon=shannon_entropy(p), collision=collision_mass(p))
