"""Seed fan-out.

Every stage derives its own generator from the top-level seed and the stage
name: ``SeedSequence([seed, crc32(stage)])``. crc32 is used instead of
``hash()`` because the latter is salted per process.
"""
from __future__ import annotations

import zlib

import numpy as np


def stage_seed(seed: int, stage: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), zlib.crc32(stage.encode("utf-8"))])


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    return np.random.default_rng(stage_seed(seed, stage))
