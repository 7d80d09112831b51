"""Pipeline configuration.

A single YAML (or JSON) document with optional sections ``train``,
``ingest``, ``cluster``, ``hull`` and top-level ``seed``, ``method_name``,
``out_dir``. Unknown keys are rejected. Command-line flags override file
values; the resolved config is embedded in every JSON artifact.
"""
from __future__ import annotations

from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from manifold_rl.rewards import RewardKind


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=True)


class TrainSection(_Section):
    reward: RewardKind = RewardKind.ENT
    supervised: bool = False
    steps: int = Field(200, ge=0)
    group_size: int = Field(16, ge=2)
    eps_clip: float = Field(0.2, gt=0, lt=1)
    eps_std: float = Field(1e-6, ge=0)
    learning_rate: float = Field(1e-2, ge=0)
    optimizer: Literal["adam", "sgd"] = "adam"
    temperature: float = Field(0.6, gt=0)
    eval_every: int = Field(5, ge=1)
    eval_samples: int = Field(4, ge=1)
    vocab_size: int = Field(32, ge=3)
    t_max: int = Field(64, ge=2)
    n_prompts: int = Field(8, ge=1)
    context_mode: Literal["bigram", "positional"] = "bigram"
    init_scale: float = Field(0.0, ge=0)


class IngestSection(_Section):
    records: Optional[str] = None
    accuracy: Optional[str] = None
    mode: Literal["peak", "plateau", "collapse"] = "peak"
    convergence_step: Optional[int] = Field(None, gt=0)
    plateau_window: int = Field(3, ge=1)
    plateau_delta: float = Field(0.02, ge=0)


class ClusterSection(_Section):
    k: int = Field(3, ge=1)
    gamma: float = Field(0.1, ge=0)
    resample_len: int = Field(32, ge=2)
    max_iter: int = Field(50, ge=1)
    core_fraction: float = Field(0.5, gt=0, le=1)
    top_tokens: int = Field(10, ge=1)


class HullSection(_Section):
    v_low: float = Field(0.05, ge=0)
    v_high: float = Field(4.0, gt=0)
    per_prompt: bool = False

    @model_validator(mode="after")
    def _ordered(self):
        if not self.v_low < self.v_high:
            raise ValueError("v_low must be smaller than v_high")
        return self


class PipelineConfig(_Section):
    seed: int = 7
    method_name: Optional[str] = None
    out_dir: str = "out"
    train: TrainSection = TrainSection()
    ingest: IngestSection = IngestSection()
    cluster: ClusterSection = ClusterSection()
    hull: HullSection = HullSection()

    def resolved(self) -> dict[str, Any]:
        return self.model_dump(mode="json")


def load_config(path: str | None = None, overrides: dict[str, Any] | None = None) -> PipelineConfig:
    """Read ``path`` (if any), apply dotted-key ``overrides`` whose value is not None, validate."""
    data: dict[str, Any] = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a mapping")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValueError(f"config key {p!r} must be a mapping")
        node[leaf] = value
    return PipelineConfig.model_validate(data)
