"""Token-level entropy trajectories from checkpoint logs.

Records are keyed by (prompt_id, token string). Several records for the
same anchor at the same step are averaged. Trajectories are truncated at
the effective convergence point, anchors with fewer than two surviving
points are dropped, and time is normalised as ``step / convergence_step``.
"""
from __future__ import annotations

import enum
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from manifold_rl.errors import InvalidInputError, NotFoundError

Anchor = tuple[str, str]

DEFAULT_PLATEAU_WINDOW = 3
DEFAULT_PLATEAU_DELTA = 0.02


@dataclass(frozen=True)
class TraceRecord:
    step: int
    prompt_id: str
    token: str
    entropy: float

    def __post_init__(self):
        if isinstance(self.step, bool) or not isinstance(self.step, int) or self.step < 0:
            raise InvalidInputError(f"step must be a non-negative integer, got {self.step!r}")
        if not isinstance(self.prompt_id, str):
            raise InvalidInputError("prompt_id must be a string")
        if not isinstance(self.token, str) or not self.token:
            raise InvalidInputError("token must be a non-empty string")
        if isinstance(self.entropy, bool) or not isinstance(self.entropy, (int, float)):
            raise InvalidInputError("entropy must be a number")
        if not math.isfinite(self.entropy) or self.entropy < 0:
            raise InvalidInputError(f"entropy must be finite and >= 0, got {self.entropy!r}")

    @property
    def anchor(self) -> Anchor:
        return (self.prompt_id, self.token)

    def to_json(self) -> str:
        return json.dumps({"step": self.step, "prompt_id": self.prompt_id,
                           "token": self.token, "entropy": self.entropy},
                          ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "TraceRecord":
        if not isinstance(d, dict):
            raise InvalidInputError("record is not a JSON object")
        missing = [k for k in ("step", "prompt_id", "token", "entropy") if k not in d]
        if missing:
            raise InvalidInputError(f"missing field(s): {', '.join(missing)}")
        # extra keys are allowed and ignored
        return cls(d["step"], d["prompt_id"], d["token"], d["entropy"])


@dataclass(frozen=True)
class LineError:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


def parse_jsonl(lines: Iterable[str], errors: list[LineError] | None = None) -> Iterator[TraceRecord]:
    """Yield valid records; malformed lines are appended to ``errors`` and skipped."""
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield TraceRecord.from_dict(json.loads(line))
        except (json.JSONDecodeError, InvalidInputError) as exc:
            if errors is not None:
                errors.append(LineError(n, str(exc)))


@dataclass
class RawTrajectories:
    series: dict[Anchor, list[tuple[int, float]]]
    counts: dict[Anchor, dict[int, int]]
    errors: list[LineError] = field(default_factory=list)

    @property
    def error_count(self) -> int:
        return len(self.errors)

    def __len__(self) -> int:
        return len(self.series)


def build_trajectories(records: Iterable[TraceRecord],
                       errors: Sequence[LineError] = ()) -> RawTrajectories:
    sums: dict[Anchor, dict[int, list[float]]] = defaultdict(dict)
    for rec in records:
        per_step = sums[rec.anchor]
        acc = per_step.setdefault(rec.step, [0.0, 0])
        acc[0] += rec.entropy
        acc[1] += 1
    series, counts = {}, {}
    for anchor in sorted(sums):
        per_step = sums[anchor]
        steps = sorted(per_step)
        series[anchor] = [(s, per_step[s][0] / per_step[s][1]) for s in steps]
        counts[anchor] = {s: per_step[s][1] for s in steps}
    return RawTrajectories(series, counts, list(errors))


def read_jsonl(path) -> RawTrajectories:
    errors: list[LineError] = []
    with open(path, encoding="utf-8") as fh:
        return build_trajectories(list(parse_jsonl(fh, errors)), errors)


def read_records(path) -> tuple[list[TraceRecord], list[LineError]]:
    errors: list[LineError] = []
    with open(path, encoding="utf-8") as fh:
        return list(parse_jsonl(fh, errors)), errors


class ConvergenceMode(str, enum.Enum):
    PEAK_ACCURACY = "peak_accuracy"
    PLATEAU_ONSET = "plateau_onset"
    COLLAPSE = "collapse"

    @classmethod
    def parse(cls, text: str) -> "ConvergenceMode":
        aliases = {"peak": cls.PEAK_ACCURACY, "plateau": cls.PLATEAU_ONSET}
        if text in aliases:
            return aliases[text]
        try:
            return cls(text)
        except ValueError:
            raise InvalidInputError(f"unknown convergence mode {text!r}") from None


@dataclass(frozen=True)
class ConvergenceSpec:
    mode: ConvergenceMode = ConvergenceMode.PEAK_ACCURACY
    accuracy_curve: tuple[tuple[int, float], ...] = ()
    explicit_step: int | None = None
    plateau_window: int = DEFAULT_PLATEAU_WINDOW
    plateau_delta: float = DEFAULT_PLATEAU_DELTA


def effective_convergence_point(spec: ConvergenceSpec) -> int:
    if spec.explicit_step is not None:
        if spec.explicit_step <= 0:
            raise InvalidInputError("explicit convergence step must be positive")
        return int(spec.explicit_step)
    if not spec.accuracy_curve:
        raise InvalidInputError("an accuracy curve is required without an explicit step")
    curve = sorted((int(s), float(a)) for s, a in spec.accuracy_curve)
    mode = ConvergenceMode(spec.mode)

    if mode is ConvergenceMode.PEAK_ACCURACY:
        best_step, best = curve[0]
        for s, a in curve[1:]:
            if a > best:
                best_step, best = s, a
        return best_step

    if mode is ConvergenceMode.COLLAPSE:
        found = None
        for s, a in reversed(curve):
            if a != 0:
                break
            found = s
        if found is None:
            raise NotFoundError("accuracy never settles at 0; no collapse point")
        return found

    w, delta = spec.plateau_window, spec.plateau_delta
    if w < 1:
        raise InvalidInputError("plateau window must be >= 1")
    for i, (s, a) in enumerate(curve):
        ahead = [x for _, x in curve[i + 1:i + 1 + w]]
        if not ahead or max(ahead) - a <= delta:
            return s
    return curve[-1][0]  # unreachable: the last point always qualifies


@dataclass(frozen=True)
class EntropyTrajectory:
    anchor: Anchor
    t_hat: tuple[float, ...]
    entropy: tuple[float, ...]
    steps: tuple[int, ...] = ()
    occurrences: int = 0

    def __post_init__(self):
        if len(self.t_hat) != len(self.entropy):
            raise InvalidInputError("time and entropy series differ in length")
        if len(self.t_hat) < 2:
            raise InvalidInputError("a trajectory needs at least two points")
        if any(b <= a for a, b in zip(self.t_hat, self.t_hat[1:])):
            raise InvalidInputError("normalised times must be strictly increasing")
        if self.t_hat[0] < 0 or self.t_hat[-1] > 1:
            raise InvalidInputError("normalised times must lie in [0, 1]")

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.t_hat, self.entropy))

    def as_dict(self) -> dict:
        return {"prompt_id": self.anchor[0], "token": self.anchor[1],
                "steps": list(self.steps), "t_hat": list(self.t_hat),
                "entropy": list(self.entropy), "occurrences": self.occurrences}

    @classmethod
    def from_dict(cls, d: dict) -> "EntropyTrajectory":
        return cls((d["prompt_id"], d["token"]), tuple(d["t_hat"]), tuple(d["entropy"]),
                   tuple(d.get("steps", ())), int(d.get("occurrences", 0)))


def filter_and_normalize(raw: RawTrajectories | dict[Anchor, list[tuple[int, float]]],
                         convergence_step: int) -> list[EntropyTrajectory]:
    if convergence_step <= 0:
        raise InvalidInputError("convergence step must be positive")
    if isinstance(raw, RawTrajectories):
        series, counts = raw.series, raw.counts
    else:
        series, counts = raw, {}
    out = []
    for anchor in sorted(series):
        pts = [(s, h) for s, h in sorted(series[anchor]) if s <= convergence_step]
        if len(pts) < 2:
            continue
        per_step = counts.get(anchor, {})
        out.append(EntropyTrajectory(
            anchor=anchor,
            t_hat=tuple(s / convergence_step for s, _ in pts),
            entropy=tuple(h for _, h in pts),
            steps=tuple(s for s, _ in pts),
            occurrences=sum(per_step.get(s, 1) for s, _ in pts),
        ))
    return out


def renormalize(trajs: Iterable[EntropyTrajectory], convergence_step: int) -> list[EntropyTrajectory]:
    """Re-apply truncation to already-built trajectories (idempotent)."""
    raw = {t.anchor: list(zip(t.steps, t.entropy)) for t in trajs}
    return filter_and_normalize(raw, convergence_step)


def read_accuracy(path) -> list[tuple[int, float]]:
    curve = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                curve.append((int(d["step"]), float(d["accuracy"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise InvalidInputError(f"{path}: line {n}: {exc}") from None
    return curve
