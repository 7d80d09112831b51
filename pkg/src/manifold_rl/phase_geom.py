"""3D phase space of semantic-cluster entropies and its convex-hull volume.

Axis order everywhere is (Execution, Logic, Thinking), i.e. ascending
entropy level.
"""
from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from manifold_rl.errors import InvalidInputError, MissingClusterError
from manifold_rl.trace_ingest import Anchor, TraceRecord
from manifold_rl.ts_cluster import SemanticLabel, SemanticLabeling

AXES = (SemanticLabel.EXECUTION, SemanticLabel.LOGIC, SemanticLabel.THINKING)
DEFAULT_THRESHOLDS = (0.05, 4.0)


class Diagnosis(str, enum.Enum):
    STRONG_CONSTRAINTS = "StrongConstraints"
    EXPLORATION_STAGNATION = "ExplorationStagnation"
    MANIFOLD_EXPLOSION = "ManifoldExplosion"


@dataclass(frozen=True)
class PhasePoint:
    step: int
    coords: tuple[float, float, float]
    imputed: bool = False
    prompt_id: str | None = None

    def __post_init__(self):
        if len(self.coords) != 3:
            raise InvalidInputError("a phase point has three coordinates")
        if any(not math.isfinite(c) or c < 0 for c in self.coords):
            raise InvalidInputError(f"phase coordinates must be finite and >= 0: {self.coords}")

    def as_dict(self) -> dict:
        d = {"step": self.step, "exec": self.coords[0], "logic": self.coords[1],
             "think": self.coords[2], "imputed": self.imputed}
        if self.prompt_id is not None:
            d["prompt_id"] = self.prompt_id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhasePoint":
        return cls(int(d["step"]), (float(d["exec"]), float(d["logic"]), float(d["think"])),
                   bool(d.get("imputed", False)), d.get("prompt_id"))


@dataclass(frozen=True)
class PhaseTrajectory:
    method_name: str
    points: tuple[PhasePoint, ...]

    def __post_init__(self):
        steps = [p.step for p in self.points]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise InvalidInputError("phase points must have strictly increasing steps")


def project(records: Iterable[TraceRecord], labeling: SemanticLabeling,
            assignments: Mapping[Anchor, int], step: int | None = None) -> PhasePoint:
    """Mean entropy of each semantic cluster's records at one checkpoint."""
    sums = [0.0, 0.0, 0.0]
    counts = [0, 0, 0]
    axis_of = {c: AXES.index(lab) for c, lab in labeling.labels.items()}
    seen_step = step
    for rec in records:
        if step is not None and rec.step != step:
            continue
        seen_step = rec.step if seen_step is None else seen_step
        c = assignments.get(rec.anchor)
        if c is None or c not in axis_of:
            continue
        ax = axis_of[c]
        sums[ax] += rec.entropy
        counts[ax] += 1
    missing = [AXES[i].value for i in range(3) if counts[i] == 0]
    if missing:
        raise MissingClusterError(seen_step if seen_step is not None else -1, missing)
    return PhasePoint(int(seen_step), tuple(s / n for s, n in zip(sums, counts)))


def phase_trajectory(records: Iterable[TraceRecord], labeling: SemanticLabeling,
                     assignments: Mapping[Anchor, int], convergence_step: int | None = None,
                     method_name: str = "run", prompt_id: str | None = None) -> PhaseTrajectory:
    """One point per checkpoint; missing clusters carry the previous point forward.

    Checkpoints before the first complete one are dropped.
    """
    by_step: dict[int, list[TraceRecord]] = defaultdict(list)
    for rec in records:
        if prompt_id is not None and rec.prompt_id != prompt_id:
            continue
        if convergence_step is not None and rec.step > convergence_step:
            continue
        by_step[rec.step].append(rec)
    points: list[PhasePoint] = []
    for s in sorted(by_step):
        try:
            pt = project(by_step[s], labeling, assignments, s)
            points.append(PhasePoint(pt.step, pt.coords, False, prompt_id))
        except MissingClusterError:
            if points:
                points.append(PhasePoint(s, points[-1].coords, True, prompt_id))
    return PhaseTrajectory(method_name, tuple(points))


# ---------------------------------------------------------------- quickhull

@dataclass
class Hull:
    points: np.ndarray
    faces: np.ndarray  # (m, 3) vertex indices, counter-clockwise seen from outside
    volume: float
    degenerate: bool

    @property
    def vertex_indices(self) -> list[int]:
        return sorted(set(int(i) for i in self.faces.ravel()))

    def plane_distances(self, pts: np.ndarray) -> np.ndarray:
        """Signed distance of each point (rows) to each facet plane (cols)."""
        if self.faces.size == 0:
            return np.zeros((len(pts), 0))
        a, b, c = (self.points[self.faces[:, i]] for i in range(3))
        n = np.cross(b - a, c - a)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        return np.asarray(pts) @ n.T - np.einsum("ij,ij->i", n, a)


def _plane(p, a, b, c):
    n = np.cross(p[b] - p[a], p[c] - p[a])
    norm = np.linalg.norm(n)
    n = n / norm if norm > 0 else n
    return n, float(n @ p[a])


def _is_degenerate(pts: np.ndarray) -> bool:
    if len(pts) < 4:
        return True
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return sv[0] == 0 or sv[2] <= 1e-9 * sv[0]


def convex_hull(points: Sequence[Sequence[float]]) -> Hull:
    """Quickhull in 3D. Degenerate (fewer than 4 or affinely dependent) inputs get volume 0."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise InvalidInputError("convex hull needs at least one point")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("hull coordinates must be finite")
    empty = np.zeros((0, 3), dtype=np.int64)
    if _is_degenerate(pts):
        return Hull(pts, empty, 0.0, True)

    scale = float(np.abs(pts).max()) or 1.0
    eps = 1e-12 * scale

    # initial simplex from axis extremes
    extremes = sorted({int(i) for i in np.concatenate([pts.argmin(axis=0), pts.argmax(axis=0)])})
    i0, i1 = max(((a, b) for a in extremes for b in extremes if a < b),
                 key=lambda ab: np.linalg.norm(pts[ab[0]] - pts[ab[1]]))
    d01 = pts[i1] - pts[i0]
    i2 = int(np.argmax(np.linalg.norm(np.cross(pts - pts[i0], d01), axis=1)))
    n, off = _plane(pts, i0, i1, i2)
    i3 = int(np.argmax(np.abs(pts @ n - off)))
    interior = pts[[i0, i1, i2, i3]].mean(axis=0)

    faces: list[tuple[int, int, int]] = []
    planes: list[tuple[np.ndarray, float]] = []
    outside: list[list[int]] = []

    def add_face(a, b, c):
        nn, oo = _plane(pts, a, b, c)
        if nn @ interior - oo > 0:
            a, b = b, a
            nn, oo = -nn, -oo
        faces.append((a, b, c))
        planes.append((nn, oo))
        outside.append([])
        return len(faces) - 1

    for tri in ((i0, i1, i2), (i0, i1, i3), (i0, i2, i3), (i1, i2, i3)):
        add_face(*tri)
    alive = [True] * 4

    def assign(candidates, face_ids):
        if not face_ids:
            return
        normals = np.array([planes[f][0] for f in face_ids])
        offsets = np.array([planes[f][1] for f in face_ids])
        cand = np.asarray(candidates, dtype=np.int64)
        if cand.size == 0:
            return
        d = pts[cand] @ normals.T - offsets
        best = d.argmax(axis=1)
        for idx, fi, dist in zip(cand, best, d[np.arange(cand.size), best]):
            if dist > eps:
                outside[face_ids[fi]].append(int(idx))

    others = [i for i in range(len(pts)) if i not in (i0, i1, i2, i3)]
    assign(others, [0, 1, 2, 3])

    while True:
        pending = [f for f in range(len(faces)) if alive[f] and outside[f]]
        if not pending:
            break
        f = pending[0]
        nn, oo = planes[f]
        cand = outside[f]
        eye = cand[int(np.argmax(pts[cand] @ nn - oo))]
        visible = [g for g in range(len(faces))
                   if alive[g] and planes[g][0] @ pts[eye] - planes[g][1] > eps]
        edges = set()
        for g in visible:
            a, b, c = faces[g]
            edges.update(((a, b), (b, c), (c, a)))
        horizon = [e for e in edges if (e[1], e[0]) not in edges]
        orphans = set()
        for g in visible:
            alive[g] = False
            orphans.update(outside[g])
            outside[g] = []
        orphans.discard(eye)
        new_ids = [add_face(a, b, eye) for a, b in sorted(horizon)]
        alive.extend([True] * len(new_ids))
        assign(sorted(orphans), new_ids)

    tri = np.array([faces[g] for g in range(len(faces)) if alive[g]], dtype=np.int64)
    a, b, c = (pts[tri[:, i]] - interior for i in range(3))
    volume = float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)
    return Hull(pts, tri, volume, False)


def diagnose(volume: float, thresholds: tuple[float, float] = DEFAULT_THRESHOLDS) -> Diagnosis:
    v_low, v_high = thresholds
    if not v_low < v_high:
        raise InvalidInputError("v_low must be smaller than v_high")
    if volume < v_low:
        return Diagnosis.EXPLORATION_STAGNATION
    if volume > v_high:
        return Diagnosis.MANIFOLD_EXPLOSION
    return Diagnosis.STRONG_CONSTRAINTS


@dataclass
class HullReport:
    method_name: str
    volume: float
    vertex_count: int
    degenerate: bool
    diagnosis: Diagnosis
    vertices: list[tuple[float, float, float]] = field(default_factory=list)
    thresholds: tuple[float, float] = DEFAULT_THRESHOLDS
    truncation_step: int | None = None
    n_points: int = 0

    def as_dict(self) -> dict:
        return {
            "method_name": self.method_name,
            "axes": [a.value for a in AXES],
            "volume": self.volume,
            "vertex_count": self.vertex_count,
            "degenerate": self.degenerate,
            "diagnosis": self.diagnosis.value,
            "thresholds": {"v_low": self.thresholds[0], "v_high": self.thresholds[1]},
            "truncation_step": self.truncation_step,
            "n_points": self.n_points,
            "vertices": [list(v) for v in self.vertices],
        }


def hull_report(trajectories: Sequence[PhaseTrajectory],
                thresholds: tuple[float, float] = DEFAULT_THRESHOLDS,
                method_name: str | None = None,
                truncation_step: int | None = None) -> HullReport:
    """Hull over every non-imputed point of the given trajectories."""
    pts = [p.coords for t in trajectories for p in t.points if not p.imputed]
    name = method_name or (trajectories[0].method_name if trajectories else "run")
    if not pts:
        return HullReport(name, 0.0, 0, True, diagnose(0.0, thresholds), [], tuple(thresholds),
                          truncation_step, 0)
    hull = convex_hull(pts)
    verts = [tuple(float(x) for x in hull.points[i]) for i in hull.vertex_indices]
    return HullReport(name, hull.volume, len(verts), hull.degenerate,
                      diagnose(hull.volume, thresholds), verts, tuple(thresholds),
                      truncation_step, len(pts))
