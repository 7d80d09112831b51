"""Soft-DTW and time-series k-means over entropy trajectories.

Assignment always uses soft-DTW between a member's raw entropy series and a
centroid. Centroids live on a fixed grid of ``L`` points and are updated to
the arithmetic mean of the members' resampled series; an update is kept
only when it does not raise that cluster's soft-DTW inertia, which keeps
the total inertia non-increasing.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from manifold_rl.errors import InvalidInputError
from manifold_rl.seeding import stage_rng
from manifold_rl.trace_ingest import Anchor, EntropyTrajectory

DEFAULT_GAMMA = 0.1
DEFAULT_RESAMPLE_LEN = 32


@dataclass(frozen=True)
class SoftDtwParams:
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise InvalidInputError("gamma must be finite and >= 0")


@numba.njit(cache=True)
def _soft_dtw_kernel(x, y, gamma):
    n, m = x.shape[0], y.shape[0]
    inf = np.inf
    r = np.full((n + 1, m + 1), inf)
    r[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            a = r[i - 1, j - 1]
            b = r[i - 1, j]
            c = r[i, j - 1]
            lo = min(a, min(b, c))
            if gamma > 0.0:
                s = math.exp(-(a - lo) / gamma) + math.exp(-(b - lo) / gamma) \
                    + math.exp(-(c - lo) / gamma)
                lo = lo - gamma * math.log(s)
            d = x[i - 1] - y[j - 1]
            r[i, j] = d * d + lo
    return r[n, m]


def soft_dtw(x: Sequence[float], y: Sequence[float], params: SoftDtwParams | float = SoftDtwParams()) -> float:
    """Soft-DTW with squared scalar cost; ``gamma == 0`` gives classical DTW."""
    gamma = params.gamma if isinstance(params, SoftDtwParams) else float(params)
    if gamma < 0:
        raise InvalidInputError("gamma must be >= 0")
    xa = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    ya = np.ascontiguousarray(y, dtype=np.float64).reshape(-1)
    if xa.size == 0 or ya.size == 0:
        raise InvalidInputError("soft-DTW needs two non-empty sequences")
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(ya))):
        raise InvalidInputError("sequences must be finite")
    return float(_soft_dtw_kernel(xa, ya, gamma))


def resample(traj: EntropyTrajectory | tuple[Sequence[float], Sequence[float]], L: int) -> np.ndarray:
    """Linear interpolation onto ``L`` equally spaced times over the observed span."""
    if L < 2:
        raise InvalidInputError("resample length must be >= 2")
    if isinstance(traj, EntropyTrajectory):
        t, h = traj.t_hat, traj.entropy
    else:
        t, h = traj
    t = np.asarray(t, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    grid = np.linspace(t[0], t[-1], L)
    return np.interp(grid, t, h)


class SemanticLabel(str, enum.Enum):
    EXECUTION = "Execution"
    LOGIC = "Logic"
    THINKING = "Thinking"


@dataclass(eq=False)
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, L)
    assignments: dict[Anchor, int]
    inertia: float
    distances: dict[Anchor, float] = field(default_factory=dict)
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def centroid_means(self) -> np.ndarray:
        return self.centroids.mean(axis=1)

    def members(self, cluster: int) -> list[Anchor]:
        return [a for a, c in self.assignments.items() if c == cluster]


def _distance_matrix(series: list[np.ndarray], centroids: np.ndarray, gamma: float) -> np.ndarray:
    out = np.empty((len(series), len(centroids)))
    for i, s in enumerate(series):
        for c, cen in enumerate(centroids):
            out[i, c] = _soft_dtw_kernel(s, cen, gamma)
    return out


def _seed_centroids(series, resampled, k, gamma, rng) -> np.ndarray:
    # k-means++ with soft-DTW to the nearest chosen centroid as the weight
    n = len(series)
    chosen = [int(rng.integers(n))]
    nearest = np.array([_soft_dtw_kernel(s, resampled[chosen[0]], gamma) for s in series])
    while len(chosen) < k:
        w = np.maximum(nearest, 0.0)
        w[chosen] = 0.0
        if w.sum() > 0:
            idx = int(rng.choice(n, p=w / w.sum()))
        else:
            free = [i for i in range(n) if i not in chosen]
            idx = int(free[rng.integers(len(free))])
        chosen.append(idx)
        d = np.array([_soft_dtw_kernel(s, resampled[idx], gamma) for s in series])
        nearest = np.minimum(nearest, d)
    return np.array([resampled[i] for i in chosen])


def ts_kmeans(trajs: Sequence[EntropyTrajectory], k: int = 3,
              params: SoftDtwParams = SoftDtwParams(), L: int = DEFAULT_RESAMPLE_LEN,
              max_iter: int = 50, seed: int = 7) -> ClusterModel:
    """Lloyd-style k-means under soft-DTW; clusters are returned in ascending centroid mean."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if len(trajs) < k:
        raise InvalidInputError(f"need at least k={k} trajectories, got {len(trajs)}")
    if max_iter < 1:
        raise InvalidInputError("max_iter must be >= 1")
    gamma = params.gamma
    series = [np.ascontiguousarray(t.entropy, dtype=np.float64) for t in trajs]
    resampled = np.array([resample(t, L) for t in trajs])
    rng = stage_rng(seed, "ts-kmeans")
    centroids = _seed_centroids(series, resampled, k, gamma, rng)

    dist = _distance_matrix(series, centroids, gamma)
    labels = dist.argmin(axis=1)
    history = [float(dist[np.arange(len(series)), labels].sum())]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        for c in range(k):
            members = np.flatnonzero(labels == c)
            if members.size == 0:
                # reseed from the member farthest from its own centroid
                own = dist[np.arange(len(series)), labels].copy()
                donors = np.bincount(labels, minlength=k)
                own[donors[labels] <= 1] = -np.inf
                far = int(np.argmax(own))
                labels[far] = c
                centroids[c] = resampled[far]
                dist[:, c] = [_soft_dtw_kernel(s, centroids[c], gamma) for s in series]
                continue
            candidate = resampled[members].mean(axis=0)
            cand_d = np.array([_soft_dtw_kernel(series[i], candidate, gamma) for i in members])
            if cand_d.sum() <= dist[members, c].sum():
                centroids[c] = candidate
                dist[:, c] = [_soft_dtw_kernel(s, candidate, gamma) for s in series]
        new_labels = dist.argmin(axis=1)
        history.append(float(dist[np.arange(len(series)), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    order = np.argsort(centroids.mean(axis=1), kind="stable")
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    centroids = centroids[order]
    labels = remap[labels]
    d_own = dist[np.arange(len(series)), order[labels]]
    return ClusterModel(
        k=k,
        centroids=centroids,
        assignments={t.anchor: int(c) for t, c in zip(trajs, labels)},
        inertia=float(d_own.sum()),
        distances={t.anchor: float(d) for t, d in zip(trajs, d_own)},
        inertia_history=history,
        n_iter=n_iter,
    )


@dataclass(frozen=True)
class SemanticLabeling:
    labels: dict[int, SemanticLabel]
    tie: bool = False

    def cluster_of(self, label: SemanticLabel) -> int:
        for c, lab in self.labels.items():
            if lab is label:
                return c
        raise KeyError(label)


def order_clusters(model: ClusterModel) -> SemanticLabeling:
    """Map clusters by ascending centroid mean to Execution, Logic, Thinking."""
    if model.k != 3:
        raise InvalidInputError(f"semantic labelling needs k=3, got k={model.k}")
    means = model.centroid_means
    order = sorted(range(3), key=lambda c: (means[c], c))
    tie = len(set(float(m) for m in means)) < 3
    names = (SemanticLabel.EXECUTION, SemanticLabel.LOGIC, SemanticLabel.THINKING)
    return SemanticLabeling({c: names[rank] for rank, c in enumerate(order)}, tie=tie)


def core_samples(model: ClusterModel, trajs: Sequence[EntropyTrajectory],
                 fraction: float = 0.5,
                 params: SoftDtwParams = SoftDtwParams()) -> dict[int, list[Anchor]]:
    """Per cluster, the ceil(fraction*n) members closest to the centroid."""
    if not 0 < fraction <= 1:
        raise InvalidInputError("fraction must lie in (0, 1]")
    by_anchor = {t.anchor: t for t in trajs}
    out = {}
    for c in range(model.k):
        members = [a for a in model.members(c) if a in by_anchor]
        if model.distances:
            dist = {a: model.distances[a] for a in members}
        else:
            dist = {a: soft_dtw(by_anchor[a].entropy, model.centroids[c], params) for a in members}
        ranked = sorted(members, key=lambda a: (dist[a], a))
        out[c] = ranked[:math.ceil(fraction * len(ranked))]
    return out


def token_frequencies(core: dict[int, list[Anchor]], trajs: Sequence[EntropyTrajectory],
                      top: int | None = None) -> dict[int, list[tuple[str, int]]]:
    """Rank surface tokens in each core by how often they occur in the trace."""
    occ = {t.anchor: (t.occurrences or len(t.entropy)) for t in trajs}
    out = {}
    for c, anchors in core.items():
        counts: dict[str, int] = {}
        for a in anchors:
            counts[a[1]] = counts.get(a[1], 0) + occ.get(a, 0)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        out[c] = ranked[:top] if top is not None else ranked
    return out
