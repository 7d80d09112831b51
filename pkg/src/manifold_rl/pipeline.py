"""Stage runners and artifact I/O shared by the CLI subcommands."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from manifold_rl import __version__
from manifold_rl.config import PipelineConfig
from manifold_rl.errors import InvalidInputError
from manifold_rl.phase_geom import (AXES, HullReport, PhasePoint, PhaseTrajectory, hull_report,
                                    phase_trajectory)
from manifold_rl.toy_lab import (TrainConfig, TrainResult, default_task, supervised_baseline_train,
                                 train)
from manifold_rl.trace_ingest import (ConvergenceMode, ConvergenceSpec, EntropyTrajectory,
                                      LineError, TraceRecord, build_trajectories,
                                      effective_convergence_point, filter_and_normalize,
                                      read_accuracy, read_records)
from manifold_rl.ts_cluster import (ClusterModel, SemanticLabel, SemanticLabeling, SoftDtwParams,
                                    core_samples, order_clusters, token_frequencies, ts_kmeans)

TOOL = "manifold-rl"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def artifact(kind: str, config: PipelineConfig, body: dict[str, Any]) -> dict[str, Any]:
    return {"artifact": kind, "tool": TOOL, "version": __version__,
            "config": config.resolved(), **_plain(body)}


def write_json(path: str, payload: dict[str, Any]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def read_json(path: str) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ------------------------------------------------------------------ toy-train

def train_config_from(cfg: PipelineConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(reward_kind=t.reward, group_size=t.group_size, eps_clip=t.eps_clip,
                       learning_rate=t.learning_rate, temperature=t.temperature,
                       eval_every=t.eval_every, max_steps=t.steps, seed=cfg.seed,
                       eps_std=t.eps_std, eval_samples=t.eval_samples,
                       context_mode=t.context_mode, init_scale=t.init_scale,
                       optimizer=t.optimizer)


def run_toy_train(cfg: PipelineConfig) -> TrainResult:
    t = cfg.train
    task = default_task(t.vocab_size, t.t_max, t.n_prompts)
    tc = train_config_from(cfg)
    return supervised_baseline_train(task, tc) if t.supervised else train(task, tc)


def write_toy_outputs(result: TrainResult, cfg: PipelineConfig, out_dir: str) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {"trace": os.path.join(out_dir, "trace.jsonl"),
             "accuracy": os.path.join(out_dir, "accuracy.jsonl"),
             "summary": os.path.join(out_dir, "run_summary.json")}
    with open(paths["trace"], "w", encoding="utf-8") as fh:
        for rec in result.records:
            fh.write(rec.to_json() + "\n")
    with open(paths["accuracy"], "w", encoding="utf-8") as fh:
        for step, acc in result.accuracy_curve:
            fh.write(json.dumps({"step": step, "accuracy": acc}) + "\n")
    summary = result.summary()
    summary["mode"] = "supervised" if cfg.train.supervised else "intrinsic"
    write_json(paths["summary"], artifact("run_summary", cfg, summary))
    return paths


# --------------------------------------------------------------------- ingest

@dataclass
class IngestOutput:
    trajectories: list[EntropyTrajectory]
    convergence_step: int
    convergence_source: str
    errors: list[LineError]
    n_records: int
    n_anchors: int


def run_ingest(records: Sequence[TraceRecord], cfg: PipelineConfig,
               accuracy_curve: Sequence[tuple[int, float]] | None = None,
               errors: Sequence[LineError] = ()) -> IngestOutput:
    ing = cfg.ingest
    raw = build_trajectories(records, errors)
    if ing.convergence_step is not None:
        conv, source = ing.convergence_step, "explicit"
    elif accuracy_curve:
        spec = ConvergenceSpec(ConvergenceMode.parse(ing.mode), tuple(accuracy_curve),
                               plateau_window=ing.plateau_window, plateau_delta=ing.plateau_delta)
        conv, source = effective_convergence_point(spec), f"accuracy:{ConvergenceMode.parse(ing.mode).value}"
    else:
        steps = [r.step for r in records]
        if not steps or max(steps) <= 0:
            raise InvalidInputError("no trajectories of length ≥ 2")
        conv, source = max(steps), "last_step"
    trajs = filter_and_normalize(raw, conv)
    if not trajs:
        raise InvalidInputError("no trajectories of length ≥ 2")
    return IngestOutput(trajs, conv, source, list(raw.errors), len(records), len(raw))


def trajectories_payload(out: IngestOutput, cfg: PipelineConfig) -> dict[str, Any]:
    return artifact("trajectories", cfg, {
        "convergence_step": out.convergence_step,
        "convergence_source": out.convergence_source,
        "n_records": out.n_records,
        "n_anchors": out.n_anchors,
        "error_count": len(out.errors),
        "errors": [str(e) for e in out.errors[:100]],
        "trajectories": [t.as_dict() for t in out.trajectories],
    })


def load_trajectories(path: str) -> tuple[list[EntropyTrajectory], int | None]:
    d = read_json(path)
    return [EntropyTrajectory.from_dict(t) for t in d["trajectories"]], d.get("convergence_step")


# -------------------------------------------------------------------- cluster

@dataclass
class ClusterOutput:
    model: ClusterModel
    labeling: SemanticLabeling | None
    top_tokens: dict[int, list[tuple[str, int]]]


def run_cluster(trajs: Sequence[EntropyTrajectory], cfg: PipelineConfig) -> ClusterOutput:
    c = cfg.cluster
    params = SoftDtwParams(c.gamma)
    model = ts_kmeans(trajs, c.k, params, c.resample_len, c.max_iter, cfg.seed)
    labeling = order_clusters(model) if model.k == 3 else None
    core = core_samples(model, trajs, c.core_fraction, params)
    return ClusterOutput(model, labeling, token_frequencies(core, trajs, c.top_tokens))


def model_payload(out: ClusterOutput, cfg: PipelineConfig, convergence_step: int | None) -> dict:
    m = out.model
    clusters = []
    for c in range(m.k):
        clusters.append({
            "index": c,
            "label": out.labeling.labels[c].value if out.labeling else None,
            "centroid": m.centroids[c],
            "centroid_mean": float(m.centroid_means[c]),
            "size": len(m.members(c)),
            "top_tokens": [{"token": tok, "count": n} for tok, n in out.top_tokens.get(c, [])],
        })
    return artifact("cluster_model", cfg, {
        "k": m.k,
        "gamma": cfg.cluster.gamma,
        "resample_len": cfg.cluster.resample_len,
        "convergence_step": convergence_step,
        "inertia": m.inertia,
        "inertia_history": m.inertia_history,
        "n_iter": m.n_iter,
        "label_tie": out.labeling.tie if out.labeling else None,
        "clusters": clusters,
        "assignments": [{"prompt_id": a[0], "token": a[1], "cluster": c,
                         "distance": m.distances.get(a)}
                        for a, c in sorted(m.assignments.items())],
    })


def labeling_from_model(d: dict) -> tuple[dict, SemanticLabeling]:
    if d.get("k") != 3:
        raise InvalidInputError("phase projection needs a k=3 cluster model")
    labels = {c["index"]: SemanticLabel(c["label"]) for c in d["clusters"]}
    assignments = {(a["prompt_id"], a["token"]): a["cluster"] for a in d["assignments"]}
    return assignments, SemanticLabeling(labels, bool(d.get("label_tie")))


# -------------------------------------------------------------------- project

def run_project(records: Sequence[TraceRecord], assignments: dict, labeling: SemanticLabeling,
                convergence_step: int | None, method_name: str,
                per_prompt: bool = False) -> list[PhaseTrajectory]:
    if per_prompt:
        prompts = sorted({r.prompt_id for r in records})
        trajs = [phase_trajectory(records, labeling, assignments, convergence_step, method_name, p)
                 for p in prompts]
        trajs = [t for t in trajs if t.points]
    else:
        trajs = [phase_trajectory(records, labeling, assignments, convergence_step, method_name)]
    if not any(p for t in trajs for p in t.points if not p.imputed):
        raise InvalidInputError("no checkpoint has records for all three clusters")
    return trajs


def phase_payload(trajs: Sequence[PhaseTrajectory], cfg: PipelineConfig,
                  convergence_step: int | None, method_name: str) -> dict:
    return artifact("phase", cfg, {
        "method_name": method_name,
        "axes": [a.value for a in AXES],
        "convergence_step": convergence_step,
        "per_prompt": len(trajs) > 1 or any(p.prompt_id for t in trajs for p in t.points),
        "trajectories": [{"prompt_id": (t.points[0].prompt_id if t.points else None),
                          "points": [p.as_dict() for p in t.points]} for t in trajs],
    })


def load_phase(path: str) -> tuple[list[PhaseTrajectory], str, int | None]:
    d = read_json(path)
    name = d.get("method_name", "run")
    trajs = [PhaseTrajectory(name, tuple(PhasePoint.from_dict(p) for p in t["points"]))
             for t in d["trajectories"]]
    return trajs, name, d.get("convergence_step")


def write_phase_csv(path: str, rows: Sequence[PhasePoint]) -> None:
    per_prompt = any(p.prompt_id is not None for p in rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "exec", "logic", "think"] + (["prompt_id"] if per_prompt else []))
        for p in rows:
            w.writerow([p.step, repr(p.coords[0]), repr(p.coords[1]), repr(p.coords[2])]
                       + ([p.prompt_id] if per_prompt else []))


# ----------------------------------------------------------------------- hull

def run_hull(trajs: Sequence[PhaseTrajectory], cfg: PipelineConfig, method_name: str,
             truncation_step: int | None) -> tuple[HullReport, list[PhasePoint]]:
    report = hull_report(trajs, (cfg.hull.v_low, cfg.hull.v_high), method_name, truncation_step)
    # recover the phase points behind each hull vertex for CSV output
    pts = {p.coords: p for t in trajs for p in t.points if not p.imputed}
    vertex_points = [pts[v] for v in report.vertices if v in pts]
    return report, vertex_points


def hull_payload(report: HullReport, cfg: PipelineConfig) -> dict:
    return artifact("hull_report", cfg, report.as_dict())


# ------------------------------------------------------------------- pipeline

def _fmt(x: float | None) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "n/a"
    return f"{x:.6g}"


def render_report(method: str, reward_kind: str, ingest: IngestOutput, cluster: ClusterOutput,
                  report: HullReport) -> str:
    m = cluster.model
    lines = [
        f"# Run report: {method}",
        "",
        f"- reward kind: {reward_kind}",
        f"- convergence step: {ingest.convergence_step} ({ingest.convergence_source})",
        f"- records: {ingest.n_records} ({len(ingest.errors)} malformed lines skipped)",
        f"- trajectories kept: {len(ingest.trajectories)} of {ingest.n_anchors} anchors",
        "",
        "## Clusters",
        "",
        "| cluster | label | size | centroid mean (nats) | top tokens |",
        "|---|---|---|---|---|",
    ]
    for c in range(m.k):
        label = cluster.labeling.labels[c].value if cluster.labeling else "-"
        toks = ", ".join(f"{t} ({n})" for t, n in cluster.top_tokens.get(c, [])[:5])
        lines.append(f"| {c} | {label} | {len(m.members(c))} | {_fmt(float(m.centroid_means[c]))} | {toks} |")
    lines += [
        "",
        f"Inertia {_fmt(m.inertia)} after {m.n_iter} iteration(s).",
        "",
        "## Phase-space hull (axes: Execution, Logic, Thinking)",
        "",
        f"- points: {report.n_points}",
        f"- volume: {_fmt(report.volume)} nats^3",
        f"- vertices: {report.vertex_count}",
        f"- degenerate: {'yes' if report.degenerate else 'no'}",
        f"- thresholds: v_low={_fmt(report.thresholds[0])}, v_high={_fmt(report.thresholds[1])}",
        f"- diagnosis: **{report.diagnosis.value}**",
        "",
    ]
    return "\n".join(lines)


def run_pipeline(cfg: PipelineConfig) -> dict[str, str]:
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    paths: dict[str, str] = {}

    def stage(name, fn, *args):
        try:
            return fn(*args)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc

    accuracy_path = cfg.ingest.accuracy
    if cfg.ingest.records:
        records_path = cfg.ingest.records
        reward_kind = "external"
        method = cfg.method_name or "external"
    else:
        result = stage("toy-train", run_toy_train, cfg)
        paths.update(stage("toy-train", write_toy_outputs, result, cfg, out_dir))
        records_path = paths["trace"]
        reward_kind = "supervised" if cfg.train.supervised else cfg.train.reward
        method = cfg.method_name or f"toy-{reward_kind}"

    def ingest_stage():
        records, errors = read_records(records_path)
        curve = read_accuracy(accuracy_path) if accuracy_path else None
        return records, run_ingest(records, cfg, curve, errors)

    records, ing = stage("ingest", ingest_stage)
    paths["trajectories"] = os.path.join(out_dir, "trajectories.json")
    write_json(paths["trajectories"], trajectories_payload(ing, cfg))

    clu = stage("cluster", run_cluster, ing.trajectories, cfg)
    paths["model"] = os.path.join(out_dir, "model.json")
    write_json(paths["model"], model_payload(clu, cfg, ing.convergence_step))
    if clu.labeling is None:
        raise StageError("project", "phase projection needs k=3")

    phase = stage("project", run_project, records, clu.model.assignments, clu.labeling,
                  ing.convergence_step, method, cfg.hull.per_prompt)
    paths["phase"] = os.path.join(out_dir, "phase.json")
    write_json(paths["phase"], phase_payload(phase, cfg, ing.convergence_step, method))
    paths["phase_csv"] = os.path.join(out_dir, "phase.csv")
    write_phase_csv(paths["phase_csv"], [p for t in phase for p in t.points if not p.imputed])

    report, vertex_pts = stage("hull", run_hull, phase, cfg, method, ing.convergence_step)
    paths["hull"] = os.path.join(out_dir, "hull_report.json")
    write_json(paths["hull"], hull_payload(report, cfg))
    paths["hull_csv"] = os.path.join(out_dir, "hull_vertices.csv")
    write_phase_csv(paths["hull_csv"], vertex_pts)

    paths["report"] = os.path.join(out_dir, "report.md")
    with open(paths["report"], "w", encoding="utf-8") as fh:
        fh.write(render_report(method, reward_kind, ing, clu, report))
    return paths
