"""Command-line entry point: ``manifold-rl <subcommand>``.

Exit codes: 0 ok, 1 runtime error, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from pydantic import ValidationError

from manifold_rl import __version__
from manifold_rl.config import PipelineConfig, load_config
from manifold_rl.errors import InvalidInputError, NotFoundError
from manifold_rl import pipeline as pl
from manifold_rl.rewards import RewardKind
from manifold_rl.trace_ingest import read_accuracy, read_records

log = logging.getLogger("manifold_rl")

REWARD_CHOICES = [k.value for k in RewardKind]


class UsageError(Exception):
    pass


def _resolve(args, overrides: dict) -> PipelineConfig:
    try:
        return load_config(args.config, overrides)
    except ValidationError as exc:
        raise UsageError(f"invalid configuration:\n{exc}") from None
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _add_train_flags(p):
    p.add_argument("--reward", choices=REWARD_CHOICES, help="intrinsic reward")
    p.add_argument("--supervised", action="store_true", default=None,
                   help="exact-match baseline reward instead of an intrinsic one")
    p.add_argument("--steps", type=int)
    p.add_argument("--group-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--t-max", type=int)
    p.add_argument("--n-prompts", type=int)
    p.add_argument("--context-mode", choices=["bigram", "positional"])


def _train_overrides(a) -> dict:
    return {"train.reward": a.reward, "train.supervised": a.supervised, "train.steps": a.steps,
            "train.group_size": a.group_size, "train.learning_rate": a.lr,
            "train.temperature": a.temperature, "train.eval_every": a.eval_every,
            "train.vocab_size": a.vocab_size, "train.t_max": a.t_max,
            "train.n_prompts": a.n_prompts, "train.context_mode": a.context_mode}


def _add_ingest_flags(p):
    p.add_argument("--records", help="trace JSONL")
    p.add_argument("--accuracy", help="accuracy JSONL sidecar")
    p.add_argument("--mode", choices=["peak", "plateau", "collapse"])
    p.add_argument("--convergence-step", type=int)
    p.add_argument("--plateau-window", type=int)
    p.add_argument("--plateau-delta", type=float)


def _ingest_overrides(a) -> dict:
    return {"ingest.records": a.records, "ingest.accuracy": a.accuracy, "ingest.mode": a.mode,
            "ingest.convergence_step": a.convergence_step,
            "ingest.plateau_window": a.plateau_window, "ingest.plateau_delta": a.plateau_delta}


def _add_cluster_flags(p):
    p.add_argument("--k", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--resample-len", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--core-fraction", type=float)


def _cluster_overrides(a) -> dict:
    return {"cluster.k": a.k, "cluster.gamma": a.gamma, "cluster.resample_len": a.resample_len,
            "cluster.max_iter": a.max_iter, "cluster.core_fraction": a.core_fraction}


def _add_hull_flags(p):
    p.add_argument("--v-low", type=float)
    p.add_argument("--v-high", type=float)


def cmd_toy_train(a) -> int:
    cfg = _resolve(a, {"seed": a.seed, "out_dir": a.out_dir, **_train_overrides(a)})
    result = pl.run_toy_train(cfg)
    paths = pl.write_toy_outputs(result, cfg, cfg.out_dir)
    first, last = result.checkpoints[0], result.checkpoints[-1]
    log.info("mean length %.2f -> %.2f, mean entropy %.3f -> %.3f",
             first.mean_length, last.mean_length, first.mean_entropy, last.mean_entropy)
    print(paths["summary"])
    return 0


def cmd_ingest(a) -> int:
    cfg = _resolve(a, {"seed": a.seed, **_ingest_overrides(a)})
    if not cfg.ingest.records:
        raise UsageError("ingest needs --records")
    records, errors = read_records(cfg.ingest.records)
    curve = read_accuracy(cfg.ingest.accuracy) if cfg.ingest.accuracy else None
    for e in errors[:20]:
        log.warning("%s: %s", cfg.ingest.records, e)
    out = pl.run_ingest(records, cfg, curve, errors)
    pl.write_json(a.out, pl.trajectories_payload(out, cfg))
    log.info("%d trajectories, convergence step %d, %d malformed line(s)",
             len(out.trajectories), out.convergence_step, len(out.errors))
    return 0


def cmd_cluster(a) -> int:
    cfg = _resolve(a, {"seed": a.seed, **_cluster_overrides(a)})
    trajs, conv = pl.load_trajectories(a.trajectories)
    out = pl.run_cluster(trajs, cfg)
    pl.write_json(a.out, pl.model_payload(out, cfg, conv))
    return 0


def cmd_project(a) -> int:
    cfg = _resolve(a, {"seed": a.seed, "method_name": a.method, "hull.per_prompt": a.per_prompt})
    model = pl.read_json(a.model)
    assignments, labeling = pl.labeling_from_model(model)
    conv = a.convergence_step or model.get("convergence_step")
    records, errors = read_records(a.records)
    method = cfg.method_name or "run"
    trajs = pl.run_project(records, assignments, labeling, conv, method, cfg.hull.per_prompt)
    pl.write_json(a.out, pl.phase_payload(trajs, cfg, conv, method))
    if a.csv:
        pl.write_phase_csv(a.csv, [p for t in trajs for p in t.points if not p.imputed])
    return 0


def cmd_hull(a) -> int:
    cfg = _resolve(a, {"seed": a.seed, "hull.v_low": a.v_low, "hull.v_high": a.v_high})
    trajs, name, conv = pl.load_phase(a.phase)
    report, vertex_pts = pl.run_hull(trajs, cfg, cfg.method_name or name, conv)
    pl.write_json(a.out, pl.hull_payload(report, cfg))
    if a.csv:
        pl.write_phase_csv(a.csv, vertex_pts)
    print(f"{report.method_name}: volume {report.volume:.6g} -> {report.diagnosis.value}")
    return 0


def cmd_pipeline(a) -> int:
    overrides = {"seed": a.seed, "out_dir": a.out_dir, "method_name": a.method,
                 "hull.per_prompt": a.per_prompt, "hull.v_low": a.v_low, "hull.v_high": a.v_high,
                 **_train_overrides(a), **_ingest_overrides(a), **_cluster_overrides(a)}
    cfg = _resolve(a, overrides)
    paths = pl.run_pipeline(cfg)
    print(paths["report"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manifold-rl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML/JSON config; flags override its values")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("toy-train", help="train the tabular toy policy and log entropy traces")
    common(p)
    _add_train_flags(p)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_toy_train)

    p = sub.add_parser("ingest", help="build entropy trajectories from a trace JSONL")
    common(p)
    _add_ingest_flags(p)
    p.add_argument("--out", default="trajectories.json")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("cluster", help="soft-DTW k-means over trajectories")
    common(p)
    p.add_argument("--trajectories", required=True)
    _add_cluster_flags(p)
    p.add_argument("--out", default="model.json")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("project", help="per-checkpoint cluster-mean entropies (3D phase points)")
    common(p)
    p.add_argument("--records", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--convergence-step", type=int)
    p.add_argument("--method")
    p.add_argument("--per-prompt", action="store_true", default=None)
    p.add_argument("--out", default="phase.json")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("hull", help="convex-hull volume and diagnosis of a phase trajectory")
    common(p)
    p.add_argument("--phase", required=True)
    _add_hull_flags(p)
    p.add_argument("--out", default="hull_report.json")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_hull)

    p = sub.add_parser("pipeline", help="ingest -> cluster -> project -> hull (toy-train first "
                                        "when no --records is given)")
    common(p)
    _add_train_flags(p)
    _add_ingest_flags(p)
    _add_cluster_flags(p)
    _add_hull_flags(p)
    p.add_argument("--method")
    p.add_argument("--per-prompt", action="store_true", default=None)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: {exc}", file=sys.stderr)
        return 2
    except pl.StageError as exc:
        print(f"{parser.prog} {args.command}: {exc}", file=sys.stderr)
        return 1
    except (InvalidInputError, NotFoundError, OSError, KeyError, ValueError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
