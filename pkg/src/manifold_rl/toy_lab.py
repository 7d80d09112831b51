"""Desk-scale GRPO runs on a tabular softmax policy.

The policy picks token ``v`` in context ``c`` with probability
``softmax(logits[c] / temperature)[v]``. In ``bigram`` mode the context is
the previous token (the prompt's start token for the first step); in
``positional`` mode it is the position in the response. Token ``V-1`` is
EOS and is counted in the response length.

Each training step samples ``group_size`` rollouts for every prompt,
scores them with an intrinsic reward, standardises rewards per prompt and
takes one ascent step on the mean of the per-prompt GRPO objectives. Every
``eval_every`` steps the policy is evaluated with a fixed seed and one
trace record is logged per (prompt, distinct token) of each response.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from manifold_rl.dist_core import ProbVector, collision_mass, shannon_entropy, softmax_rows
from manifold_rl.errors import InvalidInputError
from manifold_rl.grpo import RolloutGroup, group_advantages, softmax_policy_gradient
from manifold_rl.rewards import RewardKind, StepDistSequence, reward
from manifold_rl.seeding import stage_rng
from manifold_rl.trace_ingest import TraceRecord


class ContextMode(str, enum.Enum):
    BIGRAM = "bigram"
    POSITIONAL = "positional"


@dataclass(eq=False)
class ToyPolicy:
    vocab_size: int
    context_mode: ContextMode
    logits: np.ndarray

    def __post_init__(self):
        self.context_mode = ContextMode(self.context_mode)
        self.logits = np.array(self.logits, dtype=np.float64)
        if self.vocab_size < 2:
            raise InvalidInputError("vocabulary needs at least one token besides EOS")
        if self.logits.ndim != 2 or self.logits.shape[1] != self.vocab_size:
            raise InvalidInputError(f"logits must have shape (contexts, {self.vocab_size})")
        if not np.all(np.isfinite(self.logits)):
            raise InvalidInputError("logits must be finite")

    @property
    def eos(self) -> int:
        return self.vocab_size - 1

    @classmethod
    def create(cls, vocab_size: int, context_mode: ContextMode | str = ContextMode.BIGRAM,
               t_max: int | None = None, init_scale: float = 0.0,
               rng: np.random.Generator | None = None) -> "ToyPolicy":
        mode = ContextMode(context_mode)
        if mode is ContextMode.BIGRAM:
            n_ctx = vocab_size
        else:
            if t_max is None:
                raise InvalidInputError("positional policies need t_max")
            n_ctx = t_max
        logits = np.zeros((n_ctx, vocab_size))
        if init_scale:
            rng = rng if rng is not None else np.random.default_rng(0)
            logits += init_scale * rng.standard_normal(logits.shape)
        return cls(vocab_size, mode, logits)

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.vocab_size, self.context_mode, self.logits.copy())


@dataclass(frozen=True)
class ToyTask:
    """Prompts are identified by their start token (the first bigram context)."""

    prompt_ids: tuple[int, ...]
    start_tokens: tuple[int, ...]
    t_max: int
    vocab_size: int = 32
    target_structure: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if self.t_max < 2:
            raise InvalidInputError("t_max must be at least 2")
        if any(not 0 <= s < self.vocab_size - 1 for s in self.start_tokens):
            raise InvalidInputError("start tokens must be non-EOS vocabulary entries")
        if len(set(self.prompt_ids)) != len(self.prompt_ids):
            raise InvalidInputError("prompt ids must be distinct")
        if len(self.start_tokens) != len(self.prompt_ids):
            raise InvalidInputError("need one start token per prompt")
        if self.target_structure is not None and len(self.target_structure) != len(self.prompt_ids):
            raise InvalidInputError("need one target sequence per prompt")


def default_task(vocab_size: int = 32, t_max: int = 64, n_prompts: int = 8) -> ToyTask:
    """Prompts start on distinct non-EOS tokens; target = (start+1, EOS)."""
    n_body = vocab_size - 1
    if n_prompts > n_body:
        raise InvalidInputError(f"at most {n_body} distinct prompts for V={vocab_size}")
    stride = max(1, n_body // n_prompts)
    starts = tuple((j * stride) % n_body for j in range(n_prompts))
    targets = tuple(((s + 1) % n_body, vocab_size - 1) for s in starts)
    return ToyTask(tuple(range(n_prompts)), starts, t_max, vocab_size, targets)


@dataclass(frozen=True)
class TrainConfig:
    reward_kind: RewardKind = RewardKind.ENT
    group_size: int = 16
    eps_clip: float = 0.2
    learning_rate: float = 1e-2
    temperature: float = 0.6
    eval_every: int = 5
    max_steps: int = 200
    seed: int = 7
    eps_std: float = 1e-6
    eval_samples: int = 4
    context_mode: ContextMode = ContextMode.BIGRAM
    init_scale: float = 0.0
    optimizer: str = "adam"

    def __post_init__(self):
        object.__setattr__(self, "reward_kind", RewardKind(self.reward_kind))
        object.__setattr__(self, "context_mode", ContextMode(self.context_mode))
        if self.group_size < 2:
            raise InvalidInputError("group_size must be >= 2")
        if not 0 < self.eps_clip < 1:
            raise InvalidInputError("eps_clip must lie in (0, 1)")
        if self.learning_rate < 0 or self.temperature <= 0 or self.eps_std < 0:
            raise InvalidInputError("learning_rate, temperature and eps_std must be positive")
        if self.eval_every < 1 or self.max_steps < 0 or self.eval_samples < 1:
            raise InvalidInputError("eval_every, eval_samples must be >= 1 and max_steps >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")


@dataclass(eq=False)
class Rollout:
    prompt: int
    tokens: np.ndarray
    contexts: np.ndarray
    probs: np.ndarray  # (T, V) sampling distributions
    logprobs: np.ndarray

    @property
    def length(self) -> int:
        return self.tokens.size

    @property
    def distributions(self) -> list[ProbVector]:
        return [ProbVector(row) for row in self.probs]

    def step_sequence(self) -> StepDistSequence:
        return StepDistSequence(shannon_entropy(self.probs), collision_mass(self.probs))


def _as_rng(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def rollout_batch(policy: ToyPolicy, prompts: Sequence[int], t_max: int, temperature: float,
                  rng_seed) -> list[Rollout]:
    """Sample one response per entry of ``prompts`` (start tokens), in lock-step."""
    if t_max < 1:
        raise InvalidInputError("t_max must be >= 1")
    rng = _as_rng(rng_seed)
    starts = np.asarray(prompts, dtype=np.int64)
    n = starts.size
    vocab, eos = policy.vocab_size, policy.eos
    if policy.context_mode is ContextMode.POSITIONAL and policy.logits.shape[0] < t_max:
        raise InvalidInputError("positional policy has fewer contexts than t_max")
    if policy.context_mode is ContextMode.BIGRAM and (starts.min() < 0 or starts.max() >= vocab):
        raise InvalidInputError("start token outside the vocabulary")

    tokens = np.zeros((n, t_max), dtype=np.int64)
    contexts = np.zeros((n, t_max), dtype=np.int64)
    probs = np.zeros((n, t_max, vocab))
    lengths = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    prev = starts.copy()
    for t in range(t_max):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        ctx = prev[idx] if policy.context_mode is ContextMode.BIGRAM else np.full(idx.size, t)
        p = softmax_rows(policy.logits[ctx], temperature)
        u = rng.random(idx.size)
        tok = np.minimum((np.cumsum(p, axis=1) <= u[:, None]).sum(axis=1), vocab - 1)
        # cumsum round-off can land on a zero-probability token
        bad = p[np.arange(idx.size), tok] == 0.0
        if bad.any():
            tok[bad] = p[bad].argmax(axis=1)
        tokens[idx, t] = tok
        contexts[idx, t] = ctx
        probs[idx, t] = p
        lengths[idx] += 1
        prev[idx] = tok
        alive[idx[tok == eos]] = False

    out = []
    for i in range(n):
        T = lengths[i]
        p = probs[i, :T]
        tk = tokens[i, :T]
        lp = np.log(p[np.arange(T), tk])
        out.append(Rollout(int(starts[i]), tk.copy(), contexts[i, :T].copy(), p.copy(), lp))
    return out


def rollout(policy: ToyPolicy, prompt: int, t_max: int, temperature: float, rng_seed):
    """Single response: (tokens, per-step ProbVectors, per-step log-probs)."""
    r = rollout_batch(policy, [prompt], t_max, temperature, rng_seed)[0]
    return r.tokens, r.distributions, r.logprobs


def token_name(token: int, vocab_size: int) -> str:
    return "<eos>" if token == vocab_size - 1 else f"tok{token}"


@dataclass
class Checkpoint:
    step: int
    mean_entropy: float
    mean_length: float
    mean_reward: float
    accuracy: float | None

    def as_dict(self) -> dict:
        return {"step": self.step, "mean_entropy": self.mean_entropy,
                "mean_length": self.mean_length, "mean_reward": self.mean_reward,
                "accuracy": self.accuracy}


@dataclass
class TrainResult:
    records: list[TraceRecord]
    checkpoints: list[Checkpoint]
    step_log: list[dict]
    initial_logits: np.ndarray
    policy: ToyPolicy
    config: TrainConfig
    task: ToyTask

    @property
    def accuracy_curve(self) -> list[tuple[int, float]]:
        return [(c.step, c.accuracy) for c in self.checkpoints
                if c.accuracy is not None and c.step > 0]

    def summary(self) -> dict:
        return {
            "reward_kind": self.config.reward_kind.value,
            "checkpoints": [c.as_dict() for c in self.checkpoints],
            "steps": self.step_log,
        }


class _Adam:
    def __init__(self, shape, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def ascent(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        params += self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


RewardFn = Callable[[Rollout, int], float]


def _intrinsic_reward_fn(kind: RewardKind, t_max: int) -> RewardFn:
    return lambda r, _j: reward(kind, r.step_sequence(), t_max)


def _match_reward_fn(task: ToyTask) -> RewardFn:
    targets = task.target_structure

    def fn(r: Rollout, j: int) -> float:
        return float(tuple(int(t) for t in r.tokens) == tuple(targets[j]))

    return fn


def _evaluate(policy: ToyPolicy, task: ToyTask, config: TrainConfig, step: int,
              reward_fn: RewardFn) -> tuple[Checkpoint, list[TraceRecord]]:
    rng = stage_rng(config.seed, "toy-eval")
    k = config.eval_samples
    prompts = [s for s in task.start_tokens for _ in range(k)]
    rolls = rollout_batch(policy, prompts, task.t_max, config.temperature, rng)
    all_h, lengths, rewards, hits = [], [], [], []
    records = []
    for i, r in enumerate(rolls):
        j = i // k
        h = shannon_entropy(r.probs)
        all_h.append(h)
        lengths.append(r.length)
        rewards.append(reward_fn(r, j))
        if task.target_structure is not None:
            hits.append(tuple(int(t) for t in r.tokens) == tuple(task.target_structure[j]))
        if step > 0:
            pid = f"p{task.prompt_ids[j]}"
            for tok in np.unique(r.tokens):
                records.append(TraceRecord(step, pid, token_name(int(tok), policy.vocab_size),
                                           float(h[r.tokens == tok].mean())))
    ckpt = Checkpoint(
        step=step,
        mean_entropy=float(np.concatenate(all_h).mean()),
        mean_length=float(np.mean(lengths)),
        mean_reward=float(np.mean(rewards)),
        accuracy=float(np.mean(hits)) if hits else None,
    )
    return ckpt, records


def _train(task: ToyTask, config: TrainConfig, reward_fn: RewardFn,
           policy: ToyPolicy | None, check_identity: bool) -> TrainResult:
    if policy is None:
        policy = ToyPolicy.create(task.vocab_size, config.context_mode, task.t_max,
                                  config.init_scale, stage_rng(config.seed, "toy-init"))
    policy = policy.copy()
    initial = policy.logits.copy()
    rng = stage_rng(config.seed, "toy-train")
    opt = _Adam(policy.logits.shape, config.learning_rate) if config.optimizer == "adam" else None
    G = config.group_size
    n_prompts = len(task.start_tokens)
    prompts = [s for s in task.start_tokens for _ in range(G)]

    checkpoints, records, step_log = [], [], []
    ck, _ = _evaluate(policy, task, config, 0, reward_fn)
    checkpoints.append(ck)
    for step in range(1, config.max_steps + 1):
        rolls = rollout_batch(policy, prompts, task.t_max, config.temperature, rng)
        grad = np.zeros_like(policy.logits)
        step_rewards, identity_gap = [], 0.0
        for j in range(n_prompts):
            members = rolls[j * G:(j + 1) * G]
            rs = [reward_fn(r, j) for r in members]
            step_rewards.extend(rs)
            if check_identity:
                for r in members:
                    seq = r.step_sequence()
                    ent = reward(RewardKind.ENT, seq, task.t_max)
                    avg = reward(RewardKind.AVGENT, seq, task.t_max)
                    identity_gap = max(identity_gap, abs(ent - seq.length * avg) / max(1.0, abs(ent)))
            adv = group_advantages(rs, config.eps_std)
            if not np.any(adv.advantages):
                continue
            lps = tuple(r.logprobs for r in members)
            group = RolloutGroup(np.array(rs), lps, lps,
                                 tuple(r.contexts for r in members), tuple(r.tokens for r in members))
            grad += softmax_policy_gradient(group, adv, policy, config.temperature, config.eps_clip)
        grad /= n_prompts
        if config.learning_rate > 0 and np.any(grad):
            if opt is not None:
                opt.ascent(policy.logits, grad)
            else:
                policy.logits += config.learning_rate * grad
        entry = {"step": step, "mean_reward": float(np.mean(step_rewards)),
                 "mean_length": float(np.mean([r.length for r in rolls]))}
        if check_identity:
            entry["ent_avgent_identity_gap"] = identity_gap
        step_log.append(entry)
        if step % config.eval_every == 0:
            ck, recs = _evaluate(policy, task, config, step, reward_fn)
            checkpoints.append(ck)
            records.extend(recs)
    return TrainResult(records, checkpoints, step_log, initial, policy, config, task)


def train(task: ToyTask, config: TrainConfig, policy: ToyPolicy | None = None) -> TrainResult:
    return _train(task, config, _intrinsic_reward_fn(config.reward_kind, task.t_max),
                  policy, check_identity=True)


def supervised_baseline_train(task: ToyTask, config: TrainConfig,
                              policy: ToyPolicy | None = None) -> TrainResult:
    """Binary exact-match reward against the task targets, same GRPO machinery."""
    if task.target_structure is None:
        raise InvalidInputError("the supervised baseline needs task.target_structure")
    return _train(task, config, _match_reward_fn(task), policy, check_identity=False)
