"""Policy/value network over GraphSAGE embeddings, trained with PPO.

All parameters (encoder, trunk, heads) live in one flat ``dict`` of float64
arrays so the optimizer, checkpointing and gradient checks treat them
uniformly. Gradients are computed by hand.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from rlplace import gnn
from rlplace.env import CanvasConfig, PlacementEnv, PlacementProblem, RewardBreakdown
from rlplace.graph import Graph, build_graph
from rlplace.netlist import ClusteredNetlist

log = logging.getLogger(__name__)

HIDDEN = 64
META_DIM = 6
EMBED_KEYS = ("sage0.self", "sage0.nbr", "sage1.self", "sage1.nbr")

Params = dict[str, np.ndarray]


class EmptyMaskError(RuntimeError):
    """Every cell is masked out: the episode cannot continue."""


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 1.0
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch_size: int = 64
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_grad_norm: float = 0.5
    optimizer: str = "adam"
    episodes_per_iteration: int = 8
    iterations: int = 100
    checkpoint_every: int = 50
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        for name in ("value_coef", "entropy_coef", "learning_rate", "max_grad_norm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.clip_eps <= 0 or self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("clip_eps, epochs and minibatch_size must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def hash_fields(self) -> dict:
        d = asdict(self)
        for k in ("iterations", "checkpoint_every"):
            d.pop(k)
        return d


# ---------------------------------------------------------------- parameters


def init_params(seed: int, num_actions: int, dropout: float = 0.1) -> tuple[Params, float]:
    """Fresh encoder + trunk + heads. Returns (params, dropout)."""
    emb = gnn.init_embed_params(seed, dropout=dropout)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    params: Params = dict(emb.weights)
    d_in = 2 * gnn.EMBED_DIM + META_DIM
    for name, fan_in, fan_out in (("fc0", d_in, HIDDEN), ("fc1", HIDDEN, HIDDEN), ("pi", HIDDEN, num_actions), ("v", HIDDEN, 1)):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        params[f"{name}.w"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"{name}.b"] = np.zeros(fan_out)
    # small policy logits start near uniform
    params["pi.w"] *= 0.01
    return params, dropout


def zeros_like(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def global_norm(grads: Params) -> float:
    # fixed summation order so a resumed run reproduces the original bitwise
    return math.sqrt(sum(float(np.sum(grads[k] * grads[k])) for k in sorted(grads)))


def flatten(grads: Params) -> np.ndarray:
    return np.concatenate([grads[k].ravel() for k in sorted(grads)])


# ---------------------------------------------------------------- encoding


@dataclass
class InstanceContext:
    """Static per-instance inputs: graph, node features, metadata."""

    problem: PlacementProblem
    graph: Graph
    features: np.ndarray
    macro_rows: np.ndarray  # graph row of each macro, in placement order
    meta_static: np.ndarray

    @classmethod
    def build(cls, problem: PlacementProblem) -> "InstanceContext":
        clustered = problem.clustered
        g = build_graph(clustered)
        x = gnn.node_features(clustered, g)
        rows = np.array([g.index[m] for m in problem.order], dtype=int)
        cfg = problem.cfg
        macro_area = sum(clustered.original.node(m).area for m in problem.order)
        meta = np.array(
            [
                problem.num_macros / 100.0,
                problem.num_nets / 1000.0,
                cfg.rows / 32.0,
                cfg.cols / 32.0,
                0.0,
                macro_area / (cfg.width_um * cfg.height_um),
            ]
        )
        return cls(problem, g, x, rows, meta)

    def metadata(self, t: int) -> np.ndarray:
        m = self.meta_static.copy()
        T = self.problem.num_macros
        m[4] = t / T if T else 1.0
        return m


def _embed_params(params: Params, dropout: float = 0.0) -> gnn.EmbedParams:
    return gnn.EmbedParams({k: params[k] for k in EMBED_KEYS}, dropout)


def embed(params: Params, ctx: InstanceContext) -> gnn.NodeEmbedding:
    return gnn.forward_embed(_embed_params(params), ctx.graph, ctx.features, train_mode=False)


def trunk_forward(params: Params, emb: gnn.NodeEmbedding, macro_rows: np.ndarray, meta: np.ndarray):
    """Batched forward of trunk and heads. Returns (logits, values, cache)."""
    b = len(macro_rows)
    inp = np.hstack([np.tile(emb.graph_embedding, (b, 1)), emb.vectors[macro_rows], meta.reshape(b, META_DIM)])
    z0 = inp @ params["fc0.w"] + params["fc0.b"]
    h0 = np.maximum(z0, 0.0)
    z1 = h0 @ params["fc1.w"] + params["fc1.b"]
    h1 = np.maximum(z1, 0.0)
    logits = h1 @ params["pi.w"] + params["pi.b"]
    values = (h1 @ params["v.w"] + params["v.b"])[:, 0]
    return logits, values, {"inp": inp, "z0": z0, "h0": h0, "z1": z1, "h1": h1}


def trunk_backward(params: Params, cache, d_logits: np.ndarray, d_values: np.ndarray, emb: gnn.NodeEmbedding, macro_rows: np.ndarray) -> Params:
    grads: Params = {}
    h1 = cache["h1"]
    grads["pi.w"] = h1.T @ d_logits
    grads["pi.b"] = d_logits.sum(axis=0)
    grads["v.w"] = h1.T @ d_values[:, None]
    grads["v.b"] = np.array([d_values.sum()])
    dh1 = d_logits @ params["pi.w"].T + d_values[:, None] @ params["v.w"].T
    dz1 = dh1 * (cache["z1"] > 0)
    grads["fc1.w"] = cache["h0"].T @ dz1
    grads["fc1.b"] = dz1.sum(axis=0)
    dz0 = (dz1 @ params["fc1.w"].T) * (cache["z0"] > 0)
    grads["fc0.w"] = cache["inp"].T @ dz0
    grads["fc0.b"] = dz0.sum(axis=0)
    d_inp = dz0 @ params["fc0.w"].T
    k = gnn.EMBED_DIM
    d_graph = d_inp[:, :k].sum(axis=0)
    d_nodes = np.zeros_like(emb.vectors)
    np.add.at(d_nodes, macro_rows, d_inp[:, k : 2 * k])
    grads.update(gnn.backward_embed(_embed_params(params), emb, d_nodes, d_graph))
    return grads


# ---------------------------------------------------------------- policy


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-probabilities restricted to legal cells; illegal cells get -inf."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise EmptyMaskError("no legal action")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    return z - lse


def masked_policy(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Action probabilities; masked cells are exactly zero."""
    return np.exp(masked_log_softmax(logits, mask))


def masked_entropy(logp: np.ndarray, mask: np.ndarray) -> np.ndarray:
    p = np.exp(logp)
    return -np.sum(np.where(mask, p * np.where(mask, logp, 0.0), 0.0), axis=-1)


def discounted_return(rewards, gamma: float) -> np.ndarray:
    """G_t = r_t + gamma * G_{t+1}, computed backwards."""
    r = np.asarray(rewards, dtype=float)
    out = np.zeros_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


def value_of(params: Params, ctx: InstanceContext, t: int, emb: gnn.NodeEmbedding | None = None) -> float:
    """Value-head estimate for the state about to place macro ``t``."""
    emb = emb if emb is not None else embed(params, ctx)
    t_row = min(t, len(ctx.macro_rows) - 1)
    _, v, _ = trunk_forward(params, emb, ctx.macro_rows[t_row : t_row + 1], ctx.metadata(t)[None, :])
    return float(v[0])


# ---------------------------------------------------------------- batches


@dataclass
class Trajectory:
    instance: int
    macro_rows: np.ndarray
    meta: np.ndarray
    masks: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    breakdown: RewardBreakdown
    seed: int

    @property
    def length(self) -> int:
        return len(self.actions)


@dataclass
class Batch:
    """Flattened steps from complete trajectories."""

    instance: np.ndarray
    macro_rows: np.ndarray
    meta: np.ndarray
    masks: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    values_old: np.ndarray
    returns: np.ndarray
    trajectories: list[Trajectory] = field(default_factory=list)
    failed: int = 0

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def from_trajectories(cls, trajs: list[Trajectory], gamma: float, num_actions: int, failed: int = 0) -> "Batch":
        if not trajs:
            return cls(
                np.zeros(0, int), np.zeros(0, int), np.zeros((0, META_DIM)), np.zeros((0, num_actions), bool),
                np.zeros(0, int), np.zeros(0), np.zeros(0), np.zeros(0), [], failed,
            )
        return cls(
            instance=np.concatenate([np.full(t.length, t.instance) for t in trajs]),
            macro_rows=np.concatenate([t.macro_rows for t in trajs]),
            meta=np.vstack([t.meta for t in trajs]),
            masks=np.vstack([t.masks for t in trajs]),
            actions=np.concatenate([t.actions for t in trajs]),
            logp_old=np.concatenate([t.logp for t in trajs]),
            values_old=np.concatenate([t.values for t in trajs]),
            returns=np.concatenate([discounted_return(t.rewards, gamma) for t in trajs]),
            trajectories=list(trajs),
            failed=failed,
        )

    def subset(self, idx: np.ndarray) -> "Batch":
        return Batch(
            self.instance[idx], self.macro_rows[idx], self.meta[idx], self.masks[idx], self.actions[idx],
            self.logp_old[idx], self.values_old[idx], self.returns[idx],
        )


# ---------------------------------------------------------------- losses


def loss_and_gradient(
    params: Params,
    contexts: list[InstanceContext],
    batch: Batch,
    cfg: TrainConfig,
    clip_eps: float | None = None,
    advantages: np.ndarray | None = None,
) -> tuple[float, Params, dict]:
    """Loss and exact gradient for a batch.

    Without ``clip_eps`` this is the combined actor-critic loss
    ``-sum A log pi(a|s) + beta sum (G - v)^2 - eta sum H`` with the
    advantage ``A = G - v`` held constant. With ``clip_eps`` the policy term
    becomes the clipped-ratio surrogate against ``batch.logp_old``, and the
    advantage is taken from the stored value estimates unless given.
    """
    grads = zeros_like(params)
    total = 0.0
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_frac": 0.0}
    n = len(batch)
    if n == 0:
        return 0.0, grads, stats
    for inst in np.unique(batch.instance):
        sel = np.flatnonzero(batch.instance == inst)
        ctx = contexts[int(inst)]
        emb = embed(params, ctx)
        rows = batch.macro_rows[sel]
        logits, values, cache = trunk_forward(params, emb, rows, batch.meta[sel])
        masks = batch.masks[sel]
        acts = batch.actions[sel]
        logp_all = masked_log_softmax(logits, masks)
        p = np.exp(logp_all)
        logp = logp_all[np.arange(len(sel)), acts]
        ent = masked_entropy(logp_all, masks)
        ret = batch.returns[sel]
        if advantages is not None:
            adv = advantages[sel]
        elif clip_eps is None:
            adv = ret - values
        else:
            adv = ret - batch.values_old[sel]
        onehot = np.zeros_like(p)
        onehot[np.arange(len(sel)), acts] = 1.0

        if clip_eps is None:
            pol = -np.sum(adv * logp)
            coef = adv
        else:
            ratio = np.exp(logp - batch.logp_old[sel])
            clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
            use_raw = ratio * adv <= clipped * adv
            pol = -np.sum(np.where(use_raw, ratio * adv, clipped * adv))
            coef = np.where(use_raw, ratio * adv, 0.0)
            stats["approx_kl"] += float(np.sum(batch.logp_old[sel] - logp))
            stats["clip_frac"] += float(np.sum(~use_raw))
        d_logits = -coef[:, None] * (onehot - p)

        err = ret - values
        val = cfg.value_coef * np.sum(err * err)
        d_values = -2.0 * cfg.value_coef * err

        ent_term = -cfg.entropy_coef * np.sum(ent)
        # d(-eta H)/dz_j = eta p_j (log p_j + H)
        safe_logp = np.where(masks, logp_all, 0.0)
        d_logits = d_logits + cfg.entropy_coef * np.where(masks, p * (safe_logp + ent[:, None]), 0.0)

        g = trunk_backward(params, cache, d_logits, d_values, emb, rows)
        for k, v in g.items():
            grads[k] += v
        total += pol + val + ent_term
        stats["policy_loss"] += float(pol)
        stats["value_loss"] += float(val)
        stats["entropy"] += float(np.sum(ent))
    if not np.isfinite(total):
        raise TrainingError(f"non-finite loss {total}: {stats}")
    stats["entropy"] /= n
    stats["approx_kl"] /= n
    stats["clip_frac"] /= n
    return float(total), grads, stats


def actor_critic_gradient(params: Params, contexts: list[InstanceContext], batch: Batch, cfg: TrainConfig) -> Params:
    return loss_and_gradient(params, contexts, batch, cfg)[1]


# ---------------------------------------------------------------- optimizer


@dataclass
class Optimizer:
    """Adam (or plain SGD) over a parameter dict."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kind: str = "adam"
    step_count: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "Optimizer":
        return cls(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.optimizer)

    def apply(self, params: Params, grads: Params) -> None:
        if self.lr == 0:
            self.step_count += 1
            return
        if self.kind == "sgd":
            for k, g in grads.items():
                params[k] -= self.lr * g
            self.step_count += 1
            return
        if not self.m:
            self.m = zeros_like(params)
            self.v = zeros_like(params)
        self.step_count += 1
        t = self.step_count
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = self.m[k] / (1 - self.beta1**t)
            vhat = self.v[k] / (1 - self.beta2**t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_by_global_norm(grads: Params, max_norm: float) -> tuple[Params, float]:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def ppo_update(
    params: Params,
    contexts: list[InstanceContext],
    batch: Batch,
    cfg: TrainConfig,
    opt: Optimizer,
    rng: np.random.Generator,
) -> dict:
    """Several epochs of shuffled minibatch steps on the clipped surrogate.

    ``params`` is updated in place. Returns mean loss components.
    """
    n = len(batch)
    totals = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_frac": 0.0, "grad_norm": 0.0}
    if n == 0:
        return totals
    steps = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = np.sort(perm[start : start + cfg.minibatch_size])
            mb = batch.subset(idx)
            _, grads, stats = loss_and_gradient(params, contexts, mb, cfg, clip_eps=cfg.clip_eps)
            grads, norm = clip_by_global_norm(grads, cfg.max_grad_norm)
            opt.apply(params, grads)
            for k in ("policy_loss", "value_loss"):
                totals[k] += stats[k] / len(mb)
            for k in ("entropy", "approx_kl", "clip_frac"):
                totals[k] += stats[k]
            totals["grad_norm"] += norm
            steps += 1
    return {k: v / steps for k, v in totals.items()}


# ---------------------------------------------------------------- rollouts


def run_episode(
    params: Params,
    ctx: InstanceContext,
    emb: gnn.NodeEmbedding,
    seed: int,
    instance: int = 0,
    greedy: bool = False,
) -> Trajectory:
    """Roll one episode with the masked policy.

    Raises :class:`EmptyMaskError` on a dead end.
    """
    env = PlacementEnv(ctx.problem.clustered, ctx.problem.cfg, problem=ctx.problem)
    rng = np.random.default_rng(seed)
    s = env.reset()
    T = env.num_steps
    n_act = ctx.problem.cfg.num_cells
    metas = np.zeros((T, META_DIM))
    masks = np.zeros((T, n_act), dtype=bool)
    actions = np.zeros(T, dtype=int)
    logps = np.zeros(T)
    values = np.zeros(T)
    rewards = np.zeros(T)
    breakdown = None
    while not s.done:
        t = s.t
        mask = env.legal_mask()
        meta = ctx.metadata(t)
        logits, v, _ = trunk_forward(params, emb, ctx.macro_rows[t : t + 1], meta[None, :])
        logp = masked_log_softmax(logits, mask[None, :])[0]
        if greedy:
            a = int(np.argmax(np.where(mask, logp, -np.inf)))
        else:
            p = np.exp(logp)
            a = int(rng.choice(n_act, p=p / p.sum()))
        s, rb, done = env.step(a)
        metas[t], masks[t], actions[t], logps[t], values[t] = meta, mask, a, logp[a], v[0]
        rewards[t] = rb.reward
        breakdown = rb
    if breakdown is None:
        breakdown = RewardBreakdown(0.0, 0.0, 0.0, 0.0)
    return Trajectory(instance, ctx.macro_rows[:T].copy(), metas, masks, actions, logps, values, rewards, breakdown, seed)


def episode_seeds(seed: int, episodes: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(episodes)]


def collect_rollouts(
    params: Params,
    contexts: list[InstanceContext],
    episodes: int,
    seed: int,
    cfg: TrainConfig | None = None,
    workers: int = 1,
    greedy: bool = False,
) -> Batch:
    """Sample ``episodes`` complete trajectories, cycling over instances.

    Episodes run on a read-only snapshot of ``params``; the result does not
    depend on ``workers``.
    """
    cfg = cfg or TrainConfig()
    n_act = contexts[0].problem.cfg.num_cells if contexts else 0
    if episodes == 0:
        return Batch.from_trajectories([], cfg.gamma, n_act)
    snapshot = {k: v.copy() for k, v in params.items()}
    for ctx in contexts:
        if ctx.problem.cfg.reward_mode.value == "baseline":
            ctx.problem.baseline_hpwl()
    embs = [embed(snapshot, ctx) for ctx in contexts]
    seeds = episode_seeds(seed, episodes)

    def job(i):
        inst = i % len(contexts)
        try:
            return run_episode(snapshot, contexts[inst], embs[inst], seeds[i], inst, greedy)
        except EmptyMaskError:
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(episodes)))
    else:
        results = [job(i) for i in range(episodes)]
    trajs = [r for r in results if r is not None]
    return Batch.from_trajectories(trajs, cfg.gamma, n_act, failed=len(results) - len(trajs))


# ---------------------------------------------------------------- training

METRICS_HEADER = (
    "iteration",
    "mean_reward",
    "mean_hpwl_um",
    "mean_congestion",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
    "clip_frac",
    "learning_rate",
    "failed_episodes",
)


def config_hash(canvas: CanvasConfig, cfg: TrainConfig, names: list[str]) -> str:
    doc = {"canvas": {k: (v.value if hasattr(v, "value") else v) for k, v in asdict(canvas).items()}, "train": cfg.hash_fields(), "netlists": names}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


@dataclass
class TrainResult:
    params: Params
    optimizer: Optimizer
    iteration: int
    metrics: list[dict]
    config_hash: str


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def train(
    netlists: list[ClusteredNetlist],
    canvas: CanvasConfig,
    cfg: TrainConfig,
    workers: int = 1,
    metrics_path: str | os.PathLike | None = None,
    checkpoint_path: str | os.PathLike | None = None,
    resume: str | os.PathLike | None = None,
) -> TrainResult:
    """Alternate rollout collection and PPO updates for ``cfg.iterations`` iterations."""
    from rlplace import checkpoint

    if not netlists:
        raise ValueError("train needs at least one netlist")
    problems = [PlacementProblem(n, canvas) for n in netlists]
    contexts = [InstanceContext.build(p) for p in problems]
    chash = config_hash(canvas, cfg, [n.name for n in netlists])
    params, _ = init_params(cfg.seed, canvas.num_cells, cfg.dropout)
    opt = Optimizer.from_config(cfg)
    start = 0
    if resume is not None:
        ck = checkpoint.load(resume)
        if ck.config_hash != chash:
            raise checkpoint.CheckpointError(f"checkpoint {resume} was written for a different configuration")
        params, opt, start = ck.params, ck.optimizer, ck.iteration

    metrics: list[dict] = []
    writer = None
    fh = None
    if metrics_path is not None:
        fresh = start == 0 or not os.path.exists(metrics_path)
        fh = open(metrics_path, "w" if fresh else "a", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(METRICS_HEADER)
    try:
        for it in range(start, cfg.iterations):
            it_seed = np.random.SeedSequence([cfg.seed, it])
            roll_seed, upd_seed = (int(s.generate_state(1)[0]) for s in it_seed.spawn(2))
            batch = collect_rollouts(params, contexts, cfg.episodes_per_iteration, roll_seed, cfg, workers)
            stats = ppo_update(params, contexts, batch, cfg, opt, np.random.default_rng(upd_seed))
            trajs = batch.trajectories
            row = {
                "iteration": it + 1,
                "mean_reward": float(np.mean([t.breakdown.reward for t in trajs])) if trajs else 0.0,
                "mean_hpwl_um": float(np.mean([t.breakdown.hpwl_um for t in trajs])) if trajs else 0.0,
                "mean_congestion": float(np.mean([t.breakdown.congestion for t in trajs])) if trajs else 0.0,
                "policy_loss": stats["policy_loss"],
                "value_loss": stats["value_loss"],
                "entropy": stats["entropy"],
                "approx_kl": stats["approx_kl"],
                "clip_frac": stats["clip_frac"],
                "learning_rate": opt.lr,
                "failed_episodes": batch.failed,
            }
            metrics.append(row)
            if writer is not None:
                writer.writerow([_fmt(row[k]) for k in METRICS_HEADER])
                fh.flush()
            log.info("iter %d reward %.4f hpwl %.1f entropy %.3f", it + 1, row["mean_reward"], row["mean_hpwl_um"], row["entropy"])
            if checkpoint_path is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                checkpoint.save(checkpoint_path, checkpoint.Checkpoint(params, opt, it + 1, chash))
            start = it + 1
    finally:
        if fh is not None:
            fh.close()
        if checkpoint_path is not None:
            checkpoint.save(checkpoint_path, checkpoint.Checkpoint(params, opt, start, chash))
    return TrainResult(params, opt, start, metrics, chash)


def greedy_placement(params: Params, problem: PlacementProblem, seed: int = 0, fallback_tries: int = 32):
    """Deterministic argmax rollout; returns the scored :class:`Placement`.

    If the argmax path runs into a dead end, seeded sampled rollouts are
    tried instead (up to ``fallback_tries``) and the first complete one wins.
    """
    ctx = InstanceContext.build(problem)
    emb = embed(params, ctx)
    try:
        traj = run_episode(params, ctx, emb, seed, greedy=True)
    except EmptyMaskError:
        traj = None
        for s in episode_seeds(seed, fallback_tries):
            try:
                traj = run_episode(params, ctx, emb, s)
                break
            except EmptyMaskError:
                continue
        if traj is None:
            raise EmptyMaskError(f"no complete placement found in {fallback_tries} sampled rollouts")
        log.warning("greedy rollout hit a dead end; using a sampled rollout (seed %d)", traj.seed)
    cells = {m: int(a) for m, a in zip(problem.order, traj.actions)}
    return problem.evaluate(cells)
