"""Command-line interface: ``rlplace <subcommand> [options]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from rlplace import agent, baselines, checkpoint, gnn
from rlplace.env import CanvasConfig, PlacementProblem, RewardMode
from rlplace.estimators import make_problem
from rlplace.graph import ConvergenceError, build_graph, extract_features
from rlplace.netlist import NetlistError, cluster_stdcells, generate_synthetic, load_netlist, write_netlist
from rlplace.render import render_svg

log = logging.getLogger("rlplace")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    netlist: str | None = None
    checkpoint: str | None = None
    out: str | None = None
    metrics: str | None = None
    render: str | None = None
    placement: str | None = None
    grid: str = "16x16"
    reward_mode: str = "baseline"
    congestion_weight: float = 1.0
    density_cap: float = 1.0
    utilization: float = 0.5
    clusters: int = 16
    workers: int = 1
    iterations: int = 100
    episodes: int = 8
    learning_rate: float = 3e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    gamma: float = 1.0
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch_size: int = 64
    checkpoint_every: int = 50
    sa_steps: int = 20_000
    random_seeds: int = 100
    show_nets: bool = False
    macros: int = 20
    stdcells: int = 200
    nets: int = 150
    ff_fraction: float = 0.1
    ports: int = 0

    @property
    def rows_cols(self) -> tuple[int, int]:
        try:
            r, c = self.grid.lower().split("x")
            return int(r), int(c)
        except ValueError as exc:
            raise ConfigError(f"--grid must look like RxC, got {self.grid!r}") from exc

    def validate(self) -> None:
        self.rows_cols
        if self.reward_mode not in ("literal", "baseline"):
            raise ConfigError(f"reward_mode must be literal or baseline, got {self.reward_mode!r}")
        for name in ("workers", "clusters", "epochs", "minibatch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("iterations", "episodes", "sa_steps", "random_seeds", "macros", "stdcells", "nets", "ports"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    def canvas_kwargs(self) -> dict:
        return {
            "reward_mode": RewardMode(self.reward_mode),
            "congestion_weight": self.congestion_weight,
            "density_cap": self.density_cap,
        }

    def train_config(self) -> agent.TrainConfig:
        return agent.TrainConfig(
            gamma=self.gamma, value_coef=self.value_coef, entropy_coef=self.entropy_coef, clip_eps=self.clip_eps,
            epochs=self.epochs, minibatch_size=self.minibatch_size, learning_rate=self.learning_rate,
            episodes_per_iteration=self.episodes, iterations=self.iterations, checkpoint_every=self.checkpoint_every,
            seed=self.seed,
        )


_FLAG_KEYS = {f.name for f in fields(RunConfig)}


def load_config(path: str | None, overrides: dict) -> RunConfig:
    data = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        unknown = sorted(set(data) - _FLAG_KEYS)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {unknown}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def _load_netlist(cfg: RunConfig):
    if not cfg.netlist:
        raise ConfigError("--netlist is required")
    if not os.path.exists(cfg.netlist):
        raise ConfigError(f"netlist file not found: {cfg.netlist}")
    return load_netlist(cfg.netlist)


def _problem(cfg: RunConfig, netlist=None) -> PlacementProblem:
    netlist = netlist if netlist is not None else _load_netlist(cfg)
    rows, cols = cfg.rows_cols
    return make_problem(netlist, rows, cols, cfg.clusters, cfg.utilization, cfg.seed, **cfg.canvas_kwargs())


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_checkpoint(path: str | None):
    if not path:
        raise ConfigError("--checkpoint is required")
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint file not found: {path}")
    return checkpoint.load(path)


def canvas_to_dict(cfg: CanvasConfig) -> dict:
    d = asdict(cfg)
    d["reward_mode"] = cfg.reward_mode.value
    return d


def placement_document(problem: PlacementProblem, placement, clusters: int, seed: int) -> dict:
    doc = {"netlist": problem.clustered.name, "canvas": canvas_to_dict(problem.cfg), "cluster_target": clusters, "cluster_seed": seed}
    doc.update(placement.to_dict())
    return doc


# ---------------------------------------------------------------- commands


def cmd_gen(cfg: RunConfig) -> int:
    n = generate_synthetic(cfg.seed, cfg.macros, cfg.stdcells, cfg.nets, cfg.ff_fraction, n_ports=cfg.ports)
    _emit(write_netlist(n), cfg.out)
    return 0


def cmd_features(cfg: RunConfig) -> int:
    fv = extract_features(_load_netlist(cfg))
    _emit(json.dumps(fv.to_dict(), indent=2) + "\n", cfg.out)
    return 0


def cmd_embed(cfg: RunConfig) -> int:
    netlist = _load_netlist(cfg)
    if cfg.checkpoint:
        ck = _load_checkpoint(cfg.checkpoint)
        params = gnn.EmbedParams({k: ck.params[k] for k in agent.EMBED_KEYS})
    else:
        params = gnn.init_embed_params(cfg.seed)
    g = build_graph(netlist)
    emb = gnn.forward_embed(params, g, gnn.node_features(netlist, g))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node_id"] + [f"e{i}" for i in range(emb.vectors.shape[1])])
    for nid, row in zip(emb.node_ids, emb.vectors):
        w.writerow([int(nid)] + [repr(float(v)) for v in row])
    _emit(buf.getvalue(), cfg.out)
    return 0


def cmd_train(cfg: RunConfig) -> int:
    problem = _problem(cfg)
    ck_out = cfg.out or cfg.checkpoint
    # --checkpoint resumes when it exists; output goes to --out, else back to --checkpoint
    resume = cfg.checkpoint if cfg.checkpoint and os.path.exists(cfg.checkpoint) else None
    res = agent.train(
        [problem.clustered], problem.cfg, cfg.train_config(), workers=cfg.workers,
        metrics_path=cfg.metrics, checkpoint_path=ck_out, resume=resume,
    )
    last = res.metrics[-1] if res.metrics else {}
    log.info("trained to iteration %d; last mean reward %s", res.iteration, last.get("mean_reward"))
    return 0


def cmd_place(cfg: RunConfig) -> int:
    problem = _problem(cfg)
    ck = _load_checkpoint(cfg.checkpoint)
    placement = agent.greedy_placement(ck.params, problem, cfg.seed)
    _emit(json.dumps(placement_document(problem, placement, cfg.clusters, cfg.seed), indent=2) + "\n", cfg.out)
    if cfg.render:
        _emit(render_svg(placement, problem, cfg.show_nets), cfg.render)
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    if not cfg.placement or not os.path.exists(cfg.placement):
        raise ConfigError(f"placement file not found: {cfg.placement}")
    with open(cfg.placement, encoding="utf-8") as fh:
        doc = json.load(fh)
    netlist = _load_netlist(cfg)
    canvas = CanvasConfig(**doc["canvas"])
    clustered = cluster_stdcells(netlist, int(doc["cluster_target"]), seed=int(doc["cluster_seed"]))
    problem = PlacementProblem(clustered, canvas)
    cells = {m["id"]: m["row"] * canvas.cols + m["col"] for m in doc["macros"]}
    if sorted(cells) != sorted(problem.order):
        raise ConfigError(f"{cfg.placement}: macro ids do not match the netlist")
    placement = problem.evaluate(cells)
    recorded = doc["reward"]
    fresh = placement.breakdown.to_dict()
    matches = all(abs(fresh[k] - recorded[k]) <= 1e-9 for k in ("hpwl_um", "congestion", "density_peak", "reward"))
    out = dict(fresh, matches_recorded=matches)
    _emit(json.dumps(out, indent=2) + "\n", cfg.out)
    if cfg.render:
        _emit(render_svg(placement, problem, cfg.show_nets), cfg.render)
    return 0 if matches else 2


COMPARE_HEADER = ("method", "hpwl_um", "congestion", "reward", "wall_time_s")


def cmd_compare(cfg: RunConfig) -> int:
    problem = _problem(cfg)
    rows = []

    t = time.perf_counter()
    randoms = [baselines.random_place(problem, s) for s in range(cfg.random_seeds)]
    if randoms:
        hp = [p.breakdown.hpwl_um for p in randoms]
        median = randoms[int(np.argsort(hp)[len(hp) // 2])]
        rows.append(("random", median.breakdown, time.perf_counter() - t))

    t = time.perf_counter()
    sa = baselines.sa_place(problem, baselines.Schedule(steps=cfg.sa_steps), cfg.seed)
    rows.append(("sa", sa.placement.breakdown, time.perf_counter() - t))

    t = time.perf_counter()
    if cfg.checkpoint and os.path.exists(cfg.checkpoint):
        params = checkpoint.load(cfg.checkpoint).params
    else:
        params = agent.train([problem.clustered], problem.cfg, cfg.train_config(), workers=cfg.workers).params
    rl = agent.greedy_placement(params, problem, cfg.seed)
    rows.append(("rl", rl.breakdown, time.perf_counter() - t))

    if baselines.search_space_size(problem) <= baselines.EXHAUSTIVE_LIMIT:
        t = time.perf_counter()
        best, _ = baselines.exhaustive_place(problem)
        rows.append(("exhaustive", best.breakdown, time.perf_counter() - t))
    else:
        log.warning("exhaustive search skipped: instance exceeds the %d-assignment guard", baselines.EXHAUSTIVE_LIMIT)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_HEADER)
    for name, b, secs in rows:
        w.writerow([name, repr(b.hpwl_um), repr(b.congestion), repr(b.reward), f"{secs:.3f}"])
    _emit(buf.getvalue(), cfg.out)
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "features": cmd_features,
    "embed": cmd_embed,
    "train": cmd_train,
    "place": cmd_place,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--netlist")
    common.add_argument("--checkpoint")
    common.add_argument("--out")
    common.add_argument("--grid", help="RxC, e.g. 16x16")
    common.add_argument("--reward-mode", dest="reward_mode", choices=["literal", "baseline"])
    common.add_argument("--workers", type=int)
    common.add_argument("--iterations", type=int)
    common.add_argument("--episodes", type=int)
    common.add_argument("--clusters", type=int)
    common.add_argument("--metrics")
    common.add_argument("--render", help="write an SVG of the placement here")
    common.add_argument("--show-nets", dest="show_nets", action="store_true", default=None)

    p = argparse.ArgumentParser(prog="rlplace", description="RL macro placement toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("gen", parents=[common], help="write a synthetic netlist")
    gen.add_argument("--macros", type=int)
    gen.add_argument("--stdcells", type=int)
    gen.add_argument("--nets", type=int)
    gen.add_argument("--ff-fraction", dest="ff_fraction", type=float)
    gen.add_argument("--ports", type=int)
    sub.add_parser("features", parents=[common], help="graph features of a netlist")
    sub.add_parser("embed", parents=[common], help="node embeddings as CSV")
    tr = sub.add_parser("train", parents=[common], help="train the placement policy")
    tr.add_argument("--learning-rate", dest="learning_rate", type=float)
    sub.add_parser("place", parents=[common], help="greedy placement with a trained policy")
    ev = sub.add_parser("eval", parents=[common], help="recompute the metrics of a placement file")
    ev.add_argument("--placement")
    cmp_ = sub.add_parser("compare", parents=[common], help="random / SA / RL / exhaustive table")
    cmp_.add_argument("--sa-steps", dest="sa_steps", type=int)
    cmp_.add_argument("--random-seeds", dest="random_seeds", type=int)
    return p


def _setup_logging() -> None:
    level = os.environ.get("RLPLACE_LOG", "warn").lower()
    levels = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING, "warning": logging.WARNING}
    logging.basicConfig(level=levels.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k in _FLAG_KEYS}
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except (ConfigError, NetlistError, checkpoint.CheckpointError, baselines.InstanceTooLargeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, agent.TrainingError, RuntimeError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
