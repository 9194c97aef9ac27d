"""Acceptance suite. Each test prints one PASS/FAIL line and then asserts."""

import math
import time

import numpy as np
import pytest

from helpers import (
    cc_bruteforce,
    graph_netlist,
    hpwl_bruteforce,
    laplacian_spectrum,
    logic_levels_bruteforce,
    random_edges,
    rich_club_bruteforce,
)
from rlplace import agent
from rlplace.baselines import Schedule, exhaustive_place, random_place, sa_place
from rlplace.cli import main
from rlplace.env import (
    CanvasConfig,
    IllegalActionError,
    PlacementEnv,
    PlacementProblem,
    canvas_for,
    compose_reward,
    force_directed_refine,
    hpwl,
)
from rlplace.graph import build_graph, clustering_coefficient, logic_levels, rich_club, spectral_summary
from rlplace.netlist import cluster_stdcells, generate_synthetic


@pytest.fixture()
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")

    return emit


def test_01_spectral_oracle(report):
    worst, elapsed = 0.0, 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 65))
        edges = set(random_edges(rng, n, float(rng.uniform(0.05, 0.5))))
        g = build_graph(graph_netlist(n, sorted(edges)))
        t = time.perf_counter()
        s = spectral_summary(g)
        elapsed += time.perf_counter() - t
        ev = laplacian_spectrum(n, edges)
        worst = max(worst, abs(s.fiedler_value - ev[1]), abs(s.spectral_radius - ev[-1]))
    ok = worst <= 1e-6 and elapsed < 5.0
    report(1, ok, f"max abs error {worst:.2e}, solver time {elapsed:.2f} s over 50 graphs")
    assert ok


def test_02_metric_oracles(report):
    mismatches = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 31))
        edges = random_edges(rng, n, float(rng.uniform(0.05, 0.3)))
        ff = tuple(int(v) for v in rng.choice(n, size=int(rng.integers(0, n // 2 + 1)), replace=False))
        net = graph_netlist(n, edges, ff=ff)
        g = build_graph(net)
        es = set(edges)
        if clustering_coefficient(g) - cc_bruteforce(n, es) != pytest.approx(0, abs=1e-12):
            mismatches.append((seed, "clustering"))
        for k in range(0, 6):
            if rich_club(g, k) - rich_club_bruteforce(n, es, k) != pytest.approx(0, abs=1e-12):
                mismatches.append((seed, f"rich_club k={k}"))
        if logic_levels(g) != logic_levels_bruteforce(net):
            mismatches.append((seed, "logic_levels"))
        nets = [rng.uniform(0, 100, size=(int(rng.integers(1, 6)), 2)) for _ in range(int(rng.integers(1, n + 1)))]
        xy = np.vstack(nets)
        ids = np.concatenate([np.full(len(p), k) for k, p in enumerate(nets)])
        if abs(hpwl(xy, ids, len(nets)) - hpwl_bruteforce(nets)) > 1e-12:
            mismatches.append((seed, "hpwl"))
    ok = not mismatches
    report(2, ok, f"{len(mismatches)} mismatches over 100 instances {mismatches[:5]}")
    assert ok


def _full_fd_rel_error(params, loss_fn, grads, h=1e-6):
    num, den = 0.0, 0.0
    for k, w in params.items():
        flat = w.reshape(-1)
        gk = grads[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn()
            flat[i] = orig - h
            fm = loss_fn()
            flat[i] = orig
            d = (fp - fm) / (2 * h)
            num += (gk[i] - d) ** 2
            den += d * d
    return math.sqrt(num) / max(math.sqrt(den), 1e-300)


@pytest.mark.slow
def test_03_gradient_correctness(report):
    errors = []
    for seed in range(5):
        macros = 2 + seed % 5
        n = generate_synthetic(seed, macros, 10, 8, ff_fraction=0.2, macro_size_range=(4, 9))
        ctx = agent.InstanceContext.build(PlacementProblem(cluster_stdcells(n, 3), CanvasConfig(rows=4, cols=4)))
        cfg = agent.TrainConfig(entropy_coef=0.05)
        params, _ = agent.init_params(seed, 16)
        # perturb so no parameter sits exactly at a symmetric initial value
        rng = np.random.default_rng(seed)
        for k in params:
            params[k] = params[k] + 0.01 * rng.standard_normal(params[k].shape)
        batch = agent.collect_rollouts(params, [ctx], 2, seed, cfg)
        batch.returns = batch.returns + rng.normal(size=len(batch))
        adv = batch.returns - batch.values_old
        _, grads, _ = agent.loss_and_gradient(params, [ctx], batch, cfg, advantages=adv)
        errors.append(_full_fd_rel_error(params, lambda: agent.loss_and_gradient(params, [ctx], batch, cfg, advantages=adv)[0], grads))
    ok = len(errors) >= 5 and max(errors) <= 1e-4
    report(3, ok, f"relative errors {[f'{e:.1e}' for e in errors]} on {len(errors)} instances")
    assert ok


@pytest.mark.slow
def test_04_mask_and_overlap_safety(report):
    episodes = overlaps = out_of_bounds = nonzero = 0
    for inst in range(20):
        rng = np.random.default_rng(inst)
        rows, cols = int(rng.integers(4, 9)), int(rng.integers(4, 9))
        n = generate_synthetic(inst, int(rng.integers(2, 8)), 6, 6, macro_size_range=(5, 25))
        cfg = CanvasConfig(rows=rows, cols=cols, reward_mode="literal", refine_iters=20)
        env = PlacementEnv(cluster_stdcells(n, 2), cfg)
        for _ in range(500):
            s = env.reset()
            grid = np.zeros((rows, cols), dtype=int)
            while not s.done:
                legal = np.flatnonzero(env.legal_mask())
                if len(legal) == 0:
                    break
                if rng.random() < 0.1:
                    bad = np.concatenate([np.flatnonzero(~env.legal_mask()), [-1, rows * cols]])
                    try:
                        env.step(int(rng.choice(bad)))
                        out_of_bounds += 1  # an illegal action was accepted
                    except IllegalActionError:
                        pass
                a = int(rng.choice(legal))
                fh, fw = env.problem.footprints[s.t].shape
                r, c = divmod(a, cols)
                if r < 0 or c < 0 or r + fh > rows or c + fw > cols:
                    out_of_bounds += 1
                else:
                    grid[r : r + fh, c : c + fw] += 1
                s, rb, done = env.step(a)
                if not done and rb.reward != 0.0:
                    nonzero += 1
            overlaps += int((grid > 1).any())
            episodes += 1
    ok = episodes >= 10_000 and overlaps == 0 and out_of_bounds == 0 and nonzero == 0
    report(4, ok, f"{episodes} episodes, {overlaps} overlaps, {out_of_bounds} out of bounds, {nonzero} nonzero intermediate rewards")
    assert ok


def test_05_ppo_reduction(report):
    sims = []
    for seed in range(3):
        n = generate_synthetic(seed, 4, 12, 10, macro_size_range=(4, 9))
        ctx = agent.InstanceContext.build(PlacementProblem(cluster_stdcells(n, 3), CanvasConfig(rows=4, cols=4)))
        cfg = agent.TrainConfig(clip_eps=1e12, epochs=1, minibatch_size=10**6, optimizer="sgd", learning_rate=1e-3, max_grad_norm=0.0)
        params, _ = agent.init_params(seed, 16)
        batch = agent.collect_rollouts(params, [ctx], 6, seed, cfg)
        g = agent.flatten(agent.actor_critic_gradient(params, [ctx], batch, cfg))
        before = {k: v.copy() for k, v in params.items()}
        agent.ppo_update(params, [ctx], batch, cfg, agent.Optimizer.from_config(cfg), np.random.default_rng(0))
        step = agent.flatten({k: before[k] - params[k] for k in params})
        sims.append(float(step @ g / (np.linalg.norm(step) * np.linalg.norm(g))))
    ok = min(sims) >= 0.999
    report(5, ok, f"cosine similarities {[round(s, 6) for s in sims]}")
    assert ok


@pytest.mark.slow
def test_06_learning_signal(report):
    n = generate_synthetic(11, 20, 200, 150, 0.1)
    clustered = cluster_stdcells(n, 16)
    canvas = canvas_for(clustered, 16, 16)
    problem = PlacementProblem(clustered, canvas)
    random_median = float(np.median([random_place(problem, s).breakdown.hpwl_um for s in range(100)]))
    t = time.perf_counter()
    res = agent.train([clustered], canvas, agent.TrainConfig(iterations=500, episodes_per_iteration=8, seed=0))
    elapsed = time.perf_counter() - t
    greedy = [agent.greedy_placement(res.params, problem, seed=s).breakdown.hpwl_um for s in range(10)]
    greedy_median = float(np.median(greedy))
    ratio = greedy_median / random_median
    ok = greedy_median < random_median and ratio <= 0.95 and elapsed <= 1800
    report(6, ok, f"greedy median {greedy_median:.1f} um vs random median {random_median:.1f} um (ratio {ratio:.3f}), train {elapsed:.0f} s")
    assert ok


@pytest.mark.slow
def test_07_sa_optimality(report):
    hits, slowest = 0, 0.0
    for seed in range(20):
        rows, cols = (2, 3) if seed % 2 == 0 else (3, 2)
        n = generate_synthetic(seed, 2 + seed % 3, 8, 8, macro_size_range=(3, 9), n_ports=2)
        problem = PlacementProblem(cluster_stdcells(n, 2), CanvasConfig(rows=rows, cols=cols))
        t = time.perf_counter()
        _, best = exhaustive_place(problem)
        slowest = max(slowest, time.perf_counter() - t)
        sa = sa_place(problem, Schedule(steps=20_000), seed=seed)
        hits += int(sa.cost <= best + 1e-9 * max(1.0, abs(best)))
    ok = hits >= 18 and slowest < 10.0
    report(7, ok, f"SA optimal in {hits}/20, slowest exhaustive {slowest:.2f} s")
    assert ok


def test_08_force_directed(report):
    violations = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        k, a = int(rng.integers(1, 10)), int(rng.integers(1, 8))
        w = np.triu(rng.integers(0, 4, size=(k + a, k + a)).astype(float), 1)
        w[k:, k:] = 0
        w = w + w.T
        res = force_directed_refine(rng.uniform(0, 100, size=(a, 2)), w, np.full((k, 2), 50.0), (100.0, 100.0), iters=200, tol=1e-9)
        violations += int(np.any(np.diff(res.objective) > 1e-12 * max(1.0, res.objective[0])))
    anchors = np.array([[0.0, 0.0], [10.0, 10.0]])
    w = np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]], dtype=float)
    mid = force_directed_refine(anchors, w, np.array([[1.0, 9.0]]), (10.0, 10.0), iters=1000, tol=1e-12).xy[0]
    err = float(np.abs(mid - [5.0, 5.0]).max())
    ok = violations == 0 and err <= 1e-6
    report(8, ok, f"{violations} objective increases over 100 refinements, midpoint error {err:.1e}")
    assert ok


def test_09_determinism_across_workers(report, tmp_path):
    net = tmp_path / "n.json"
    assert main(["gen", "--seed", "3", "--macros", "5", "--stdcells", "30", "--nets", "25", "--out", str(net)]) == 0
    outputs = []
    for run, workers in enumerate((1, 1, 4)):
        metrics = tmp_path / f"m{run}.csv"
        args = ["train", "--netlist", str(net), "--grid", "6x6", "--clusters", "4", "--iterations", "4",
                "--episodes", "6", "--seed", "7", "--workers", str(workers), "--metrics", str(metrics)]
        assert main(args) == 0
        outputs.append(metrics.read_bytes())
    ok = outputs[0] == outputs[1] == outputs[2]
    report(9, ok, "metrics files byte-identical for workers 1, 1, 4" if ok else "metrics files differ")
    assert ok


def test_10_literal_reward_degenerate_case(report):
    values = []
    rng = np.random.default_rng(0)
    cfg = CanvasConfig(reward_mode="literal", congestion_weight=1.0)
    values += [compose_reward(float(h), 0.0, cfg) for h in rng.uniform(1e-3, 1e6, size=200)]
    for seed in range(10):
        n = generate_synthetic(seed, 5, 30, 25, n_ports=2)
        c = cluster_stdcells(n, 4)
        problem = PlacementProblem(c, canvas_for(c, 8, 8, reward_mode="literal", congestion_weight=0.0))
        values += [random_place(problem, s).breakdown.reward for s in range(5)]
    ok = all(v == -1.0 for v in values)
    report(10, ok, f"{sum(v == -1.0 for v in values)}/{len(values)} rewards exactly -1.0")
    assert ok
