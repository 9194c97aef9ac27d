import itertools

import numpy as np
import pytest

from rlplace.baselines import (
    InstanceTooLargeError,
    Schedule,
    exhaustive_place,
    placement_cost,
    random_place,
    sa_place,
    search_space_size,
)
from rlplace.env import CanvasConfig, PlacementProblem
from rlplace.netlist import cluster_stdcells, generate_synthetic


def tiny_problem(seed, macros=3, rows=2, cols=3, **kw):
    n = generate_synthetic(seed, macros, 6, 6, macro_size_range=(3, 9))
    cfg = CanvasConfig(rows=rows, cols=cols, cell_w_um=10.0, cell_h_um=10.0, **kw)
    return PlacementProblem(cluster_stdcells(n, 2), cfg)


def enumerate_costs(problem):
    """Score every injective assignment that the masks allow."""
    out = []
    for cells in itertools.permutations(range(problem.cfg.num_cells), problem.num_macros):
        taken = np.zeros((problem.cfg.rows, problem.cfg.cols))
        occ = np.zeros_like(taken)
        ok = True
        for pos, cell in enumerate(cells):
            if not problem.legal_mask(pos, taken, occ)[cell]:
                ok = False
                break
            problem.stamp(pos, cell, taken, occ)
        if ok:
            out.append((placement_cost(problem.evaluate(list(cells)), problem), cells))
    return out


def test_random_place_is_seeded():
    p = tiny_problem(0)
    assert random_place(p, 3).macro_cells == random_place(p, 3).macro_cells
    cells = {tuple(sorted(random_place(p, s).macro_cells.items())) for s in range(20)}
    assert len(cells) > 1


def test_random_place_is_uniform_over_legal_cells():
    n = generate_synthetic(0, 1, 0, 1, macro_size_range=(3, 5))
    p = PlacementProblem(cluster_stdcells(n, 1), CanvasConfig(rows=4, cols=4, reward_mode="literal"))
    draws = 3200
    counts = np.zeros(16)
    for s in range(draws):
        counts[p.random_assignment(np.random.default_rng(s))[0]] += 1
    expected = draws / 16
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert chi2 < 37.7  # 15 degrees of freedom, p = 0.001


def test_sa_with_zero_steps_returns_initial_placement():
    p = tiny_problem(1)
    res = sa_place(p, Schedule(steps=0), seed=4)
    assert res.cost == res.initial_cost
    assert res.accepted == [res.initial_cost]


def test_sa_at_zero_temperature_only_accepts_improvements():
    p = tiny_problem(2, macros=4)
    res = sa_place(p, Schedule(t0=0.0, steps=500), seed=0)
    assert all(b < a for a, b in zip(res.accepted, res.accepted[1:]))
    assert res.cost == min(res.accepted)


def test_sa_is_deterministic():
    p = tiny_problem(3)
    a = sa_place(p, Schedule(steps=300), seed=9)
    b = sa_place(p, Schedule(steps=300), seed=9)
    assert a.accepted == b.accepted and a.placement.macro_cells == b.placement.macro_cells


def test_sa_never_worse_than_its_start():
    p = tiny_problem(4)
    res = sa_place(p, Schedule(steps=300), seed=1)
    assert res.cost <= res.initial_cost
    assert res.cost == pytest.approx(placement_cost(res.placement, p))


@pytest.mark.parametrize("seed", range(3))
def test_exhaustive_matches_enumeration(seed):
    p = tiny_problem(seed)
    best, cost = exhaustive_place(p)
    costs = enumerate_costs(p)
    want_cost, want_cells = min(costs, key=lambda c: (c[0], c[1]))
    assert cost == want_cost
    assert [best.macro_cells[m] for m in p.order] == [divmod(c, p.cfg.cols) for c in want_cells]


def test_exhaustive_guard():
    p = tiny_problem(0, macros=3, rows=8, cols=8)
    assert search_space_size(p) == 64 * 63 * 62
    with pytest.raises(InstanceTooLargeError):
        exhaustive_place(p, limit=1000)
