"""Reference placers: uniform random, simulated annealing and exhaustive search.

They share :meth:`PlacementProblem.evaluate` with the RL environment, so
every method is scored by the same refinement + HPWL + congestion code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rlplace.env import Placement, PlacementProblem

EXHAUSTIVE_LIMIT = 10**7


class InstanceTooLargeError(ValueError):
    pass


def placement_cost(placement: Placement, problem: PlacementProblem) -> float:
    b = placement.breakdown
    return b.hpwl_um + problem.cfg.congestion_weight * b.congestion


def random_place(problem: PlacementProblem, seed: int) -> Placement:
    """Each macro, in environment order, takes a uniformly random legal cell."""
    cells = problem.random_assignment(np.random.default_rng(seed))
    return problem.evaluate(cells)


@dataclass(frozen=True)
class Schedule:
    t0: float | None = None  # None: 10% of the initial cost
    alpha: float = 0.995
    steps: int = 20_000


@dataclass
class SAResult:
    placement: Placement
    cost: float
    accepted: list[float]
    initial_cost: float


def _occupancy(problem: PlacementProblem, cells: list[int], skip: tuple[int, ...] = ()):
    rows, cols = problem.cfg.rows, problem.cfg.cols
    taken = np.zeros((rows, cols))
    occ = np.zeros((rows, cols))
    for pos, cell in enumerate(cells):
        if pos not in skip:
            problem.stamp(pos, cell, taken, occ)
    return taken, occ


def sa_place(problem: PlacementProblem, schedule: Schedule = Schedule(), seed: int = 0) -> SAResult:
    """Simulated annealing over macro anchors, starting from :func:`random_place`.

    Moves relocate one macro to a random legal cell or swap two macros with
    equal probability. Returns the best placement seen.
    """
    rng = np.random.default_rng(seed)
    init_seed = int(rng.integers(2**63))
    cells = problem.random_assignment(np.random.default_rng(init_seed))
    current = problem.evaluate(cells)
    cost = placement_cost(current, problem)
    initial = cost
    best, best_cost = current, cost
    temp = 0.1 * cost if schedule.t0 is None else schedule.t0
    accepted = [cost]
    m = problem.num_macros
    # cost is a pure function of the assignment
    seen = {tuple(cells): (current, cost)}
    for _ in range(schedule.steps):
        cand = list(cells)
        if m >= 2 and rng.random() < 0.5:
            i, j = (int(v) for v in rng.choice(m, size=2, replace=False))
            cand[i], cand[j] = cand[j], cand[i]
            taken, occ = _occupancy(problem, cand, skip=(i, j))
            ok = True
            for pos in (i, j):
                if not problem.legal_mask(pos, taken, occ)[cand[pos]]:
                    ok = False
                    break
                problem.stamp(pos, cand[pos], taken, occ)
        elif m >= 1:
            i = int(rng.integers(m))
            taken, occ = _occupancy(problem, cand, skip=(i,))
            legal = np.flatnonzero(problem.legal_mask(i, taken, occ))
            ok = len(legal) > 0
            if ok:
                cand[i] = int(rng.choice(legal))
        else:
            ok = False
        if ok and cand != cells:
            key = tuple(cand)
            if key not in seen:
                trial = problem.evaluate(cand)
                seen[key] = (trial, placement_cost(trial, problem))
            trial, trial_cost = seen[key]
            delta = trial_cost - cost
            if delta < 0 or (temp > 0 and rng.random() < math.exp(-delta / temp)):
                cells, current, cost = cand, trial, trial_cost
                accepted.append(cost)
                if cost < best_cost:
                    best, best_cost = current, cost
        temp *= schedule.alpha
    return SAResult(best, best_cost, accepted, initial)


def search_space_size(problem: PlacementProblem) -> int:
    n = problem.cfg.num_cells
    return math.perm(n, problem.num_macros) if problem.num_macros <= n else 0


def exhaustive_place(problem: PlacementProblem, limit: int = EXHAUSTIVE_LIMIT) -> tuple[Placement, float]:
    """Minimum-cost placement over all legal non-overlapping assignments.

    Assignments are visited in lexicographic order of (macro order, cell
    index) and only a strict improvement replaces the incumbent, so ties go
    to the lexicographically first assignment.
    """
    size = search_space_size(problem)
    if size > limit:
        raise InstanceTooLargeError(f"{size} assignments exceed the guard of {limit}")
    rows, cols = problem.cfg.rows, problem.cfg.cols
    m = problem.num_macros
    best: tuple[float, Placement | None] = (math.inf, None)
    taken = np.zeros((rows, cols))
    occ = np.zeros((rows, cols))
    cells: list[int] = []

    def recurse(pos):
        nonlocal best
        if pos == m:
            p = problem.evaluate(cells)
            c = placement_cost(p, problem)
            if c < best[0]:
                best = (c, p)
            return
        for cell in np.flatnonzero(problem.legal_mask(pos, taken, occ)):
            cell = int(cell)
            problem.stamp(pos, cell, taken, occ)
            cells.append(cell)
            recurse(pos + 1)
            cells.pop()
            problem.stamp(pos, cell, taken, occ, sign=-1)

    recurse(0)
    if best[1] is None:
        raise ValueError("instance has no legal placement")
    return best[1], best[0]

