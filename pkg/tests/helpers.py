"""Shared builders and brute-force oracles for the test suite."""

from __future__ import annotations

import itertools

import numpy as np

from rlplace.netlist import Kind, Net, Netlist, Node, Pin


def graph_netlist(n: int, edges, ff=(), name="g") -> Netlist:
    """Netlist whose nets are exactly the given directed 2-pin edges."""
    nodes = [Node(i, Kind.STDCELL, "AND", i in set(ff), 1.0, 1.0) for i in range(n)]
    nets = [Net(k, (Pin(a), Pin(b))) for k, (a, b) in enumerate(edges)]
    return Netlist(nodes, nets, name)


def random_edges(rng: np.random.Generator, n: int, p: float):
    return [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]


def pairs_sharing_a_net(netlist: Netlist) -> set[tuple[int, int]]:
    out = set()
    for net in netlist.nets:
        nodes = [p.node for p in net.pins]
        for a in nodes:
            for b in nodes:
                if a < b:
                    out.add((a, b))
    return out


def cc_bruteforce(n: int, edge_set: set[tuple[int, int]]) -> float:
    adj = {(a, b) for a, b in edge_set} | {(b, a) for a, b in edge_set}
    total = 0.0
    for i in range(n):
        nb = [j for j in range(n) if (i, j) in adj]
        d = len(nb)
        if d <= 1:
            continue
        closed = sum(1 for j in nb for k in nb if j != k and (j, k) in adj)
        total += closed / (d * (d - 1))
    return total / n if n else 0.0


def rich_club_bruteforce(n: int, edge_set, k: int) -> float:
    deg = [0] * n
    for a, b in edge_set:
        deg[a] += 1
        deg[b] += 1
    club = [v for v in range(n) if deg[v] > k]
    m = len(club)
    if m <= 1:
        return 0.0
    inside = sum(1 for a, b in itertools.combinations(club, 2) if (min(a, b), max(a, b)) in edge_set)
    return 2 * inside / (m * (m - 1))


def logic_levels_bruteforce(netlist: Netlist) -> int:
    """Enumerate every directed path that starts at one flip-flop and ends at another."""
    succ: dict[int, set[int]] = {}
    for net in netlist.nets:
        for s in net.sinks:
            if s != net.driver:
                succ.setdefault(net.driver, set()).add(s)
    ffs = {v.id for v in netlist.nodes if v.is_flipflop}
    best = 0

    def walk(u, src, depth):
        nonlocal best
        for v in succ.get(u, ()):
            if v in ffs:
                if v != src:
                    best = max(best, depth + 1)
            else:
                walk(v, src, depth + 1)

    if len(ffs) >= 2:
        for f in ffs:
            walk(f, f, 0)
    return best


def hpwl_bruteforce(nets_xy) -> float:
    total = 0.0
    for pts in nets_xy:
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        total += (max(xs) - min(xs)) + (max(ys) - min(ys))
    return total


def laplacian_spectrum(n: int, edge_set) -> np.ndarray:
    a = np.zeros((n, n))
    for i, j in edge_set:
        a[i, j] = a[j, i] = 1.0
    return np.linalg.eigvalsh(np.diag(a.sum(1)) - a)
