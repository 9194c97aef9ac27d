"""Topological and spectral features of the netlist graph."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rlplace.netlist import ClusteredNetlist, Netlist


class ConvergenceError(RuntimeError):
    """Iterative eigensolver ran out of iterations."""

    def __init__(self, message: str, residual: float, value: float):
        super().__init__(f"{message} (best residual {residual:.3e})")
        self.residual = residual
        self.value = value


@dataclass
class Graph:
    """Clique-expanded undirected view plus a driver->sink DAG view.

    ``weights[i, j]`` counts the nets shared by nodes ``i`` and ``j`` (by
    position in ``node_ids``). ``dag`` holds successor lists after
    flip-flops are split and any leftover combinational cycle is cut.
    """

    node_ids: np.ndarray
    weights: np.ndarray
    dag: list[list[int]]
    flipflops: np.ndarray
    index: dict[int, int] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def adjacency(self) -> np.ndarray:
        return (self.weights > 0).astype(float)

    @property
    def degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.weights, 1)))

    def laplacian(self) -> np.ndarray:
        a = self.adjacency
        return np.diag(a.sum(axis=1)) - a


def build_graph(netlist: Netlist | ClusteredNetlist) -> Graph:
    if isinstance(netlist, ClusteredNetlist):
        netlist = netlist.as_netlist()
    node_ids = np.array(sorted(n.id for n in netlist.nodes), dtype=int)
    index = {int(v): i for i, v in enumerate(node_ids)}
    n = len(node_ids)
    weights = np.zeros((n, n))
    succ: list[set[int]] = [set() for _ in range(n)]
    for net in netlist.nets:
        members = sorted({index[p.node] for p in net.pins})
        for a_pos, a in enumerate(members):
            for b in members[a_pos + 1 :]:
                weights[a, b] += 1.0
                weights[b, a] += 1.0
        d = index[net.driver]
        for s in net.sinks:
            s = index[s]
            if s != d:
                succ[d].add(s)
    ff = np.array([index[n.id] for n in netlist.nodes if n.is_flipflop], dtype=int)
    ff.sort()
    dag = _break_cycles(succ, set(ff.tolist()))
    return Graph(node_ids, weights, dag, ff, index)


def _break_cycles(succ: list[set[int]], ffs: set[int]) -> list[list[int]]:
    """Return an acyclic successor list.

    Paths are cut at flip-flops (no edge may pass *through* one), so the
    combinational part is examined with FF in-edges removed; any remaining
    cycle loses the DFS back-edge that closes it.
    """
    n = len(succ)
    comb = [sorted(s) for s in succ]
    # edges into a flip-flop terminate a path; they cannot be part of a cycle
    # once the FF's outgoing side is treated as a separate source.
    inner = [[v for v in comb[u] if v not in ffs] for u in range(n)]
    state = [0] * n  # 0 new, 1 on stack, 2 done
    dropped: set[tuple[int, int]] = set()
    for root in range(n):
        if state[root]:
            continue
        stack = [(root, iter(inner[root]))]
        state[root] = 1
        while stack:
            u, it = stack[-1]
            advanced = False
            for v in it:
                if state[v] == 1:
                    dropped.add((u, v))
                elif state[v] == 0:
                    state[v] = 1
                    stack.append((v, iter(inner[v])))
                    advanced = True
                    break
            if not advanced:
                state[u] = 2
                stack.pop()
    return [[v for v in comb[u] if (u, v) not in dropped] for u in range(n)]


def logic_levels(g: Graph) -> int:
    """Longest directed path, in edges, between two distinct flip-flops."""
    ffs = g.flipflops.tolist()
    if len(ffs) < 2:
        return 0
    ffset = set(ffs)
    n = g.n
    # Each FF is split: out-edges leave its source copy, in-edges end at
    # its sink copy. Topological order of the combinational core.
    indeg = [0] * n
    for u in range(n):
        for v in g.dag[u]:
            if v not in ffset:
                indeg[v] += 1
    order = [u for u in range(n) if indeg[u] == 0]
    for u in order:
        for v in g.dag[u]:
            if v not in ffset:
                indeg[v] -= 1
                if indeg[v] == 0:
                    order.append(v)
    best = 0
    for src in ffs:
        dist = np.full(n, -1, dtype=int)
        dist[src] = 0
        arrive = {}
        for u in order:
            if dist[u] < 0:
                continue
            if u in ffset and u != src:
                continue
            for v in g.dag[u]:
                d = dist[u] + 1
                if v in ffset:
                    if v != src:
                        arrive[v] = max(arrive.get(v, 0), d)
                elif d > dist[v]:
                    dist[v] = d
        if arrive:
            best = max(best, max(arrive.values()))
    return int(best)


def clustering_coefficient(g: Graph) -> float:
    """Average local clustering; vertices of degree <= 1 contribute 0."""
    if g.n == 0:
        return 0.0
    a = g.adjacency
    deg = a.sum(axis=1)
    closed = np.einsum("ij,jk,ki->i", a, a, a)  # 2 * triangles at i
    denom = deg * (deg - 1)
    local = np.divide(closed, denom, out=np.zeros_like(closed), where=deg > 1)
    return float(local.mean())


def rich_club(g: Graph, k: int) -> float:
    """Edge density among vertices whose degree exceeds ``k``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    a = g.adjacency
    club = np.flatnonzero(a.sum(axis=1) > k)
    m = len(club)
    if m <= 1:
        return 0.0
    edges = a[np.ix_(club, club)].sum() / 2.0
    return float(2.0 * edges / (m * (m - 1)))


@dataclass(frozen=True)
class SpectralSummary:
    fiedler_value: float
    spectral_radius: float
    iterations_used: int
    residual: float


def _lanczos_extreme(matvec, n, which, rng, deflate=None, tol=1e-8, max_iter=5000, krylov_dim=40):
    """Restarted Lanczos for one extreme eigenpair of a symmetric operator.

    ``which`` is ``"min"`` or ``"max"``. ``deflate`` is an orthonormal
    vector kept out of the search space. Full reorthogonalization inside
    each cycle; restarts from the current Ritz vector.
    Returns (value, vector, residual, matvecs).
    """
    dim = n - (1 if deflate is not None else 0)
    if dim <= 0:
        raise ValueError("search space is empty")
    m = min(krylov_dim, dim)

    def project(v):
        if deflate is not None:
            v = v - deflate * (deflate @ v)
        return v

    x = project(rng.standard_normal(n))
    x /= np.linalg.norm(x)
    used = 0
    best = (np.inf, 0.0, x)
    while used < max_iter:
        q = np.zeros((m + 1, n))
        alpha = np.zeros(m)
        beta = np.zeros(m)
        q[0] = x
        k = m
        for j in range(m):
            w = project(matvec(q[j]))
            used += 1
            alpha[j] = q[j] @ w
            w = w - alpha[j] * q[j] - (beta[j - 1] * q[j - 1] if j > 0 else 0.0)
            w = w - q[: j + 1].T @ (q[: j + 1] @ w)
            w = project(w)
            beta[j] = np.linalg.norm(w)
            if beta[j] <= 1e-12 * max(1.0, abs(alpha[j])):
                k = j + 1
                break
            q[j + 1] = w / beta[j]
        t = np.diag(alpha[:k]) + np.diag(beta[: k - 1], 1) + np.diag(beta[: k - 1], -1)
        vals, vecs = np.linalg.eigh(t)
        pick = 0 if which == "min" else k - 1
        theta = float(vals[pick])
        x = project(q[:k].T @ vecs[:, pick])
        x /= np.linalg.norm(x)
        residual = float(np.linalg.norm(matvec(x) - theta * x))
        used += 1
        if residual < best[0]:
            best = (residual, theta, x)
        if residual <= tol:
            return theta, x, residual, used
    raise ConvergenceError(f"Lanczos ({which}) did not converge in {max_iter} matvecs", best[0], best[1])


def spectral_summary(g: Graph, tol: float = 1e-8, max_iter: int = 5000, seed: int = 0) -> SpectralSummary:
    """Fiedler value and spectral radius of the unweighted Laplacian."""
    if g.n < 2:
        raise ValueError("spectral summary needs at least two vertices")
    lap = g.laplacian()
    n = g.n
    rng = np.random.default_rng(seed)
    matvec = lap.__matmul__
    if not lap.any():
        return SpectralSummary(0.0, 0.0, 0, 0.0)
    radius, _, res_r, it_r = _lanczos_extreme(matvec, n, "max", rng, tol=tol, max_iter=max_iter)
    ones = np.full(n, 1.0 / np.sqrt(n))
    fiedler, _, res_f, it_f = _lanczos_extreme(matvec, n, "min", rng, deflate=ones, tol=tol, max_iter=max_iter)
    fiedler = min(max(fiedler, 0.0), radius)
    dmax = float(g.degree.max())
    assert radius <= 2.0 * dmax + 1e-9, "Laplacian spectral radius exceeds 2 * max degree"
    return SpectralSummary(fiedler, max(radius, 0.0), it_r + it_f, max(res_r, res_f))


@dataclass(frozen=True)
class FeatureVector:
    logic_levels: int
    clustering_coefficient: float
    rich_club: dict[int, float]
    spectral: SpectralSummary

    def to_dict(self) -> dict:
        return {
            "logic_levels": self.logic_levels,
            "clustering_coefficient": self.clustering_coefficient,
            "rich_club": {str(k): v for k, v in sorted(self.rich_club.items())},
            "spectral": {
                "fiedler_value": self.spectral.fiedler_value,
                "spectral_radius": self.spectral.spectral_radius,
                "iterations_used": self.spectral.iterations_used,
                "residual": self.spectral.residual,
            },
        }

    def as_array(self) -> np.ndarray:
        rc = [v for _, v in sorted(self.rich_club.items())]
        rc = (rc + [0.0, 0.0, 0.0])[:3]
        return np.array(
            [self.logic_levels, self.clustering_coefficient, *rc, self.spectral.fiedler_value, self.spectral.spectral_radius],
            dtype=float,
        )


def rich_club_thresholds(g: Graph) -> list[int]:
    deg = g.degree
    if g.n == 0:
        return [1]
    return sorted({1, int(np.median(deg)), int(np.percentile(deg, 90))})


def extract_features(netlist: Netlist | ClusteredNetlist, tol: float = 1e-8, max_iter: int = 5000) -> FeatureVector:
    g = build_graph(netlist)
    if g.n >= 2:
        spectral = spectral_summary(g, tol=tol, max_iter=max_iter)
    else:
        spectral = SpectralSummary(0.0, 0.0, 0, 0.0)
    return FeatureVector(
        logic_levels=logic_levels(g),
        clustering_coefficient=clustering_coefficient(g),
        rich_club={k: rich_club(g, k) for k in rich_club_thresholds(g)},
        spectral=spectral,
    )
