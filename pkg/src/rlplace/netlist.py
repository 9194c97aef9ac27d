"""Netlist data model, interchange format, synthetic generator and clustering."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

FORMAT_FIELDS_NODE = ("id", "kind", "gate_type", "is_flipflop", "width_um", "height_um")
FORMAT_FIELDS_PIN = ("node", "dx_um", "dy_um")

GATE_TYPES = ("AND", "OR", "NAND", "NOR", "XOR", "INV", "DFF", "other")

# bound on how often a single net may list the same node
MAX_PIN_MULTIPLICITY = 64


class NetlistError(ValueError):
    """Raised for malformed or inconsistent netlist documents."""


class Kind(str, enum.Enum):
    MACRO = "Macro"
    STDCELL = "StdCell"
    PORT = "Port"


@dataclass(frozen=True)
class Node:
    id: int
    kind: Kind
    gate_type: str = "other"
    is_flipflop: bool = False
    width_um: float = 0.0
    height_um: float = 0.0

    @property
    def area(self) -> float:
        return self.width_um * self.height_um


@dataclass(frozen=True)
class Pin:
    node: int
    dx_um: float = 0.0
    dy_um: float = 0.0


@dataclass(frozen=True)
class Net:
    id: int
    pins: tuple[Pin, ...]

    @property
    def driver(self) -> int:
        return self.pins[0].node

    @property
    def sinks(self) -> tuple[int, ...]:
        return tuple(p.node for p in self.pins[1:])


@dataclass(frozen=True)
class Metadata:
    num_cells: int
    num_nets: int
    total_macro_area_um2: float


@dataclass
class Netlist:
    nodes: list[Node]
    nets: list[Net]
    name: str = "netlist"

    def __post_init__(self):
        self._index = {n.id: n for n in self.nodes}

    @property
    def metadata(self) -> Metadata:
        macro_area = math.fsum(n.area for n in self.nodes if n.kind is Kind.MACRO)
        return Metadata(len(self.nodes), len(self.nets), macro_area)

    def node(self, node_id: int) -> Node:
        return self._index[node_id]

    def ids(self, kind: Kind | None = None) -> list[int]:
        return [n.id for n in self.nodes if kind is None or n.kind is kind]

    @property
    def macros(self) -> list[Node]:
        return [n for n in self.nodes if n.kind is Kind.MACRO]

    @property
    def ports(self) -> list[Node]:
        return [n for n in self.nodes if n.kind is Kind.PORT]

    @property
    def stdcells(self) -> list[Node]:
        return [n for n in self.nodes if n.kind is Kind.STDCELL]

    def __eq__(self, other):
        if not isinstance(other, Netlist):
            return NotImplemented
        return (
            self.name == other.name
            and sorted(self.nodes, key=lambda n: n.id) == sorted(other.nodes, key=lambda n: n.id)
            and sorted(self.nets, key=lambda n: n.id) == sorted(other.nets, key=lambda n: n.id)
        )

    def validate(self, dense_ids: bool = True) -> None:
        """Check the structural invariants, raising :class:`NetlistError`."""
        seen = set()
        for n in self.nodes:
            if n.id in seen:
                raise NetlistError(f"duplicate node id {n.id}")
            seen.add(n.id)
            if n.kind is Kind.PORT:
                if n.width_um != 0 or n.height_um != 0:
                    raise NetlistError(f"port {n.id} must have zero area")
                if n.is_flipflop:
                    raise NetlistError(f"port {n.id} cannot be a flip-flop")
            elif not (n.width_um > 0 and n.height_um > 0):
                raise NetlistError(f"node {n.id} has nonpositive dimension")
        if dense_ids and seen != set(range(len(self.nodes))):
            raise NetlistError("node ids must be dense 0..n-1")
        net_ids = set()
        for net in self.nets:
            if net.id in net_ids:
                raise NetlistError(f"duplicate net id {net.id}")
            net_ids.add(net.id)
            if not net.pins:
                raise NetlistError(f"net {net.id} has no pins")
            counts: dict[int, int] = {}
            for p in net.pins:
                if p.node not in seen:
                    raise NetlistError(f"net {net.id} references unknown node {p.node}")
                counts[p.node] = counts.get(p.node, 0) + 1
            if max(counts.values()) > MAX_PIN_MULTIPLICITY:
                raise NetlistError(f"net {net.id} repeats a node too often")


def _node_to_dict(n: Node) -> dict:
    return {
        "id": n.id,
        "kind": n.kind.value,
        "gate_type": n.gate_type,
        "is_flipflop": n.is_flipflop,
        "width_um": float(n.width_um),
        "height_um": float(n.height_um),
    }


def write_netlist(netlist: Netlist) -> str:
    """Serialize to the canonical interchange document.

    Ids are sorted and field order is fixed, so structurally equal netlists
    produce byte-identical text.
    """
    doc = {
        "name": netlist.name,
        "nodes": [_node_to_dict(n) for n in sorted(netlist.nodes, key=lambda n: n.id)],
        "nets": [
            {
                "id": net.id,
                "pins": [
                    {"node": p.node, "dx_um": float(p.dx_um), "dy_um": float(p.dy_um)}
                    for p in net.pins
                ],
            }
            for net in sorted(netlist.nets, key=lambda n: n.id)
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise NetlistError(f"{where}: missing field {key!r}")
    return obj[key]


def parse_netlist(text: str, metadata: Metadata | None = None) -> Netlist:
    """Parse an interchange document into a validated :class:`Netlist`.

    If ``metadata`` is given (or the document carries a ``metadata`` object)
    it must agree with the recomputed values.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetlistError(f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise NetlistError("top level must be an object")
    nodes = []
    for i, raw in enumerate(_require(doc, "nodes", "document")):
        where = f"nodes[{i}]"
        try:
            kind = Kind(_require(raw, "kind", where))
        except ValueError as exc:
            raise NetlistError(f"{where}: unknown kind {raw['kind']!r}") from exc
        nodes.append(
            Node(
                id=int(_require(raw, "id", where)),
                kind=kind,
                gate_type=str(raw.get("gate_type", "other")),
                is_flipflop=bool(raw.get("is_flipflop", False)),
                width_um=float(_require(raw, "width_um", where)),
                height_um=float(_require(raw, "height_um", where)),
            )
        )
    nets = []
    for i, raw in enumerate(_require(doc, "nets", "document")):
        where = f"nets[{i}]"
        pins = tuple(
            Pin(int(_require(p, "node", f"{where}.pins[{j}]")), float(p.get("dx_um", 0.0)), float(p.get("dy_um", 0.0)))
            for j, p in enumerate(_require(raw, "pins", where))
        )
        nets.append(Net(int(_require(raw, "id", where)), pins))
    netlist = Netlist(nodes, nets, str(doc.get("name", "netlist")))
    netlist.validate()

    declared = metadata
    if declared is None and "metadata" in doc:
        m = doc["metadata"]
        declared = Metadata(int(m["num_cells"]), int(m["num_nets"]), float(m["total_macro_area_um2"]))
    if declared is not None:
        actual = netlist.metadata
        if (
            declared.num_cells != actual.num_cells
            or declared.num_nets != actual.num_nets
            or not math.isclose(declared.total_macro_area_um2, actual.total_macro_area_um2, rel_tol=1e-9)
        ):
            raise NetlistError(f"metadata mismatch: declared {declared}, recomputed {actual}")
    return netlist


def load_netlist(path) -> Netlist:
    with open(path, encoding="utf-8") as fh:
        return parse_netlist(fh.read())


def save_netlist(netlist: Netlist, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(write_netlist(netlist))


def generate_synthetic(
    seed: int,
    n_macros: int,
    n_stdcells: int,
    n_nets: int,
    ff_fraction: float = 0.0,
    macro_size_range: tuple[float, float] = (10.0, 30.0),
    cell_size_range: tuple[float, float] = (0.5, 2.0),
    max_fanout: int = 4,
    n_ports: int = 0,
    name: str | None = None,
) -> Netlist:
    """Build a random but reproducible netlist.

    Node ids are laid out as macros, then standard cells, then ports. The
    first pin of each net is its driver and always has the smallest id on
    the net, so combinational edges never form cycles. When ``n_nets`` is at
    least a quarter of the node count, every node is guaranteed to sit on
    some net.
    """
    if min(n_macros, n_stdcells, n_nets, n_ports) < 0:
        raise ValueError("counts must be nonnegative")
    if not 0.0 <= ff_fraction <= 1.0:
        raise ValueError("ff_fraction must lie in [0, 1]")
    n_nodes = n_macros + n_stdcells + n_ports
    if n_nets > 0 and n_nodes == 0:
        raise ValueError("cannot create nets without nodes")
    if max_fanout < 1:
        raise ValueError("max_fanout must be >= 1")
    rng = np.random.default_rng(seed)

    lo_m, hi_m = macro_size_range
    lo_c, hi_c = cell_size_range
    if not (0 < lo_m <= hi_m and 0 < lo_c <= hi_c):
        raise ValueError("size ranges must be positive and ordered")

    n_logic = n_macros + n_stdcells
    n_ff = math.floor(ff_fraction * n_logic)
    nodes = []
    for i in range(n_macros):
        w, h = rng.uniform(lo_m, hi_m, size=2)
        nodes.append(Node(i, Kind.MACRO, "other", i < n_ff, round(float(w), 3), round(float(h), 3)))
    logic_gates = GATE_TYPES[:6]
    for j in range(n_stdcells):
        i = n_macros + j
        is_ff = i < n_ff
        gate = "DFF" if is_ff else logic_gates[int(rng.integers(len(logic_gates)))]
        w, h = rng.uniform(lo_c, hi_c, size=2)
        nodes.append(Node(i, Kind.STDCELL, gate, is_ff, round(float(w), 3), round(float(h), 3)))
    for k in range(n_ports):
        nodes.append(Node(n_logic + k, Kind.PORT, "other", False, 0.0, 0.0))

    nets = []
    cover = n_nets > 0 and n_nets * 4 >= n_nodes
    order = rng.permutation(n_nodes) if cover else np.zeros(0, dtype=int)
    cursor = 0
    for net_id in range(n_nets):
        fanout = int(rng.integers(1, max_fanout + 1))
        size = min(fanout + 1, n_nodes)
        chosen: list[int] = []
        # walk a permutation so every node lands on at least one net
        uncovered = n_nodes - cursor
        if cover and uncovered > 0:
            take = math.ceil(uncovered / (n_nets - net_id))
            size = max(size, take)
            chosen.extend(int(v) for v in order[cursor : cursor + take])
            cursor += take
        while len(chosen) < size:
            v = int(rng.integers(n_nodes))
            if v not in chosen:
                chosen.append(v)
        chosen.sort()
        pins = []
        for v in chosen:
            node = nodes[v]
            if node.kind is Kind.MACRO:
                dx = round(float(rng.uniform(0, node.width_um)), 3)
                dy = round(float(rng.uniform(0, node.height_um)), 3)
            elif node.kind is Kind.STDCELL:
                dx, dy = round(node.width_um / 2, 3), round(node.height_um / 2, 3)
            else:
                dx = dy = 0.0
            pins.append(Pin(v, dx, dy))
        nets.append(Net(net_id, tuple(pins)))
    if name is None:
        name = f"synth_s{seed}_m{n_macros}_c{n_stdcells}_n{n_nets}"
    return Netlist(nodes, nets, name)


@dataclass
class ClusteredNetlist:
    """A netlist whose standard cells are collapsed into movable clusters.

    ``clusters[k]`` lists the member cell ids of ``cluster_nodes[k]``. Cluster
    node ids continue after the largest original id, so rewired nets never
    mention a raw standard cell.
    """

    original: Netlist
    clusters: list[list[int]]
    cluster_nodes: list[Node]
    rewired_nets: list[Net]
    membership: dict[int, int] = field(default_factory=dict)

    @property
    def macros(self) -> list[Node]:
        return self.original.macros

    @property
    def ports(self) -> list[Node]:
        return self.original.ports

    @property
    def name(self) -> str:
        return self.original.name

    def as_netlist(self) -> Netlist:
        """Flattened view: macros, ports and cluster nodes over the rewired nets."""
        keep = [n for n in self.original.nodes if n.kind is not Kind.STDCELL]
        return Netlist(keep + list(self.cluster_nodes), list(self.rewired_nets), self.original.name)


def _stdcell_adjacency(netlist: Netlist) -> dict[int, dict[int, float]]:
    cells = {n.id for n in netlist.stdcells}
    adj: dict[int, dict[int, float]] = {c: {} for c in cells}
    for net in netlist.nets:
        members = sorted({p.node for p in net.pins if p.node in cells})
        for a_pos, a in enumerate(members):
            for b in members[a_pos + 1 :]:
                adj[a][b] = adj[a].get(b, 0.0) + 1.0
                adj[b][a] = adj[b].get(a, 0.0) + 1.0
    return adj


def _label_propagation(adj, areas, cap_area, seed, max_rounds=20):
    rng = np.random.default_rng(seed)
    ids = sorted(adj)
    label = {v: v for v in ids}
    load = {v: areas[v] for v in ids}
    for _ in range(max_rounds):
        changed = False
        for v in rng.permutation(ids):
            v = int(v)
            scores: dict[int, float] = {}
            for u, w in adj[v].items():
                scores[label[u]] = scores.get(label[u], 0.0) + w
            best, best_score = label[v], scores.get(label[v], 0.0)
            for lab, s in sorted(scores.items()):
                if lab == label[v]:
                    continue
                if load[lab] + areas[v] > cap_area:
                    continue
                if s > best_score:
                    best, best_score = lab, s
            if best != label[v]:
                load[label[v]] -= areas[v]
                load[best] += areas[v]
                label[v] = best
                changed = True
        if not changed:
            break
    groups: dict[int, list[int]] = {}
    for v in ids:
        groups.setdefault(label[v], []).append(v)
    return sorted(groups.values(), key=lambda g: g[0])


def _greedy_merge(groups, adj, target):
    groups = [sorted(g) for g in groups]
    owner = {v: k for k, g in enumerate(groups) for v in g}
    alive = set(range(len(groups)))
    # inter-group weights
    weight: dict[tuple[int, int], float] = {}
    for v, nbrs in adj.items():
        for u, w in nbrs.items():
            a, b = owner[v], owner[u]
            if a < b:
                weight[(a, b)] = weight.get((a, b), 0.0) + w
    while len(alive) > target:
        best = None
        for (a, b), w in weight.items():
            score = w / (len(groups[a]) * len(groups[b]))
            key = (-score, a, b)
            if best is None or key < best:
                best = key
        if best is None:
            # nothing connected: fuse the two smallest groups
            smallest = sorted(alive, key=lambda k: (len(groups[k]), k))[:2]
            a, b = sorted(smallest)
        else:
            _, a, b = best
        groups[a] = sorted(groups[a] + groups[b])
        groups[b] = []
        alive.discard(b)
        merged: dict[tuple[int, int], float] = {}
        for (x, y), w in weight.items():
            x = a if x == b else x
            y = a if y == b else y
            if x == y:
                continue
            key = (min(x, y), max(x, y))
            merged[key] = merged.get(key, 0.0) + w
        weight = merged
    return sorted((groups[k] for k in alive), key=lambda g: g[0])


def cluster_stdcells(netlist: Netlist, target_clusters: int, seed: int = 0) -> ClusteredNetlist:
    """Group standard cells into roughly ``target_clusters`` movable clusters.

    Size-capped label propagation over the cell connectivity graph gives a
    first coarsening; connected groups are then merged greedily (highest
    size-normalized connectivity first) down to the target. Pins on
    clustered cells lose their offsets.
    """
    if target_clusters < 1:
        raise ValueError("target_clusters must be positive")
    cells = netlist.stdcells
    if not cells:
        return ClusteredNetlist(netlist, [], [], list(netlist.nets), {})
    areas = {n.id: n.area for n in cells}
    adj = _stdcell_adjacency(netlist)
    if target_clusters >= len(cells):
        groups = [[n.id] for n in sorted(cells, key=lambda n: n.id)]
    else:
        total = math.fsum(areas.values())
        cap = total / target_clusters
        cap = max(cap, max(areas.values()))
        groups = _label_propagation(adj, areas, cap, seed)
        groups = _greedy_merge(groups, adj, target_clusters)

    base = max(n.id for n in netlist.nodes) + 1
    cluster_nodes = []
    membership = {}
    for k, members in enumerate(groups):
        area = math.fsum(areas[v] for v in members)
        side = math.sqrt(area)
        is_ff = any(netlist.node(v).is_flipflop for v in members)
        cluster_nodes.append(Node(base + k, Kind.STDCELL, "other", is_ff, side, side))
        for v in members:
            membership[v] = base + k
    rewired = []
    for net in netlist.nets:
        pins = tuple(
            Pin(membership[p.node], 0.0, 0.0) if p.node in membership else p for p in net.pins
        )
        rewired.append(Net(net.id, pins))
    return ClusteredNetlist(netlist, groups, cluster_nodes, rewired, membership)
