"""Two-layer mean-aggregator GraphSAGE encoder with hand-written backprop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rlplace.graph import Graph
from rlplace.netlist import GATE_TYPES, ClusteredNetlist, Kind, Netlist

EMBED_DIM = 32
# one-hot gate type, then area, degree, fanout, is_macro, is_port
NUM_FEATURES = len(GATE_TYPES) + 5


def _zscore(v: np.ndarray) -> np.ndarray:
    sd = v.std()
    if sd == 0:
        return np.zeros_like(v)
    return (v - v.mean()) / sd


def node_features(netlist: Netlist | ClusteredNetlist, g: Graph) -> np.ndarray:
    """Feature table aligned with ``g.node_ids``.

    Area, degree and fanout are z-scored within the netlist.
    """
    if isinstance(netlist, ClusteredNetlist):
        netlist = netlist.as_netlist()
    n = g.n
    x = np.zeros((n, NUM_FEATURES))
    fanout = np.zeros(n)
    for net in netlist.nets:
        fanout[g.index[net.driver]] += len(net.pins) - 1
    area = np.zeros(n)
    vocab = {name: i for i, name in enumerate(GATE_TYPES)}
    for node in netlist.nodes:
        i = g.index[node.id]
        x[i, vocab.get(node.gate_type, vocab["other"])] = 1.0
        area[i] = node.area
        x[i, -2] = float(node.kind is Kind.MACRO)
        x[i, -1] = float(node.kind is Kind.PORT)
    k = len(GATE_TYPES)
    x[:, k] = _zscore(area)
    x[:, k + 1] = _zscore(g.degree)
    x[:, k + 2] = _zscore(fanout)
    return x


def mean_operator(g: Graph) -> np.ndarray:
    """Row-normalized weighted adjacency; shared nets count with multiplicity."""
    w = g.weights
    rows = w.sum(axis=1, keepdims=True)
    return np.divide(w, rows, out=np.zeros_like(w), where=rows > 0)


@dataclass
class EmbedParams:
    weights: dict[str, np.ndarray]
    dropout: float = 0.1

    @property
    def num_layers(self) -> int:
        return len(self.weights) // 2

    def copy(self) -> "EmbedParams":
        return EmbedParams({k: v.copy() for k, v in self.weights.items()}, self.dropout)


def init_embed_params(seed: int, dims: tuple[int, ...] = (NUM_FEATURES, EMBED_DIM, EMBED_DIM), dropout: float = 0.1) -> EmbedParams:
    """Glorot-uniform weights for each layer's self and neighbour blocks."""
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid layer dims {dims}")
    rng = np.random.default_rng(seed)
    weights = {}
    for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights[f"sage{layer}.self"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        weights[f"sage{layer}.nbr"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    return EmbedParams(weights, dropout)


@dataclass
class NodeEmbedding:
    node_ids: np.ndarray
    vectors: np.ndarray
    graph_embedding: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)


def forward_embed(
    p: EmbedParams,
    g: Graph,
    x: np.ndarray,
    train_mode: bool = False,
    seed: int | None = None,
) -> NodeEmbedding:
    n = g.n
    if x.shape[0] != n:
        raise ValueError(f"feature table has {x.shape[0]} rows for {n} nodes")
    if x.shape[1] != p.weights["sage0.self"].shape[0]:
        raise ValueError(f"feature width {x.shape[1]} does not match layer input {p.weights['sage0.self'].shape[0]}")
    m = mean_operator(g)
    rng = np.random.default_rng(seed) if train_mode else None
    h = x
    layers = []
    for layer in range(p.num_layers):
        ws, wn = p.weights[f"sage{layer}.self"], p.weights[f"sage{layer}.nbr"]
        agg = m @ h
        z = h @ ws + agg @ wn
        last = layer == p.num_layers - 1
        layers.append({"h": h, "agg": agg, "z": z})
        if last:
            h = z
        else:
            h = np.maximum(z, 0.0)
            if train_mode and p.dropout > 0:
                keep = (rng.random(h.shape) >= p.dropout) / (1.0 - p.dropout)
                layers[-1]["keep"] = keep
                h = h * keep
    if n == 0:
        graph_vec = np.zeros(h.shape[1])
    else:
        graph_vec = h.mean(axis=0)
    if not np.all(np.isfinite(h)):
        raise FloatingPointError("non-finite node embedding")
    return NodeEmbedding(g.node_ids, h, graph_vec, {"m": m, "layers": layers})


def backward_embed(p: EmbedParams, emb: NodeEmbedding, upstream: np.ndarray, upstream_graph: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Reverse pass through a cached forward; returns weight gradients."""
    m = emb.cache["m"]
    layers = emb.cache["layers"]
    d = np.array(upstream, dtype=float, copy=True)
    if upstream_graph is not None and len(d):
        d += upstream_graph[None, :] / len(d)
    grads = {}
    for layer in reversed(range(p.num_layers)):
        rec = layers[layer]
        ws, wn = p.weights[f"sage{layer}.self"], p.weights[f"sage{layer}.nbr"]
        if layer != p.num_layers - 1:
            if "keep" in rec:
                d = d * rec["keep"]
            d = d * (rec["z"] > 0)
        grads[f"sage{layer}.self"] = rec["h"].T @ d
        grads[f"sage{layer}.nbr"] = rec["agg"].T @ d
        if layer > 0:
            d = d @ ws.T + m.T @ (d @ wn.T)
    return grads


def embed_gradients(p: EmbedParams, g: Graph, x: np.ndarray, upstream: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradient of ``sum(upstream * forward_embed(...).vectors)`` (eval mode)."""
    emb = forward_embed(p, g, x, train_mode=False)
    if upstream.shape != emb.vectors.shape:
        raise ValueError(f"upstream shape {upstream.shape} != embedding shape {emb.vectors.shape}")
    return backward_embed(p, emb, upstream)
