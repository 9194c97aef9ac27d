"""scikit-learn style wrappers so placers and feature extractors compose
with pipelines, ``clone`` and ``get_params``/``set_params``."""

from __future__ import annotations

from typing import Iterable

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from rlplace import agent, baselines, gnn
from rlplace.env import CanvasConfig, Placement, PlacementProblem, RewardMode, canvas_for
from rlplace.graph import build_graph, extract_features
from rlplace.netlist import ClusteredNetlist, Netlist, cluster_stdcells


def check_netlists(X) -> list[Netlist | ClusteredNetlist]:
    """Accept one netlist or an iterable of them; always return a list."""
    if isinstance(X, (Netlist, ClusteredNetlist)):
        return [X]
    if isinstance(X, (str, bytes)) or not isinstance(X, Iterable):
        raise TypeError(f"expected a Netlist or a sequence of netlists, got {type(X).__name__}")
    items = list(X)
    for i, item in enumerate(items):
        if not isinstance(item, (Netlist, ClusteredNetlist)):
            raise TypeError(f"item {i} is a {type(item).__name__}, not a netlist")
    return items


def make_problem(
    netlist: Netlist | ClusteredNetlist,
    rows: int = 16,
    cols: int = 16,
    n_clusters: int = 16,
    utilization: float = 0.5,
    seed: int = 0,
    **canvas_kw,
) -> PlacementProblem:
    """Cluster (if needed), size the canvas and build the placement problem."""
    if isinstance(netlist, Netlist):
        clustered = cluster_stdcells(netlist, n_clusters, seed=seed)
    else:
        clustered = netlist
    cfg = canvas_for(clustered, rows, cols, utilization, **canvas_kw)
    return PlacementProblem(clustered, cfg)


class GraphFeatureExtractor(TransformerMixin, BaseEstimator):
    """Netlist -> [logic levels, clustering coeff, 3 rich-club values, Fiedler value, spectral radius]."""

    def __init__(self, tol=1e-8, max_iter=5000):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        check_netlists(X)
        self.n_features_out_ = 7
        return self

    def transform(self, X):
        items = check_netlists(X)
        return np.vstack([extract_features(n, self.tol, self.max_iter).as_array() for n in items]) if items else np.zeros((0, 7))

    def get_feature_names_out(self, input_features=None):
        return np.array(
            ["logic_levels", "clustering_coefficient", "rich_club_0", "rich_club_1", "rich_club_2", "fiedler_value", "spectral_radius"]
        )


class NodeEmbedder(TransformerMixin, BaseEstimator):
    """Per-node 32-d GraphSAGE embeddings (inference mode)."""

    def __init__(self, seed=0, dropout=0.1):
        self.seed = seed
        self.dropout = dropout

    def fit(self, X=None, y=None):
        self.params_ = gnn.init_embed_params(self.seed, dropout=self.dropout)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        (netlist,) = check_netlists(X)
        g = build_graph(netlist)
        x = gnn.node_features(netlist, g)
        return gnn.forward_embed(self.params_, g, x).vectors


class _PlacerBase(BaseEstimator):
    def _problem(self, netlist) -> PlacementProblem:
        return make_problem(
            netlist,
            rows=self.rows,
            cols=self.cols,
            n_clusters=self.n_clusters,
            utilization=self.utilization,
            seed=self.seed,
            reward_mode=RewardMode(self.reward_mode),
            congestion_weight=self.congestion_weight,
        )

    def predict(self, X) -> list[Placement]:
        return [self._place(self._problem(n)) for n in check_netlists(X)]

    def score(self, X, y=None) -> float:
        """Mean terminal reward (higher is better)."""
        return float(np.mean([p.breakdown.reward for p in self.predict(X)]))


class RandomPlacer(_PlacerBase):
    def __init__(self, rows=16, cols=16, n_clusters=16, utilization=0.5, reward_mode="baseline", congestion_weight=1.0, seed=0):
        self.rows = rows
        self.cols = cols
        self.n_clusters = n_clusters
        self.utilization = utilization
        self.reward_mode = reward_mode
        self.congestion_weight = congestion_weight
        self.seed = seed

    def fit(self, X=None, y=None):
        return self

    def _place(self, problem):
        return baselines.random_place(problem, self.seed)


class SimulatedAnnealingPlacer(_PlacerBase):
    def __init__(
        self, rows=16, cols=16, n_clusters=16, utilization=0.5, reward_mode="baseline", congestion_weight=1.0,
        t0=None, alpha=0.995, steps=20_000, seed=0,
    ):
        self.rows = rows
        self.cols = cols
        self.n_clusters = n_clusters
        self.utilization = utilization
        self.reward_mode = reward_mode
        self.congestion_weight = congestion_weight
        self.t0 = t0
        self.alpha = alpha
        self.steps = steps
        self.seed = seed

    def fit(self, X=None, y=None):
        return self

    def _place(self, problem):
        sched = baselines.Schedule(self.t0, self.alpha, self.steps)
        return baselines.sa_place(problem, sched, self.seed).placement


class RLMacroPlacer(_PlacerBase):
    """PPO-trained macro placer. ``fit`` trains on the given netlists; ``predict`` places greedily."""

    def __init__(
        self, rows=16, cols=16, n_clusters=16, utilization=0.5, reward_mode="baseline", congestion_weight=1.0,
        iterations=100, episodes_per_iteration=8, learning_rate=3e-4, entropy_coef=0.01, value_coef=0.5,
        gamma=1.0, clip_eps=0.2, epochs=4, minibatch_size=64, seed=0, workers=1,
    ):
        self.rows = rows
        self.cols = cols
        self.n_clusters = n_clusters
        self.utilization = utilization
        self.reward_mode = reward_mode
        self.congestion_weight = congestion_weight
        self.iterations = iterations
        self.episodes_per_iteration = episodes_per_iteration
        self.learning_rate = learning_rate
        self.entropy_coef = entropy_coef
        self.value_coef = value_coef
        self.gamma = gamma
        self.clip_eps = clip_eps
        self.epochs = epochs
        self.minibatch_size = minibatch_size
        self.seed = seed
        self.workers = workers

    def train_config(self) -> agent.TrainConfig:
        return agent.TrainConfig(
            gamma=self.gamma, value_coef=self.value_coef, entropy_coef=self.entropy_coef, clip_eps=self.clip_eps,
            epochs=self.epochs, minibatch_size=self.minibatch_size, learning_rate=self.learning_rate,
            episodes_per_iteration=self.episodes_per_iteration, iterations=self.iterations, seed=self.seed,
        )

    def fit(self, X, y=None):
        items = check_netlists(X)
        if not items:
            raise ValueError("fit needs at least one netlist")
        problems = [self._problem(n) for n in items]
        # the policy head is sized by the grid, so all instances share one canvas shape
        canvas: CanvasConfig = problems[0].cfg
        result = agent.train([p.clustered for p in problems], canvas, self.train_config(), workers=self.workers)
        self.params_ = result.params
        self.metrics_ = result.metrics
        self.n_iter_ = result.iteration
        return self

    def _place(self, problem):
        check_is_fitted(self, "params_")
        return agent.greedy_placement(self.params_, problem)
