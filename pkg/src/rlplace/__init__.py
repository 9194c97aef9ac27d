"""Reinforcement-learning macro placement on a grid canvas."""

from rlplace.agent import TrainConfig, collect_rollouts, greedy_placement, train
from rlplace.baselines import exhaustive_place, random_place, sa_place
from rlplace.env import CanvasConfig, PlacementEnv, PlacementProblem, RewardBreakdown, RewardMode
from rlplace.estimators import GraphFeatureExtractor, NodeEmbedder, RandomPlacer, RLMacroPlacer, SimulatedAnnealingPlacer
from rlplace.graph import build_graph, extract_features
from rlplace.netlist import Netlist, cluster_stdcells, generate_synthetic, parse_netlist, write_netlist

__version__ = "0.1.0"

__all__ = [
    "CanvasConfig",
    "GraphFeatureExtractor",
    "Netlist",
    "NodeEmbedder",
    "PlacementEnv",
    "PlacementProblem",
    "RLMacroPlacer",
    "RandomPlacer",
    "RewardBreakdown",
    "RewardMode",
    "SimulatedAnnealingPlacer",
    "TrainConfig",
    "build_graph",
    "cluster_stdcells",
    "collect_rollouts",
    "exhaustive_place",
    "extract_features",
    "generate_synthetic",
    "greedy_placement",
    "parse_netlist",
    "random_place",
    "sa_place",
    "train",
    "write_netlist",
]
