"""Clean-action predictors: the conditioned network and a BFS heuristic."""

from .heuristic import HeuristicPredictor, heuristic_predictor
from .network import (Condition, NeuralPredictor, action_entropy, build_social_graph,
                      denoiser_forward, encode_condition, env_sense, inferred_trajectory,
                      sparse_social_attention, temporal_attention)
from .params import DenoiserConfig, DenoiserParams, init_params, load_params, save_params

__all__ = [
    "Condition", "DenoiserConfig", "DenoiserParams", "HeuristicPredictor", "NeuralPredictor",
    "action_entropy", "build_social_graph", "denoiser_forward", "encode_condition", "env_sense",
    "heuristic_predictor", "inferred_trajectory", "init_params", "load_params", "save_params",
    "sparse_social_attention", "temporal_attention",
]
