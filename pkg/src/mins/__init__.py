"""Model inversion networks: optimize black-box functions by learning inputs from scores."""

__version__ = "0.1.0"

from .active import ActiveConfig, RunHistory, active_loop, compute_regret, greedy_ablation_loop, make_synthetic
from .data import CategoricalSpace, ContinuousSpace, Dataset, generate_static_dataset, load_dataset, save_dataset
from .forward import ForwardConfig, ForwardModel, naive_forward_optimize, train_forward
from .infer import (InferenceConfig, InferenceResult, approx_infer, contextual_policy, naive_best_y,
                    penalized_objective, recompute_constraints)
from .invmap import GanConfig, InverseMap, sample, train_inverse_map
from .oracles import get_oracle
from .reweight import ReweightConfig, bound_terms, build_scheme, importance_weights, training_weights

__all__ = [
    "ActiveConfig", "RunHistory", "active_loop", "compute_regret", "greedy_ablation_loop", "make_synthetic",
    "CategoricalSpace", "ContinuousSpace", "Dataset", "generate_static_dataset", "load_dataset", "save_dataset",
    "ForwardConfig", "ForwardModel", "naive_forward_optimize", "train_forward",
    "InferenceConfig", "InferenceResult", "approx_infer", "contextual_policy", "naive_best_y",
    "penalized_objective", "recompute_constraints",
    "GanConfig", "InverseMap", "sample", "train_inverse_map", "get_oracle",
    "ReweightConfig", "bound_terms", "build_scheme", "importance_weights", "training_weights",
]
