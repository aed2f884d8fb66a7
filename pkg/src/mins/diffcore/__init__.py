"""Minimal reverse-mode autodiff, Adam, MLPs and checkpoints."""

from .checkpoint import CheckpointError, dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from .nn import MLP, gumbel_softmax_sample, sample_gumbel
from .optim import AdamState, adam_step
from .tensor import SUPPORTED_OPS, Graph, NonFiniteError, ShapeError, Tensor

__all__ = [
    "AdamState", "CheckpointError", "Graph", "MLP", "NonFiniteError", "SUPPORTED_OPS",
    "ShapeError", "Tensor", "adam_step", "dumps_checkpoint", "gumbel_softmax_sample",
    "load_checkpoint", "loads_checkpoint", "sample_gumbel", "save_checkpoint",
]
