"""Graph contrastive learning with adversarially trained pooling views.

Core pieces: a small reverse-mode autodiff engine (:mod:`gpscl.tensor`),
GIN encoders, TopK / cluster poolers that generate weak and strong
views, similarity + consistency objectives, the adversarial trainer and
frozen-embedding evaluation.
"""

from . import encoder, errors, evaluation, graphs, objective, pooling, tensor, trainer
from .graphs import Graph, GraphDataset, make_batches, parse_tudataset, synth_dataset
from .tensor import Tensor, backward
from .trainer import TrainConfig, fit, init_state, load_checkpoint, pretrain, save_checkpoint, train_step

__all__ = [
    "encoder",
    "errors",
    "evaluation",
    "graphs",
    "objective",
    "pooling",
    "tensor",
    "trainer",
    "Graph",
    "GraphDataset",
    "make_batches",
    "parse_tudataset",
    "synth_dataset",
    "Tensor",
    "backward",
    "TrainConfig",
    "fit",
    "init_state",
    "load_checkpoint",
    "pretrain",
    "save_checkpoint",
    "train_step",
]

__version__ = "0.1.0"
