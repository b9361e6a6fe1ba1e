"""Facial expression recognition with a residual backbone, K attention heads and
an attention-fusion classifier, on a small numpy autodiff engine."""

from .accounting import count_params_flops
from .afn import LossWeights
from .checkpoint import Checkpoint
from .config import DataConfig, RunConfig
from .data import AugmentConfig, Dataset, load_dataset, synth_dataset
from .fcn import BackbonePlan
from .model import DAN, ModelConfig, build_model
from .optim import OptimConfig
from .tensor import Tensor, no_grad
from .train import ablate_heads, evaluate, train

__all__ = [
    "AugmentConfig",
    "BackbonePlan",
    "Checkpoint",
    "DAN",
    "DataConfig",
    "Dataset",
    "LossWeights",
    "ModelConfig",
    "OptimConfig",
    "RunConfig",
    "Tensor",
    "ablate_heads",
    "build_model",
    "count_params_flops",
    "evaluate",
    "load_dataset",
    "no_grad",
    "synth_dataset",
    "train",
]
