"""Small dense numeric core for the deep classifiers."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckResult, grad_check, relative_error
from .layers import (BatchNorm, Conv2d, Dense, Dropout, Flatten, LayerSpec, Lstm, ReLU,
                     SoftmaxOut, build_layer, softmax)
from .loss import softmax_xent
from .network import Network
from .optim import Adam, adam_step
from .tensor import Mode, Param

__all__ = [
    "Adam", "BatchNorm", "Conv2d", "Dense", "Dropout", "Flatten", "GradCheckResult",
    "LayerSpec", "Lstm", "Mode", "Network", "Param", "ReLU", "SoftmaxOut", "adam_step",
    "build_layer", "grad_check", "load_checkpoint", "relative_error", "save_checkpoint",
    "softmax", "softmax_xent",
]
