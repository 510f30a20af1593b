"""Minimal tensor engine: explicit paired forward/backward layers, a binary
cross-entropy loss, and SGD. No autodiff graph; every layer caches what its
own backward needs and nothing else."""

from .tensor import Tensor
from .layers import (
    AvgPool2d,
    BatchNorm2d,
    ChannelConcat,
    Conv2d,
    GlobalAvgPool,
    Layer,
    Linear,
    ReLU,
    Sigmoid,
)
from .loss import bce_loss, sigmoid_bce_with_logits
from .optim import SGD

__all__ = [
    "Tensor",
    "Layer",
    "Conv2d",
    "BatchNorm2d",
    "ReLU",
    "Sigmoid",
    "AvgPool2d",
    "GlobalAvgPool",
    "ChannelConcat",
    "Linear",
    "bce_loss",
    "sigmoid_bce_with_logits",
    "SGD",
]
