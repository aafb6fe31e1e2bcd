"""MXDoG abstraction filter and abstract style transfer by pixel-space optimization."""

from .featurenet import FeatureNet, backward, forward, make_test_net
from .filters import (
    MxdogParams,
    dog,
    gaussian_blur,
    morph_filter,
    mxdog,
    soft_mxdog,
    threshold_xdog,
    xdog,
)
from .losses import LossBreakdown, LossWeights, gram, precompute_targets, total_loss_and_grad
from .optimizer import AdamState, StylizeConfig, adam_step, gradcheck, stylize
from .tensor_io import ConvParams, load_image, read_weights, save_image, write_weights

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ConvParams",
    "FeatureNet",
    "LossBreakdown",
    "LossWeights",
    "MxdogParams",
    "StylizeConfig",
    "adam_step",
    "backward",
    "dog",
    "forward",
    "gaussian_blur",
    "gradcheck",
    "gram",
    "load_image",
    "make_test_net",
    "morph_filter",
    "mxdog",
    "precompute_targets",
    "read_weights",
    "save_image",
    "soft_mxdog",
    "stylize",
    "threshold_xdog",
    "total_loss_and_grad",
    "write_weights",
    "xdog",
]
