"""Autodiff engine, layers, optimizer, and weight serialization."""

from .autodiff import Tensor, concat, conv2d, conv3d, maxpool2d, softplus
from .gradcheck import check_gradients, max_relative_error, numeric_gradient
from .layers import (
    ALPHA_EPS,
    Conv2d,
    Conv3d,
    ImageEncoder,
    Linear,
    MlpHead,
    Module,
    SubbandCnn,
    TemporalCnn,
    global_avg_std_pool,
    softplus_inverse,
)
from .optim import Adam, AdamState, adam_step
from .resnet import BasicBlock, FrozenBatchNorm, ResnetStages
from .weights import load_weights, read_weight_file, save_weights

__all__ = [
    "Tensor", "concat", "conv2d", "conv3d", "maxpool2d", "softplus",
    "check_gradients", "max_relative_error", "numeric_gradient",
    "ALPHA_EPS", "Conv2d", "Conv3d", "ImageEncoder", "Linear", "MlpHead",
    "Module", "SubbandCnn", "TemporalCnn", "global_avg_std_pool",
    "softplus_inverse",
    "Adam", "AdamState", "adam_step",
    "BasicBlock", "FrozenBatchNorm", "ResnetStages",
    "load_weights", "read_weight_file", "save_weights",
]
