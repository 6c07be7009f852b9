"""ResNet-18 first-two-stages graph for imported pretrained weights.

Parameter names mirror the source checkpoint layout exactly
(conv1.weight, bn1.running_mean, layer1.0.conv1.weight, ...), so an
exporter can map tensors one-to-one with no silent reordering.  Batch
norms run frozen (inference statistics); convolutions carry no bias,
as in the source architecture.  Output is a 128-channel feature map at
1/8 resolution, usable as a spatial-branch backbone behind avg+std
pooling.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, conv2d, maxpool2d
from .layers import Module

__all__ = ["FrozenBatchNorm", "BasicBlock", "ResnetStages"]

BN_EPS = 1e-5


def _param(*shape: int, fill: float = 0.0) -> Tensor:
    return Tensor(np.full(shape, fill, dtype=np.float32), requires_grad=True)


class FrozenBatchNorm(Module):
    """Inference-mode batch norm: (x - mean) / sqrt(var + eps) * w + b."""

    def __init__(self, channels: int):
        self.weight = _param(channels, fill=1.0)
        self.bias = _param(channels)
        self.running_mean = _param(channels)
        self.running_var = _param(channels, fill=1.0)

    def __call__(self, x: Tensor) -> Tensor:
        c = self.weight.shape[0]
        scale = self.weight / (self.running_var + BN_EPS).sqrt()
        shift = self.bias - self.running_mean * scale
        return x * scale.reshape(1, c, 1, 1) + shift.reshape(1, c, 1, 1)


class _Conv(Module):
    """Bias-free convolution with fixed stride/padding."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, padding: int):
        self.weight = _param(out_ch, in_ch, kernel, kernel)
        self.stride = (stride, stride)
        self.padding = (padding, padding)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, None, self.stride, self.padding)


class BasicBlock(Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        self.conv1 = _Conv(in_ch, out_ch, 3, stride, 1)
        self.bn1 = FrozenBatchNorm(out_ch)
        self.conv2 = _Conv(out_ch, out_ch, 3, 1, 1)
        self.bn2 = FrozenBatchNorm(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.downsample = [_Conv(in_ch, out_ch, 1, stride, 0), FrozenBatchNorm(out_ch)]
        else:
            self.downsample = []

    def __call__(self, x: Tensor) -> Tensor:
        out = self.bn1(self.conv1(x)).relu()
        out = self.bn2(self.conv2(out))
        skip = x
        for stage in self.downsample:
            skip = stage(skip)
        return (out + skip).relu()


class ResnetStages(Module):
    """Stem plus the first two residual stages of ResNet-18."""

    kind = "subband_cnn"
    feature_dim = 128

    def __init__(self):
        self.conv1 = _Conv(3, 64, 7, 2, 3)
        self.bn1 = FrozenBatchNorm(64)
        self.layer1 = [BasicBlock(64, 64), BasicBlock(64, 64)]
        self.layer2 = [BasicBlock(64, 128, stride=2), BasicBlock(128, 128)]

    def __call__(self, x: Tensor) -> Tensor:
        x = self.bn1(self.conv1(x)).relu()
        x = maxpool2d(x, kernel=3, stride=2, padding=1)
        for block in self.layer1 + self.layer2:
            x = block(x)
        return x
