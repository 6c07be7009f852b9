"""Layers and the three toy backbones behind the branch interfaces.

Backbones expose kind + feature_dim and a forward over batched inputs:
  image_encoder  (N, 3, H, W)    -> (N, feature_dim)   base branch
  subband_cnn    (N, 3, H, W)    -> (N, C, H', W')     spatial branch (pooled by caller)
  temporal_cnn   (N, 3, T, H, W) -> (N, feature_dim)   temporal branch

Initialization is Kaiming-uniform with zero biases.  Rectifier MLP heads
zero their final layer and preset its bias so the first forward emits
exactly (alpha=1, beta=0).
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import DataError
from .autodiff import Tensor, concat, conv2d, conv3d, softplus

__all__ = [
    "Module",
    "Linear",
    "Conv2d",
    "Conv3d",
    "MlpHead",
    "ImageEncoder",
    "SubbandCnn",
    "TemporalCnn",
    "global_avg_std_pool",
    "ALPHA_EPS",
    "softplus_inverse",
]

ALPHA_EPS = 1e-4
POOL_VAR_EPS = 1e-8


class Module:
    """Parameter container; children are discovered from attribute order."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def astype(self, dtype) -> "Module":
        """Convert all parameters in place (f32 training vs f64 checking)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


def _kaiming_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator,
                     dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.weight = Tensor(
            _kaiming_uniform((out_dim, in_dim), in_dim, rng, dtype), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight.transpose() + self.bias


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int,
                 rng: np.random.Generator, dtype=np.float32):
        fan_in = in_ch * kernel * kernel
        self.weight = Tensor(
            _kaiming_uniform((out_ch, in_ch, kernel, kernel), fan_in, rng, dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self.stride = (stride, stride)
        self.padding = (kernel // 2, kernel // 2)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Conv3d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int,
                 stride: tuple[int, int, int], rng: np.random.Generator,
                 dtype=np.float32):
        fan_in = in_ch * kernel**3
        self.weight = Tensor(
            _kaiming_uniform((out_ch, in_ch, kernel, kernel, kernel), fan_in, rng, dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = (kernel // 2,) * 3

    def __call__(self, x: Tensor) -> Tensor:
        return conv3d(x, self.weight, self.bias, self.stride, self.padding)


def global_avg_std_pool(x: Tensor) -> Tensor:
    """Per-channel mean and floored std over spatial dims.

    (N, C, H, W) -> (N, 2C) or (C, H, W) -> (2C,); std = sqrt(var + 1e-8)
    with population variance.
    """
    single = x.data.ndim == 3
    if single:
        x = x.reshape((1,) + x.data.shape)
    if x.data.ndim != 4:
        raise DataError(f"expected (N, C, H, W) features, got {x.data.shape}")
    n, c = x.data.shape[:2]
    mu = x.mean(axis=(2, 3))
    centered = x - mu.reshape(n, c, 1, 1)
    var = (centered * centered).mean(axis=(2, 3))
    sigma = (var + POOL_VAR_EPS).sqrt()
    out = concat([mu, sigma], axis=1)
    return out.reshape(2 * c) if single else out


def softplus_inverse(y: float) -> float:
    """x such that log(1 + exp(x)) == y, for y > 0."""
    return y + math.log1p(-math.exp(-y))


class MlpHead(Module):
    """Two affine layers with a ReLU between.

    out_dim=1 scores quality; out_dim=2 emits raw (alpha, beta) for a
    rectifier, in which case rectifier_init zeroes the final layer and
    presets its bias so softplus(raw_a) + ALPHA_EPS == 1 and beta == 0.
    """

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int,
                 rng: np.random.Generator, dtype=np.float32,
                 rectifier_init: bool = False):
        if out_dim not in (1, 2):
            raise DataError(f"head out_dim must be 1 or 2, got {out_dim}")
        self.fc1 = Linear(in_dim, hidden_dim, rng, dtype)
        self.fc2 = Linear(hidden_dim, out_dim, rng, dtype)
        if rectifier_init:
            if out_dim != 2:
                raise DataError("rectifier_init requires out_dim == 2")
            self.fc2.weight.data[:] = 0.0
            self.fc2.bias.data[0] = softplus_inverse(1.0 - ALPHA_EPS)
            self.fc2.bias.data[1] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).relu())


class ImageEncoder(Module):
    """Base-branch encoder: three stride-2 conv+ReLU stages, avg pooled."""

    kind = "image_encoder"

    def __init__(self, rng: np.random.Generator, channels=(16, 32, 64),
                 dtype=np.float32):
        chans = [3, *channels]
        self.stages = [
            Conv2d(chans[i], chans[i + 1], 3, 2, rng, dtype) for i in range(len(channels))
        ]
        self.feature_dim = channels[-1]

    def __call__(self, x: Tensor) -> Tensor:
        for stage in self.stages:
            x = stage(x).relu()
        return x.mean(axis=(2, 3))


class SubbandCnn(Module):
    """Spatial-branch feature extractor: two stride-2 conv+ReLU stages.

    Returns the feature map; the spatial rectifier applies avg+std pooling.
    """

    kind = "subband_cnn"

    def __init__(self, rng: np.random.Generator, channels=(8, 16), dtype=np.float32):
        chans = [3, *channels]
        self.stages = [
            Conv2d(chans[i], chans[i + 1], 3, 2, rng, dtype) for i in range(len(channels))
        ]
        self.feature_dim = channels[-1]

    def __call__(self, x: Tensor) -> Tensor:
        for stage in self.stages:
            x = stage(x).relu()
        return x


class TemporalCnn(Module):
    """Temporal-branch encoder: two 3x3x3 conv+ReLU stages, avg pooled.

    The per-pixel temporal mean of each chunk is removed first, so the
    conv stages operate on pure frame-to-frame change; without this the
    pooled features are dominated by static content and the branch is
    barely motion-selective at this depth.
    """

    kind = "temporal_cnn"

    def __init__(self, rng: np.random.Generator, channels=(16, 32), dtype=np.float32):
        chans = [3, *channels]
        strides = [(1, 2, 2), (2, 2, 2)]
        self.stages = [
            Conv3d(chans[i], chans[i + 1], 3, strides[i % 2], rng, dtype)
            for i in range(len(channels))
        ]
        self.feature_dim = channels[-1]

    def __call__(self, x: Tensor) -> Tensor:
        x = x - x.mean(axis=2, keepdims=True)
        for stage in self.stages:
            x = stage(x).relu()
        return x.mean(axis=(2, 3, 4))
