"""Bicubic fractional resampling and Laplacian pyramid decomposition.

The pyramid downsamples each level by a single ratio rho (possibly
fractional), stores the bandpass difference images, and keeps the final
lowpass image as the residual.  Resampling is separable bicubic with
a = -0.5; when downsampling, the kernel support is stretched by the
scale ratio so the resample acts as the combined lowpass + subsampling
operator.  Folding the recursion back up reconstructs the input exactly
(up to float rounding) because the bandpass images are literal
differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = [
    "ResampleSpec",
    "LaplacianPyramid",
    "bicubic_resample",
    "compute_rho",
    "build_pyramid",
    "reconstruct",
    "upsample_subbands",
]

KERNEL_A = -0.5


def _cubic_kernel(x: np.ndarray) -> np.ndarray:
    """Catmull-Rom cubic: a = -0.5, support [-2, 2]."""
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    a = KERNEL_A
    inner = (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0
    outer = a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a
    return np.where(ax <= 1.0, inner, np.where(ax < 2.0, outer, 0.0))


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Tap indices and weights for resampling one axis from n_in to n_out.

    Output coordinates are half-pixel centered.  For downsampling the
    kernel is stretched by the scale ratio (antialiasing); weights are
    normalized to sum to one so constants are preserved exactly.
    Returns (idx, w) with shape (n_out, taps); idx is clamped to the
    valid range (edge samples repeat).
    """
    scale = n_in / n_out
    support = max(1.0, scale)  # kernel stretch for downsampling
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    radius = 2.0 * support
    left = np.ceil(src - radius).astype(np.int64)
    taps = int(np.floor(2.0 * radius)) + 2
    offsets = np.arange(taps, dtype=np.int64)
    idx = left[:, None] + offsets[None, :]
    dist = (idx.astype(np.float64) - src[:, None]) / support
    w = _cubic_kernel(dist)
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, n_in - 1)
    return idx, w


def bicubic_resample(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resample of an H x W x C (or H x W) image."""
    if out_h < 1 or out_w < 1:
        raise DataError(f"output size must be positive, got {out_h}x{out_w}")
    arr = np.asarray(img)
    if arr.ndim == 2:
        return _resample_stack(arr[None, :, :, None], out_h, out_w)[0, :, :, 0]
    if arr.ndim != 3:
        raise DataError(f"expected HxW or HxWxC image, got shape {arr.shape}")
    return _resample_stack(arr[None], out_h, out_w)[0]


def _resample_stack(stack: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample a batch of images: (N, H, W, C) -> (N, out_h, out_w, C)."""
    n, h, w, c = stack.shape
    dtype = stack.dtype if stack.dtype in (np.float32, np.float64) else np.float64
    iy, wy = _axis_weights(h, out_h)
    ix, wx = _axis_weights(w, out_w)
    wy = wy.astype(dtype)
    wx = wx.astype(dtype)
    arr = stack.astype(dtype, copy=False)
    # rows: gather (N, out_h, taps, W, C), contract the taps axis
    tmp = np.einsum("yt,nytwc->nywc", wy, arr[:, iy, :, :], optimize=True)
    out = np.einsum("xt,nyxtc->nyxc", wx, tmp[:, :, ix, :], optimize=True)
    return out


def compute_rho(h: int, w: int, hb: int, wb: int, k_levels: int, mode: str = "linear") -> float:
    """Per-level downsampling ratio from actual size to the base-input size.

    mode='linear' is the written rule min(h,w)/(min(hb,wb)*K); 'geometric'
    spaces the K levels so the last lands on min(hb,wb).  Ratios below 1
    clamp to 1 (never build an upsampling pyramid).
    """
    if min(h, w, hb, wb, k_levels) <= 0:
        raise DataError("compute_rho requires positive sizes and level count")
    if mode == "linear":
        rho = min(h, w) / (min(hb, wb) * k_levels)
    elif mode == "geometric":
        rho = (min(h, w) / min(hb, wb)) ** (1.0 / k_levels)
    else:
        raise DataError(f"unknown rho mode {mode!r}")
    return max(1.0, rho)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class ResampleSpec:
    """Per-level downsampling ratio plus the kernel convention in use."""

    rho: float
    kernel_a: float = KERNEL_A

    def __post_init__(self) -> None:
        if self.rho <= 0:
            raise DataError(f"rho must be positive, got {self.rho}")


@dataclass
class LaplacianPyramid:
    """K bandpass subbands plus the final lowpass residual.

    subbands[k] has the size of level k; residual has the size of level K.
    level_sizes lists all K+1 level sizes, coarsest last.
    """

    subbands: list[np.ndarray]
    residual: np.ndarray
    level_sizes: list[tuple[int, int]] = field(default_factory=list)

    @property
    def k_levels(self) -> int:
        return len(self.subbands)


def _level_sizes(h: int, w: int, rho: float, k_levels: int) -> list[tuple[int, int]]:
    sizes = [(h, w)]
    for _ in range(k_levels):
        ch, cw = sizes[-1]
        sizes.append((max(1, _round_half_up(ch / rho)), max(1, _round_half_up(cw / rho))))
    return sizes


def build_pyramid(frame: np.ndarray, rho: float, k_levels: int) -> LaplacianPyramid:
    """Decompose one frame into k_levels bandpass images plus a residual."""
    arr = np.asarray(frame)
    if k_levels < 1:
        raise DataError(f"k_levels must be >= 1, got {k_levels}")
    if arr.ndim not in (2, 3) or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"frame must be a nonempty HxW[xC] array, got shape {arr.shape}")
    if rho <= 0:
        raise DataError(f"rho must be positive, got {rho}")
    sizes = _level_sizes(arr.shape[0], arr.shape[1], rho, k_levels)
    levels = [arr]
    for h, w in sizes[1:]:
        levels.append(bicubic_resample(levels[-1], h, w))
    subbands = []
    for k in range(k_levels):
        h, w = sizes[k]
        subbands.append(levels[k] - bicubic_resample(levels[k + 1], h, w))
    return LaplacianPyramid(subbands=subbands, residual=levels[-1], level_sizes=sizes)


def reconstruct(p: LaplacianPyramid) -> np.ndarray:
    """Fold the pyramid back up: the exact inverse of build_pyramid."""
    cur = p.residual
    for k in range(p.k_levels - 1, -1, -1):
        h, w = p.level_sizes[k]
        cur = p.subbands[k] + bicubic_resample(cur, h, w)
    return cur


def upsample_subbands(p: LaplacianPyramid, h: int, w: int) -> list[np.ndarray]:
    """All bandpass subbands resampled to h x w; the residual is dropped."""
    return [bicubic_resample(z, h, w) for z in p.subbands]
