"""Base quality prediction, the two rectifiers, and their combination.

The base branch scores downsampled key-frame crops and averages them.
Each rectifier maps branch features to a raw (a, b) pair; the scale is
softplus(a) + 1e-4 so it stays positive, and rectifier heads start as
exact identities (scale 1, shift 0).  Active rectifiers combine by the
geometric mean of scales and arithmetic mean of shifts; with both
dropped the base score passes through untouched.

combine() accepts plain floats or autodiff Tensors, so the same algebra
serves inference, tests, and the training graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import DataError
from .media import (
    ChunkSet,
    KeyFrameSet,
    VideoTensor,
    crop_square,
    resize_short_side_crop,
    sample_chunks,
    sample_key_frames,
    short_side_resize,
)
from .nn import (
    ALPHA_EPS,
    ImageEncoder,
    MlpHead,
    Module,
    SubbandCnn,
    TemporalCnn,
    Tensor,
    global_avg_std_pool,
    softplus,
)
from .pyramid import build_pyramid, compute_rho, upsample_subbands

__all__ = [
    "RectifierOutput",
    "DropoutDraw",
    "QualityQuad",
    "QualityModel",
    "combine",
    "base_quality",
    "spatial_rectifier",
    "temporal_rectifier",
    "predict",
]

Scalar = Union[float, Tensor]


@dataclass
class RectifierOutput:
    """One affine correction: quality' = alpha * quality + beta."""

    alpha: Scalar
    beta: Scalar

    def __post_init__(self) -> None:
        if not isinstance(self.alpha, Tensor) and self.alpha <= 0:
            raise DataError(f"rectifier scale must be positive, got {self.alpha}")


@dataclass(frozen=True)
class DropoutDraw:
    """Uniform draws and thresholds deciding which rectifiers are active."""

    u_s: float
    u_t: float
    p_s: float
    p_t: float
    active_s: bool = field(init=False)
    active_t: bool = field(init=False)

    def __post_init__(self) -> None:
        for u in (self.u_s, self.u_t):
            if not 0.0 <= u < 1.0:
                raise DataError(f"dropout draw must lie in [0, 1), got {u}")
        for p in (self.p_s, self.p_t):
            if not 0.0 <= p <= 1.0:
                raise DataError(f"dropout probability must lie in [0, 1], got {p}")
        object.__setattr__(self, "active_s", self.u_s >= self.p_s)
        object.__setattr__(self, "active_t", self.u_t >= self.p_t)

    @classmethod
    def sample(cls, rng: np.random.Generator, p_s: float, p_t: float) -> "DropoutDraw":
        return cls(u_s=float(rng.random()), u_t=float(rng.random()), p_s=p_s, p_t=p_t)

    @classmethod
    def inference(cls) -> "DropoutDraw":
        """Both rectifiers enabled (u = p = 0, so the indicators fire)."""
        return cls(u_s=0.0, u_t=0.0, p_s=0.0, p_t=0.0)


@dataclass
class QualityQuad:
    q_b: float
    q_s: float
    q_t: float
    q_st: float


def _lift(v: Scalar) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=np.float64))


def combine(
    q_b: Scalar,
    s: RectifierOutput | None,
    t: RectifierOutput | None,
    draw: DropoutDraw,
) -> tuple[Scalar, Scalar, Scalar]:
    """Merge active rectifiers into (alpha_st, beta_st, q_st).

    alpha_st is exp(mean of log alpha) over the active rectifiers
    (single-active passes its alpha through untouched); beta_st is the
    arithmetic mean.  With both dropped, q_st is q_b itself.
    """
    active: list[RectifierOutput] = []
    for name, out, flag in (("spatial", s, draw.active_s), ("temporal", t, draw.active_t)):
        if flag:
            if out is None:
                raise DataError(f"{name} rectifier is active but no output was given")
            active.append(out)
    tensor_mode = any(
        isinstance(v, Tensor)
        for v in [q_b, *(o.alpha for o in active), *(o.beta for o in active)]
    )
    if not active:
        if tensor_mode:
            one = Tensor(np.asarray(1.0, dtype=np.float64))
            zero = Tensor(np.asarray(0.0, dtype=np.float64))
            return one, zero, q_b
        return 1.0, 0.0, q_b
    alphas = [_lift(o.alpha) for o in active]
    betas = [_lift(o.beta) for o in active]
    for a in alphas:
        if np.any(a.data <= 0):
            raise DataError("rectifier scale must be positive for the geometric mean")
    n = len(active)
    if n == 1:
        alpha_st = alphas[0]
        beta_st = betas[0]
    else:
        log_sum = alphas[0].log()
        beta_sum = betas[0]
        for a, b in zip(alphas[1:], betas[1:]):
            log_sum = log_sum + a.log()
            beta_sum = beta_sum + b
        alpha_st = (log_sum * (1.0 / n)).exp()
        beta_st = beta_sum * (1.0 / n)
    q_st = alpha_st * _lift(q_b) + beta_st
    if tensor_mode:
        return alpha_st, beta_st, q_st
    return float(alpha_st.data), float(beta_st.data), float(q_st.data)


class QualityModel(Module):
    """The three branches plus their heads, built from one config object.

    config must provide m_keyframes, k_levels, base_size, hv, wv,
    chunk_len, hidden_dim, image_channels, subband_channels,
    temporal_channels, rho_mode, and seed.
    """

    def __init__(self, config, dtype=np.float32):
        seeds = np.random.SeedSequence(config.seed).spawn(6)
        rngs = [np.random.default_rng(s) for s in seeds]
        self.base_encoder = ImageEncoder(rngs[0], tuple(config.image_channels), dtype)
        self.base_head = MlpHead(
            self.base_encoder.feature_dim, config.hidden_dim, 1, rngs[1], dtype
        )
        self.spatial_cnn = SubbandCnn(rngs[2], tuple(config.subband_channels), dtype)
        spatial_in = (
            config.m_keyframes * config.k_levels * 2 * self.spatial_cnn.feature_dim
        )
        self.spatial_head = MlpHead(
            spatial_in, config.hidden_dim, 2, rngs[3], dtype, rectifier_init=True
        )
        self.temporal_cnn = TemporalCnn(rngs[4], tuple(config.temporal_channels), dtype)
        self.temporal_head = MlpHead(
            self.temporal_cnn.feature_dim, config.hidden_dim, 2, rngs[5], dtype,
            rectifier_init=True,
        )
        self.config = config

    # Feature layout note: spatial head input is the M x K pooled feature
    # sets concatenated frame-major, level-minor (index = frame * K + level).
    CONCAT_ORDER = "frame-major,level-minor"


# ---- batched branch forwards (shared by training and inference) ------


def base_scores_batch(model: QualityModel, crops: np.ndarray) -> Tensor:
    """(B, M, t, t, 3) crops -> (B,) mean per-frame quality scores."""
    b, m = crops.shape[:2]
    x = Tensor(crops.reshape((b * m,) + crops.shape[2:]).transpose(0, 3, 1, 2))
    scores = model.base_head(model.base_encoder(x))
    return scores.reshape(b, m).mean(axis=1)


def _head_to_rectifier(raw: Tensor) -> tuple[Tensor, Tensor]:
    """(B, 2) raw head output -> positive scale (B,) and shift (B,)."""
    b = raw.shape[0]
    sel_a = np.zeros((2, 1), dtype=raw.data.dtype)
    sel_b = np.zeros((2, 1), dtype=raw.data.dtype)
    sel_a[0, 0] = 1.0
    sel_b[1, 0] = 1.0
    raw_a = (raw @ Tensor(sel_a)).reshape(b)
    raw_b = (raw @ Tensor(sel_b)).reshape(b)
    alpha = softplus(raw_a) + ALPHA_EPS
    return alpha, raw_b


def spatial_outputs_batch(
    model: QualityModel, subbands: np.ndarray
) -> tuple[Tensor, Tensor]:
    """(B, M*K, H, W, 3) upsampled subbands -> alpha (B,), beta (B,)."""
    b, mk = subbands.shape[:2]
    x = Tensor(subbands.reshape((b * mk,) + subbands.shape[2:]).transpose(0, 3, 1, 2))
    pooled = global_avg_std_pool(model.spatial_cnn(x))  # (B*MK, 2C)
    flat = pooled.reshape(b, mk * pooled.shape[1])
    return _head_to_rectifier(model.spatial_head(flat))


def temporal_outputs_batch(
    model: QualityModel, chunks: np.ndarray
) -> tuple[Tensor, Tensor]:
    """(B, M, L, hv, wv, 3) chunks -> alpha (B,), beta (B,)."""
    b, m = chunks.shape[:2]
    x = Tensor(chunks.reshape((b * m,) + chunks.shape[2:]).transpose(0, 4, 1, 2, 3))
    feats = model.temporal_cnn(x)  # (B*M, F)
    pooled = feats.reshape(b, m, feats.shape[1]).mean(axis=1)
    return _head_to_rectifier(model.temporal_head(pooled))


# ---- input preparation ------------------------------------------------


def prepare_base_frames(
    keyframes: KeyFrameSet, target: int
) -> np.ndarray:
    """Short-side resize of each key frame, left uncropped: (M, h', w', 3)."""
    return np.stack([short_side_resize(f, target) for f in keyframes.frames])


def crop_base_frames(
    resized: np.ndarray, target: int, mode: str, rng: np.random.Generator | None = None
) -> np.ndarray:
    return np.stack([crop_square(f, target, mode, rng) for f in resized])


def prepare_subbands(keyframes: KeyFrameSet, rho: float, k_levels: int) -> np.ndarray:
    """Per-frame pyramids, subbands upsampled back to actual resolution.

    Stacked frame-major, level-minor: (M * K, H, W, 3).
    """
    h, w = keyframes.frames.shape[1:3]
    subs = []
    for f in keyframes.frames:
        p = build_pyramid(f, rho, k_levels)
        subs.extend(upsample_subbands(p, h, w))
    return np.stack(subs)


# ---- per-video operations ---------------------------------------------


def base_quality(
    keyframes: KeyFrameSet,
    encoder: ImageEncoder,
    head: MlpHead,
    mode: str = "center",
    rng: np.random.Generator | None = None,
    target: int = 224,
) -> float:
    """Mean per-key-frame score after resize/crop to target x target."""
    if keyframes.frames.shape[0] == 0:
        raise DataError("empty key frame set")
    crops = np.stack(
        [resize_short_side_crop(f, target, mode, rng) for f in keyframes.frames]
    )
    x = Tensor(crops.transpose(0, 3, 1, 2))
    scores = head(encoder(x))
    return float(scores.data.mean())


def spatial_rectifier(
    keyframes: KeyFrameSet,
    rho: float,
    k_levels: int,
    cnn: SubbandCnn,
    head: MlpHead,
) -> RectifierOutput:
    """Laplacian subband features at actual resolution -> (alpha_s, beta_s)."""
    if k_levels < 1:
        raise DataError(f"k_levels must be >= 1, got {k_levels}")
    subs = prepare_subbands(keyframes, rho, k_levels)
    x = Tensor(subs.transpose(0, 3, 1, 2))
    pooled = global_avg_std_pool(cnn(x))
    flat = pooled.reshape(1, subs.shape[0] * pooled.shape[1])
    alpha, beta = _head_to_rectifier(head(flat))
    return RectifierOutput(alpha=float(alpha.data[0]), beta=float(beta.data[0]))


def temporal_rectifier(
    chunks: ChunkSet, cnn: TemporalCnn, head: MlpHead
) -> RectifierOutput:
    """Chunk motion features at actual frame rate -> (alpha_t, beta_t)."""
    if chunks.chunks.shape[0] == 0:
        raise DataError("empty chunk set")
    x = Tensor(chunks.chunks.transpose(0, 4, 1, 2, 3))
    feats = cnn(x)
    pooled = feats.mean(axis=0).reshape(1, feats.shape[1])
    alpha, beta = _head_to_rectifier(head(pooled))
    return RectifierOutput(alpha=float(alpha.data[0]), beta=float(beta.data[0]))


def predict(
    video: VideoTensor,
    config,
    model: QualityModel,
    mode: str = "inference",
    rng: np.random.Generator | None = None,
) -> QualityQuad:
    """All four scores for one clip; both rectifiers always enabled."""
    if mode not in ("inference", "train"):
        raise DataError(f"unknown predict mode {mode!r}")
    crop_mode = "random" if mode == "train" else "center"
    ks = sample_key_frames(video, config.m_keyframes)
    q_b = base_quality(
        ks, model.base_encoder, model.base_head, crop_mode, rng, config.base_size
    )
    rho = compute_rho(
        video.height, video.width, config.base_size, config.base_size,
        config.k_levels, config.rho_mode,
    )
    s = spatial_rectifier(ks, rho, config.k_levels, model.spatial_cnn, model.spatial_head)
    cs = sample_chunks(video, ks, config.chunk_len, config.hv, config.wv)
    t = temporal_rectifier(cs, model.temporal_cnn, model.temporal_head)
    q_s = s.alpha * q_b + s.beta
    q_t = t.alpha * q_b + t.beta
    _, _, q_st = combine(q_b, s, t, DropoutDraw.inference())
    return QualityQuad(q_b=q_b, q_s=q_s, q_t=q_t, q_st=q_st)
