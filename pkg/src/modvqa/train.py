"""Minibatch training with rectifier dropout, PLCC loss, Adam + step decay.

Each iteration draws one (u_s, u_t) pair shared across the batch,
forwards only the branches the draw keeps active, and optimizes the
combined rectified score.  Validation runs all four scores in inference
mode after every epoch; the returned model is the epoch with the best
validation rank correlation of the combined score.

Per-clip model inputs (resized key frames, upsampled subbands, chunks)
are deterministic, so they are prepared once and cached in memory.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Iterable

import numpy as np

from .errors import DataError, NumericError
from .media import DatasetManifest, ManifestRow, load_clip, sample_chunks, sample_key_frames
from .metrics import srcc
from .nn import Adam, Tensor
from .pyramid import compute_rho
from .rectify import (
    DropoutDraw,
    QualityModel,
    RectifierOutput,
    base_scores_batch,
    combine,
    crop_base_frames,
    prepare_base_frames,
    prepare_subbands,
    spatial_outputs_batch,
    temporal_outputs_batch,
)

__all__ = ["TrainConfig", "TrainLogRow", "TrainResult", "plcc_loss", "train_epochs", "ClipCache"]

PLCC_VAR_EPS = 1e-8


@dataclass
class TrainConfig:
    """Optimization and model-shape settings.

    Defaults are the full-scale training protocol; the toy benchmark
    configs override the scale-sensitive ones."""

    batch_size: int = 16
    lr: float = 1e-5
    lr_decay: float = 0.9
    lr_decay_every: int = 2
    epochs: int = 30
    p_s: float = 0.2
    p_t: float = 0.2
    m_keyframes: int = 8
    k_levels: int = 4
    chunk_len: int = 16
    base_size: int = 224
    hv: int = 224
    wv: int = 224
    hidden_dim: int = 64
    image_channels: tuple[int, ...] = (16, 32, 64)
    subband_channels: tuple[int, ...] = (8, 16)
    temporal_channels: tuple[int, ...] = (16, 32)
    rho_mode: str = "linear"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise DataError("batch_size must be >= 2 (the loss needs two points)")
        for p in (self.p_s, self.p_t):
            if not 0.0 <= p <= 1.0:
                raise DataError(f"dropout probability out of range: {p}")
        if self.epochs < 1 or self.m_keyframes < 1 or self.k_levels < 1:
            raise DataError("epochs, m_keyframes and k_levels must be >= 1")
        if self.chunk_len < 1 or min(self.base_size, self.hv, self.wv) < 1:
            raise DataError("chunk_len and crop sizes must be >= 1")
        if self.rho_mode not in ("linear", "geometric"):
            raise DataError(f"rho_mode must be linear or geometric, got {self.rho_mode}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown config keys: {', '.join(sorted(unknown))}")
        d = dict(d)
        for key in ("image_channels", "subband_channels", "temporal_channels"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("image_channels", "subband_channels", "temporal_channels"):
            d[key] = list(d[key])
        return d


@dataclass
class TrainLogRow:
    epoch: int
    lr: float
    train_loss: float
    srcc_qb: float
    srcc_qs: float
    srcc_qt: float
    srcc_qst: float


@dataclass
class TrainResult:
    model: QualityModel
    log: list[TrainLogRow]
    best_epoch: int
    best_val_srcc: float


def plcc_loss(pred: Tensor, mos: np.ndarray) -> Tensor:
    """(1 - pearson(pred, mos)) / 2 with a variance floor, differentiable."""
    m = np.asarray(mos, dtype=np.float64).reshape(-1)
    if m.size < 2:
        raise DataError(f"plcc_loss needs at least 2 points, got {m.size}")
    if np.all(m == m[0]):
        raise DataError("plcc_loss is undefined for an all-equal label batch")
    pc = pred - pred.mean()
    mt = Tensor(m.astype(pred.data.dtype))
    mc = mt - mt.mean()
    cov = (pc * mc).sum()
    denom = ((pc * pc).sum() + PLCC_VAR_EPS).sqrt() * ((mc * mc).sum() + PLCC_VAR_EPS).sqrt()
    return (1.0 - cov / denom) * 0.5


@dataclass
class ClipInputs:
    clip_id: str
    scene_id: str
    mos: float
    base_resized: np.ndarray  # (M, h', w', 3) pre-crop
    subbands: np.ndarray | None  # (M*K, H, W, 3)
    chunks: np.ndarray | None  # (M, L, hv, wv, 3)


class ClipCache:
    """Prepared model inputs for a set of manifest rows.

    A rectifier with dropout probability 1 can never fire and never
    train, so its inputs are skipped entirely (need_spatial /
    need_temporal come from the config).
    """

    def __init__(self, manifest: DatasetManifest, rows: Iterable[ManifestRow],
                 config: TrainConfig, workers: int = 0):
        rows = list(rows)
        need_spatial = config.p_s < 1.0
        need_temporal = config.p_t < 1.0

        def build(row: ManifestRow) -> ClipInputs:
            video = load_clip(manifest.clip_dir(row))
            ks = sample_key_frames(video, config.m_keyframes)
            subbands = None
            if need_spatial:
                rho = compute_rho(
                    video.height, video.width, config.base_size, config.base_size,
                    config.k_levels, config.rho_mode,
                )
                subbands = prepare_subbands(ks, rho, config.k_levels).astype(np.float32)
            chunks = None
            if need_temporal:
                chunks = sample_chunks(
                    video, ks, config.chunk_len, config.hv, config.wv
                ).chunks.astype(np.float32)
            return ClipInputs(
                clip_id=video.clip_id,
                scene_id=row.scene_id,
                mos=row.mos,
                base_resized=prepare_base_frames(ks, config.base_size).astype(np.float32),
                subbands=subbands,
                chunks=chunks,
            )

        if workers and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                self.clips = list(pool.map(build, rows))
        else:
            self.clips = [build(r) for r in rows]
        self.mos = np.array([c.mos for c in self.clips], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.clips)

    def batch_arrays(self, indices: np.ndarray, crop_mode: str,
                     rng: np.random.Generator | None, config: TrainConfig):
        """Stack crops/subbands/chunks for the given clips."""
        clips = [self.clips[i] for i in indices]
        try:
            crops = np.stack([
                crop_base_frames(c.base_resized, config.base_size, crop_mode, rng)
                for c in clips
            ])
            subbands = (
                np.stack([c.subbands for c in clips])
                if clips[0].subbands is not None else None
            )
            chunks = (
                np.stack([c.chunks for c in clips])
                if clips[0].chunks is not None else None
            )
        except ValueError as e:
            raise DataError(
                "clips in one batch must share a common resolution and frame count"
            ) from e
        mos = np.array([c.mos for c in clips], dtype=np.float64)
        return crops, subbands, chunks, mos


def forward_batch(model: QualityModel, crops, subbands, chunks, draw: DropoutDraw,
                  use_spatial: bool = True, use_temporal: bool = True):
    """Quality tensors (q_b, q_s, q_t, q_st) for one stacked batch.

    Branches whose rectifier is inactive are never forwarded.  A branch
    disabled for the whole run (dropout probability 1) is replaced by
    its exact initial identity output (scale 1, shift 0): its head is
    zero-initialized and never receives gradient, so this is the same
    result without the forward cost.
    """
    q_b = base_scores_batch(model, crops)
    s_out = t_out = None
    q_s = q_t = None
    if draw.active_s:
        if use_spatial:
            alpha_s, beta_s = spatial_outputs_batch(model, subbands)
        else:
            alpha_s, beta_s = 1.0, 0.0
        s_out = RectifierOutput(alpha=alpha_s, beta=beta_s)
        q_s = alpha_s * q_b + beta_s
    if draw.active_t:
        if use_temporal:
            alpha_t, beta_t = temporal_outputs_batch(model, chunks)
        else:
            alpha_t, beta_t = 1.0, 0.0
        t_out = RectifierOutput(alpha=alpha_t, beta=beta_t)
        q_t = alpha_t * q_b + beta_t
    _, _, q_st = combine(q_b, s_out, t_out, draw)
    return q_b, q_s, q_t, q_st


def _score_split(model: QualityModel, cache: ClipCache, indices: np.ndarray,
                 config: TrainConfig) -> np.ndarray:
    """Inference scores for the given clips: array (n, 4) of q_b/q_s/q_t/q_st."""
    out = np.zeros((len(indices), 4))
    draw = DropoutDraw.inference()
    use_spatial = config.p_s < 1.0
    use_temporal = config.p_t < 1.0
    for start in range(0, len(indices), config.batch_size):
        sel = indices[start : start + config.batch_size]
        crops, subbands, chunks, _ = cache.batch_arrays(sel, "center", None, config)
        q_b, q_s, q_t, q_st = forward_batch(
            model, crops, subbands, chunks, draw, use_spatial, use_temporal
        )
        rows = slice(start, start + len(sel))
        out[rows, 0] = q_b.data
        out[rows, 1] = q_s.data
        out[rows, 2] = q_t.data
        out[rows, 3] = q_st.data
    return out


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator,
                   mos: np.ndarray) -> list[np.ndarray]:
    """Shuffled batch index lists; all-equal-label batches are redrawn."""
    perm = rng.permutation(n)
    batches = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches[-1]) < 2:
        batches.pop()
    fixed = []
    for batch in batches:
        attempts = 0
        while np.unique(mos[batch]).size == 1:
            warnings.warn("all-equal label batch, resampling")
            attempts += 1
            if attempts > 10:
                raise DataError("could not draw a batch with label variance")
            batch = rng.permutation(n)[: len(batch)]
        fixed.append(batch)
    return fixed


def train_epochs(config: TrainConfig, model: QualityModel,
                 manifest: DatasetManifest, split, workers: int = 0,
                 cache: ClipCache | None = None,
                 val_cache: ClipCache | None = None) -> TrainResult:
    """Optimize on split.train_rows, select the best epoch on split.val_rows.

    split provides train_rows and val_rows (lists of ManifestRow); see
    evaluation.SplitPlan.  Pre-built caches may be passed to share
    decoded inputs across calls.
    """
    train_rows = list(split.train_rows)
    val_rows = list(split.val_rows)
    if not train_rows or not val_rows:
        raise DataError("split must have nonempty train and val parts")
    if cache is None:
        cache = ClipCache(manifest, train_rows, config, workers)
    if val_cache is None:
        val_cache = ClipCache(manifest, val_rows, config, workers)

    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(100,))
    )
    dropout_rng = np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(101,))
    )
    crop_rng = np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(102,))
    )

    optimizer = Adam(model.parameters(), lr=config.lr)
    val_mos = val_cache.mos
    log: list[TrainLogRow] = []
    best_srcc = -np.inf
    best_epoch = 0
    best_state: dict[str, np.ndarray] = {
        name: p.data.copy() for name, p in model.named_parameters().items()
    }

    for epoch in range(1, config.epochs + 1):
        optimizer.lr = config.lr * config.lr_decay ** ((epoch - 1) // config.lr_decay_every)
        batches = _epoch_batches(len(cache), config.batch_size, shuffle_rng, cache.mos)
        losses = []
        for batch in batches:
            draw = DropoutDraw.sample(dropout_rng, config.p_s, config.p_t)
            crops, subbands, chunks, mos = cache.batch_arrays(
                batch, "random", crop_rng, config
            )
            _, _, _, q_st = forward_batch(model, crops, subbands, chunks, draw)
            loss = plcc_loss(q_st, mos)
            if not np.isfinite(loss.data):
                ids = [cache.clips[i].clip_id for i in batch]
                raise NumericError(f"non-finite loss in epoch {epoch}, batch {ids}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.data))

        scores = _score_split(model, val_cache, np.arange(len(val_cache)), config)
        row = TrainLogRow(
            epoch=epoch,
            lr=optimizer.lr,
            train_loss=float(np.mean(losses)),
            srcc_qb=srcc(scores[:, 0], val_mos),
            srcc_qs=srcc(scores[:, 1], val_mos),
            srcc_qt=srcc(scores[:, 2], val_mos),
            srcc_qst=srcc(scores[:, 3], val_mos),
        )
        log.append(row)
        if row.srcc_qst > best_srcc:
            best_srcc = row.srcc_qst
            best_epoch = epoch
            best_state = {
                name: p.data.copy() for name, p in model.named_parameters().items()
            }

    for name, p in model.named_parameters().items():
        p.data = best_state[name]
        p.grad = None
    return TrainResult(model=model, log=log, best_epoch=best_epoch, best_val_srcc=best_srcc)
