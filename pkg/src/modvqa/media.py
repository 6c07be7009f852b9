"""Clip decoding, frame/chunk sampling, and the base-path resize/crop.

A clip on disk is a directory of 8-bit RGB PNGs named %06d.png plus a
meta.json ({fps, num_frames, clip_id, scene_id}).  Decoded samples live
in [0, 1] as value/255.  Manifests are CSV files with the header
clip_path,mos,scene_id,fps,width,height; clip paths are resolved
relative to the manifest's directory.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .pyramid import _resample_stack

__all__ = [
    "VideoTensor",
    "KeyFrameSet",
    "ChunkSet",
    "ManifestRow",
    "DatasetManifest",
    "load_clip",
    "save_clip",
    "sample_key_frames",
    "sample_chunks",
    "resize_short_side_crop",
    "short_side_resize",
    "load_manifest",
    "write_manifest",
]

META_NAME = "meta.json"
FRAME_PATTERN = "{:06d}.png"


@dataclass
class VideoTensor:
    """Decoded clip: frames (N, H, W, 3) in [0, 1], plus identity and rate."""

    frames: np.ndarray
    fps: float
    clip_id: str = ""
    scene_id: str = ""

    def __post_init__(self) -> None:
        f = self.frames
        if f.ndim != 4 or f.shape[3] != 3:
            raise DataError(f"frames must be (N, H, W, 3), got {f.shape}")
        n, h, w, _ = f.shape
        if n < 1:
            raise DataError("clip has zero frames")
        if h < 8 or w < 8:
            raise DataError(f"frames must be at least 8x8, got {h}x{w}")
        if self.fps <= 0:
            raise DataError(f"fps must be positive, got {self.fps}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass
class KeyFrameSet:
    """Uniformly sampled key frames at actual resolution."""

    frames: np.ndarray  # (M, H, W, 3)
    indices: np.ndarray  # (M,) strictly increasing source indices


@dataclass
class ChunkSet:
    """Fixed-length frame windows centered on the key frames, resized."""

    chunks: np.ndarray  # (M, chunk_len, hv, wv, 3)
    center_indices: np.ndarray  # (M,)


def load_clip(path: str | Path) -> VideoTensor:
    """Decode a clip directory into a VideoTensor."""
    d = Path(path)
    meta_path = d / META_NAME
    if not meta_path.is_file():
        raise DataError(f"missing {META_NAME} in {d}")
    meta = json.loads(meta_path.read_text())
    n = int(meta["num_frames"])
    if n < 1:
        raise DataError(f"{meta_path} declares {n} frames")
    frames = []
    shape = None
    for i in range(n):
        fp = d / FRAME_PATTERN.format(i)
        if not fp.is_file():
            raise DataError(f"{d}: declared {n} frames but {fp.name} is missing")
        with Image.open(fp) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32)
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise DataError(f"{d}: frame {i} size {arr.shape} != {shape}")
        frames.append(arr / 255.0)
    return VideoTensor(
        frames=np.stack(frames),
        fps=float(meta["fps"]),
        clip_id=str(meta.get("clip_id", d.name)),
        scene_id=str(meta.get("scene_id", "")),
    )


def save_clip(v: VideoTensor, path: str | Path) -> None:
    """Write a VideoTensor as a clip directory (8-bit RGB PNGs + meta)."""
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.rint(v.frames * 255.0), 0, 255).astype(np.uint8)
    for i in range(v.num_frames):
        Image.fromarray(data[i], mode="RGB").save(d / FRAME_PATTERN.format(i))
    meta = {
        "fps": v.fps,
        "num_frames": v.num_frames,
        "clip_id": v.clip_id,
        "scene_id": v.scene_id,
    }
    (d / META_NAME).write_text(json.dumps(meta, indent=1) + "\n")


def sample_key_frames(v: VideoTensor, m: int) -> KeyFrameSet:
    """Segment-center uniform sampling: index_i = floor((i+0.5)*N/m)."""
    n = v.num_frames
    if m < 1:
        raise DataError(f"key frame count must be >= 1, got {m}")
    if m > n:
        raise DataError(f"cannot sample {m} key frames from {n} frames")
    idx = np.minimum((np.floor((np.arange(m) + 0.5) * n / m)).astype(np.int64), n - 1)
    return KeyFrameSet(frames=v.frames[idx], indices=idx)


def sample_chunks(
    v: VideoTensor, k: KeyFrameSet, chunk_len: int, hv: int, wv: int
) -> ChunkSet:
    """Windows of chunk_len frames around each key frame, resized to hv x wv.

    Window i spans [c - floor(L/2), c + ceil(L/2) - 1]; out-of-range
    indices clamp to the clip (edge frames repeat).  Frames are resized
    independently, ignoring aspect ratio.
    """
    if k.indices.size == 0:
        raise DataError("empty key frame set")
    if chunk_len < 1:
        raise DataError(f"chunk_len must be >= 1, got {chunk_len}")
    n = v.num_frames
    lo = chunk_len // 2
    hi = chunk_len - lo
    windows = []
    for c in k.indices:
        idx = np.clip(np.arange(c - lo, c + hi), 0, n - 1)
        windows.append(idx)
    flat = np.concatenate(windows)
    resized = _resample_stack(v.frames[flat], hv, wv)
    m = len(windows)
    chunks = resized.reshape(m, chunk_len, hv, wv, 3)
    return ChunkSet(chunks=chunks, center_indices=k.indices.copy())


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def short_side_resize(frame: np.ndarray, target: int) -> np.ndarray:
    """Bicubic resize so min(H, W) == target, aspect ratio preserved.

    The non-anchored side rounds half up.  Exposed separately so the
    training cache can resize once and crop per epoch.
    """
    if target < 1:
        raise DataError(f"target must be positive, got {target}")
    h, w = frame.shape[:2]
    if h <= w:
        oh, ow = target, max(1, _round_half_up(w * target / h))
    else:
        oh, ow = max(1, _round_half_up(h * target / w)), target
    if (oh, ow) == (h, w):
        return np.asarray(frame)
    return _resample_stack(np.asarray(frame)[None], oh, ow)[0]


def crop_square(
    frame: np.ndarray, target: int, mode: str, rng: np.random.Generator | None = None
) -> np.ndarray:
    """target x target crop: random offsets in 'random' mode, centered in 'center'."""
    h, w = frame.shape[:2]
    if h < target or w < target:
        raise DataError(f"cannot crop {target}x{target} from {h}x{w}")
    if mode == "center":
        oy, ox = (h - target) // 2, (w - target) // 2
    elif mode == "random":
        if rng is None:
            raise DataError("random crop mode requires an rng")
        oy = int(rng.integers(0, h - target + 1))
        ox = int(rng.integers(0, w - target + 1))
    else:
        raise DataError(f"unknown crop mode {mode!r}")
    return frame[oy : oy + target, ox : ox + target]


def resize_short_side_crop(
    frame: np.ndarray, target: int, mode: str = "center",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Resize so the short side equals target, then take a target^2 crop."""
    return crop_square(short_side_resize(frame, target), target, mode, rng)


@dataclass
class ManifestRow:
    clip_path: str
    mos: float
    scene_id: str
    fps: float
    width: int
    height: int


@dataclass
class DatasetManifest:
    """Rows driving training/eval, plus where they came from."""

    rows: list[ManifestRow]
    root: Path = field(default_factory=Path)
    format_version: int = 1

    def __len__(self) -> int:
        return len(self.rows)

    def clip_dir(self, row: ManifestRow) -> Path:
        p = Path(row.clip_path)
        return p if p.is_absolute() else self.root / p

    def scene_ids(self) -> list[str]:
        return sorted({r.scene_id for r in self.rows})


MANIFEST_HEADER = ["clip_path", "mos", "scene_id", "fps", "width", "height"]


def load_manifest(path: str | Path, check_clips: bool = False) -> DatasetManifest:
    """Read a manifest CSV; optionally verify that every clip decodes."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"manifest not found: {p}")
    rows: list[ManifestRow] = []
    with open(p, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise DataError(f"{p}: expected header {','.join(MANIFEST_HEADER)}")
        for rec in reader:
            if len(rec) != 6:
                raise DataError(f"{p}: malformed row {rec!r}")
            mos = float(rec[1])
            if not math.isfinite(mos):
                raise DataError(f"{p}: non-finite mos for {rec[0]}")
            rows.append(
                ManifestRow(rec[0], mos, rec[2], float(rec[3]), int(rec[4]), int(rec[5]))
            )
    if not rows:
        raise DataError(f"{p}: empty manifest")
    seen = set()
    for r in rows:
        if r.clip_path in seen:
            raise DataError(f"{p}: duplicate clip_path {r.clip_path}")
        seen.add(r.clip_path)
    manifest = DatasetManifest(rows=rows, root=p.parent)
    if check_clips:
        for r in rows:
            d = manifest.clip_dir(r)
            if not (d / META_NAME).is_file():
                raise DataError(f"{p}: clip {r.clip_path} missing under {manifest.root}")
    return manifest


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_HEADER)
        for r in manifest.rows:
            writer.writerow(
                [r.clip_path, f"{r.mos:.6f}", r.scene_id, f"{r.fps:g}", r.width, r.height]
            )
