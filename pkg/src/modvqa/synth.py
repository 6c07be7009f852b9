"""Procedural benchmark clips with controlled, labeled degradations.

Every scene layers a static high-spatial-frequency texture (most of the
spatial gradient energy) over a smooth low-frequency component drifting
at a per-frame phase rate of 0.5 to 0.9 rad (all of the temporal
energy).  That split keeps the two distortion families separable:

  spatial kinds (downscale_upscale, quantize) gut fine detail but leave
  the mean absolute frame difference nearly unchanged;
  temporal kinds (frame_average, frame_drop_hold) damage motion while
  barely touching per-frame gradient energy.

Ground-truth quality is linear in severity with a small deterministic
jitter; only its ordering matters downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError
from .media import DatasetManifest, ManifestRow, VideoTensor, save_clip, write_manifest
from .pyramid import _resample_stack

__all__ = [
    "SceneSpec",
    "DistortionSpec",
    "PATTERNS",
    "SPATIAL_KINDS",
    "TEMPORAL_KINDS",
    "render_scene",
    "apply_distortion",
    "build_benchmark",
]

PATTERNS = ("drifting_sinusoids", "moving_textured_blobs", "random_phase_noise")
SPATIAL_KINDS = ("downscale_upscale", "quantize")
TEMPORAL_KINDS = ("frame_average", "frame_drop_hold")
ALL_KINDS = SPATIAL_KINDS + TEMPORAL_KINDS

MOS_JITTER = 0.02
STATIC_RMS = 0.14
MOVING_RMS_CAP = 0.09
TARGET_TEMPORAL_L1 = 0.035  # pristine mean |frame diff|, equal across scenes
DRIFT_RATE = (0.55, 0.85)  # rad/frame phase velocity of the moving layer


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    pattern: str
    base_h: int = 96
    base_w: int = 128
    base_fps: float = 30.0
    duration_frames: int = 64

    def __post_init__(self) -> None:
        if self.pattern not in PATTERNS:
            raise DataError(f"unknown pattern {self.pattern!r}")
        if self.base_h < 16 or self.base_w < 16 or self.duration_frames < 2:
            raise DataError("scene too small to render")


@dataclass(frozen=True)
class DistortionSpec:
    """kind + severity index; severity 0 is pristine for every kind."""

    kind: str
    severity: int
    severities: int
    jitter_seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ALL_KINDS:
            raise DataError(f"unknown distortion kind {self.kind!r}")
        if not 0 <= self.severity < self.severities:
            raise DataError(
                f"severity {self.severity} out of range 0..{self.severities - 1}"
            )
        if self.severities < 2:
            raise DataError("need at least 2 severities")

    def parameter(self) -> float:
        """Severity-resolved distortion strength."""
        s, top = self.severity, self.severities - 1
        if s == 0:
            return 0.0
        frac = (s - 1) / (top - 1) if top > 1 else 1.0
        if self.kind == "downscale_upscale":
            return 1.6 * (4.5 / 1.6) ** frac
        if self.kind == "quantize":
            return 0.03 * (0.13 / 0.03) ** frac
        if self.kind == "frame_average":
            return float(np.rint(3.0 * (8.0 / 3.0) ** frac))
        return 1.0 / (s + 1)  # frame_drop_hold keep ratio


def _unit_rms(field: np.ndarray) -> np.ndarray:
    rms = float(np.sqrt((field**2).mean()))
    return field / rms if rms > 0 else field


def _bandpass_noise(rng: np.random.Generator, h: int, w: int,
                    f_lo: float, f_hi: float) -> np.ndarray:
    """Unit-RMS random field with spatial frequencies inside [f_lo, f_hi].

    A band too narrow for the FFT grid falls back to the nonzero bin
    closest to the band center, so small canvases never go dead.
    """
    white = rng.standard_normal((h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    f = np.hypot(fy, fx)
    mask = (f >= f_lo) & (f <= f_hi)
    if not (mask & (f > 0)).any():
        center = 0.5 * (f_lo + f_hi)
        dist = np.where(f > 0, np.abs(f - center), np.inf)
        mask = dist <= dist.min() + 1e-12
    field = np.fft.ifft2(np.fft.fft2(white) * mask).real
    return _unit_rms(field)


def _drift(field: np.ndarray, vy: float, vx: float, n: int) -> np.ndarray:
    """Translate a periodic field by (vy, vx) px/frame: (N, H, W)."""
    h, w = field.shape
    fy = np.fft.fftfreq(h)[None, :, None]
    fx = np.fft.fftfreq(w)[None, None, :]
    t = np.arange(n)[:, None, None]
    phase = np.exp(-2j * np.pi * t * (fy * vy + fx * vx))
    return np.fft.ifft2(np.fft.fft2(field)[None] * phase).real


def _colorize(frames: np.ndarray, rgb: np.ndarray) -> np.ndarray:
    return frames[..., None] * rgb[None, None, None, :]


def _rand_rgb(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.5, 1.0, size=3)


def _moving_layer(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    """Smooth drifting field, unit RMS, phase rate within DRIFT_RATE."""
    h, w, n = spec.base_h, spec.base_w, spec.duration_frames
    lam = rng.uniform(56.0, 96.0)
    f_c = 1.0 / lam
    field = _bandpass_noise(rng, h, w, f_c * 0.8, f_c * 1.25)
    theta = rng.uniform(*DRIFT_RATE)
    speed = theta / (2.0 * np.pi * f_c)
    ang = rng.uniform(0.0, 2.0 * np.pi)
    frames = _drift(field, speed * np.sin(ang), speed * np.cos(ang), n)
    return _unit_rms(frames)


def _static_texture(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    return _bandpass_noise(rng, spec.base_h, spec.base_w, 1.0 / 8.0, 1.0 / 4.0)


def render_scene(spec: SceneSpec) -> VideoTensor:
    """Deterministic clip with static fine texture plus drifting content."""
    rng = np.random.default_rng(spec.seed)
    h, w, n = spec.base_h, spec.base_w, spec.duration_frames
    frames = np.full((n, h, w, 3), 0.5)

    if spec.pattern == "drifting_sinusoids":
        yy, xx = np.mgrid[0:h, 0:w]
        moving = np.zeros((n, h, w))
        for _ in range(3):
            lam = rng.uniform(56.0, 96.0)
            ang = rng.uniform(0.0, 2.0 * np.pi)
            phase0 = rng.uniform(0.0, 2.0 * np.pi)
            omega = rng.uniform(*DRIFT_RATE) * rng.choice([-1.0, 1.0])
            grid = 2.0 * np.pi / lam * (np.cos(ang) * xx + np.sin(ang) * yy)
            moving += np.sin(grid[None] + phase0 + omega * np.arange(n)[:, None, None])
        static = np.zeros((h, w))
        for _ in range(6):
            lam = rng.uniform(4.0, 7.0)
            ang = rng.uniform(0.0, 2.0 * np.pi)
            phase0 = rng.uniform(0.0, 2.0 * np.pi)
            grid = 2.0 * np.pi / lam * (np.cos(ang) * xx + np.sin(ang) * yy)
            static += np.sin(grid + phase0)
    elif spec.pattern == "moving_textured_blobs":
        yy, xx = np.mgrid[0:h, 0:w]
        moving = np.zeros((n, h, w))
        for _ in range(3):
            sigma = rng.uniform(10.0, 18.0)
            cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
            envelope = np.exp(-(((yy - cy) / sigma) ** 2 + ((xx - cx) / sigma) ** 2))
            lam = rng.uniform(56.0, 96.0)
            blob = envelope * _bandpass_noise(rng, h, w, 0.8 / lam, 1.25 / lam)
            theta = rng.uniform(*DRIFT_RATE)
            speed = theta * lam / (2.0 * np.pi)
            ang = rng.uniform(0.0, 2.0 * np.pi)
            moving += _drift(blob, speed * np.sin(ang), speed * np.cos(ang), n)
        static = _static_texture(rng, spec)
    else:  # random_phase_noise
        moving = _moving_layer(rng, spec)
        static = _static_texture(rng, spec)

    # scale the moving layer so every pristine scene has the same temporal
    # energy (cross-scene comparability), capping its spatial contrast so
    # static texture keeps dominating the gradient energy
    moving_rgb = _colorize(_unit_rms(moving), _rand_rgb(rng))
    l1 = float(np.abs(np.diff(moving_rgb, axis=0)).mean())
    rms = float(np.sqrt((moving_rgb**2).mean()))
    scale = min(TARGET_TEMPORAL_L1 / max(l1, 1e-12), MOVING_RMS_CAP / max(rms, 1e-12))
    frames += moving_rgb * scale
    static = _unit_rms(static) * STATIC_RMS
    frames += _colorize(np.broadcast_to(static, (n, h, w)), _rand_rgb(rng))
    # slow spatial ramp so scenes differ in large-scale structure
    ramp = _unit_rms(_bandpass_noise(rng, h, w, 0.0, 1.0 / 64.0)) * 0.04
    frames += _colorize(np.broadcast_to(ramp, (n, h, w)), _rand_rgb(rng))
    frames = np.clip(frames, 0.0, 1.0)
    return VideoTensor(
        frames=frames.astype(np.float32),
        fps=spec.base_fps,
        clip_id=f"scene{spec.seed}",
        scene_id=f"scene{spec.seed}",
    )


def _downscale_upscale(frames: np.ndarray, factor: float) -> np.ndarray:
    n, h, w, _ = frames.shape
    small_h = max(1, int(round(h / factor)))
    small_w = max(1, int(round(w / factor)))
    small = _resample_stack(frames, small_h, small_w)
    return _resample_stack(small, h, w)


def _quantize(frames: np.ndarray, step: float) -> np.ndarray:
    return np.clip(np.rint(frames / step) * step, 0.0, 1.0)


def _frame_average(frames: np.ndarray, window: int) -> np.ndarray:
    n = frames.shape[0]
    lo = window // 2
    out = np.zeros_like(frames)
    for off in range(-lo, window - lo):
        idx = np.clip(np.arange(n) + off, 0, n - 1)
        out += frames[idx]
    return out / window


def _frame_drop_hold(frames: np.ndarray, keep_ratio: float) -> np.ndarray:
    n = frames.shape[0]
    k = int(round(1.0 / keep_ratio))
    held = (np.arange(n) // k) * k
    return frames[held]


def apply_distortion(v: VideoTensor, d: DistortionSpec) -> tuple[VideoTensor, float]:
    """Distorted clip at the original container size/rate, plus its label."""
    param = d.parameter()
    if d.severity == 0:
        frames = v.frames
    elif d.kind == "downscale_upscale":
        frames = _downscale_upscale(v.frames.astype(np.float64), param)
    elif d.kind == "quantize":
        frames = _quantize(v.frames.astype(np.float64), param)
    elif d.kind == "frame_average":
        frames = _frame_average(v.frames.astype(np.float64), int(param))
    elif d.kind == "frame_drop_hold":
        frames = _frame_drop_hold(v.frames.astype(np.float64), param)
    else:  # pragma: no cover - guarded by DistortionSpec
        raise DataError(f"unknown distortion kind {d.kind!r}")
    frames = np.clip(frames, 0.0, 1.0).astype(np.float32)
    jitter_rng = np.random.default_rng(d.jitter_seed)
    mos = 1.0 - d.severity / (d.severities - 1)
    mos += float(jitter_rng.uniform(-MOS_JITTER, MOS_JITTER))
    out = VideoTensor(
        frames=frames,
        fps=v.fps,
        clip_id=f"{v.clip_id}_{d.kind}_s{d.severity}",
        scene_id=v.scene_id,
    )
    return out, mos


def _scene_kinds(benchmark_kind: str, n_scenes: int) -> list[str]:
    # single-kind benchmarks mirror their real counterparts (pure
    # down-scaling, pure frame averaging); mixed cycles all four kinds
    if benchmark_kind == "spatial":
        return ["downscale_upscale"] * n_scenes
    if benchmark_kind == "temporal":
        return ["frame_average"] * n_scenes
    if benchmark_kind == "mixed":
        return [ALL_KINDS[i % 4] for i in range(n_scenes)]
    raise DataError(f"unknown benchmark kind {benchmark_kind!r}")


def build_benchmark(
    kind: str,
    n_scenes: int,
    severities: int,
    out_dir: str | Path,
    seed: int = 0,
    base_h: int = 96,
    base_w: int = 128,
    base_fps: float = 30.0,
    duration_frames: int = 64,
) -> DatasetManifest:
    """Render scenes x severities to out_dir and write the manifest."""
    if n_scenes < 1:
        raise DataError("need at least one scene")
    scene_kinds = _scene_kinds(kind, n_scenes)
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    rows: list[ManifestRow] = []
    for i, scene_kind in enumerate(scene_kinds):
        scene_seed = int(np.random.SeedSequence(seed, spawn_key=(i,)).generate_state(1)[0])
        spec = SceneSpec(
            seed=scene_seed,
            pattern=PATTERNS[i % len(PATTERNS)],
            base_h=base_h,
            base_w=base_w,
            base_fps=base_fps,
            duration_frames=duration_frames,
        )
        scene_id = f"scene{i:03d}"
        video = render_scene(spec)
        video.clip_id = scene_id
        video.scene_id = scene_id
        for s in range(severities):
            jitter_seed = int(
                np.random.SeedSequence(seed, spawn_key=(i, s, 977)).generate_state(1)[0]
            )
            d = DistortionSpec(
                kind=scene_kind, severity=s, severities=severities,
                jitter_seed=jitter_seed,
            )
            clip, mos = apply_distortion(video, d)
            rel = f"clips/{clip.clip_id}"
            save_clip(clip, out / rel)
            rows.append(
                ManifestRow(
                    clip_path=rel, mos=mos, scene_id=scene_id,
                    fps=base_fps, width=base_w, height=base_h,
                )
            )
    manifest = DatasetManifest(rows=rows, root=out)
    write_manifest(manifest, out / "manifest.csv")
    provenance = {
        "generator": "modvqa.synth",
        "version": __version__,
        "format_version": manifest.format_version,
        "kind": kind,
        "n_scenes": n_scenes,
        "severities": severities,
        "seed": seed,
        "base_h": base_h,
        "base_w": base_w,
        "base_fps": base_fps,
        "duration_frames": duration_frames,
    }
    (out / "config.json").write_text(json.dumps(provenance, indent=1) + "\n")
    return manifest
