"""Pull backbone tensors from their source ecosystem and serialize them.

Each source has a builder returning (torch state dict, metadata) and a
default name-mapping table (source tensor name -> weight-file name).
Only tensors the consuming engine can actually run are exported; the
supported source today is the ResNet-18 stem plus its first two
residual stages, whose mapping is the identity.  The CLIP image encoder
and the SlowFast fast pathway are registered but raise: the consuming
engine has no graph for ViT attention tensors, and SlowFast's ecosystem
package is not installed here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .writer import ExportError, write_weight_file

__all__ = ["ExportSpec", "ExportResult", "export", "default_mapping", "SOURCES"]

RESNET_PREFIXES = ("conv1.", "bn1.", "layer1.", "layer2.")


def _build_resnet18_stage2(pretrained: str, seed: int):
    from torchvision.models import ResNet18_Weights, resnet18

    used_pretrained = False
    model = None
    if pretrained in ("auto", "yes"):
        try:
            model = resnet18(weights=ResNet18_Weights.IMAGENET1K_V1)
            used_pretrained = True
        except Exception as e:  # download unavailable
            if pretrained == "yes":
                raise ExportError(f"pretrained weights unavailable: {e}") from e
    if model is None:
        torch.manual_seed(seed)
        model = resnet18(weights=None)
    state = model.state_dict()
    tensors = {
        k: v for k, v in state.items()
        if k.startswith(RESNET_PREFIXES) and "num_batches_tracked" not in k
    }
    return tensors, {"architecture": "resnet18-first-two-stages",
                     "pretrained": used_pretrained}


def _build_clip_vit(pretrained: str, seed: int):
    raise ExportError(
        "clip_vit: the consuming engine's backbone interfaces run no ViT "
        "attention tensors, so there is nothing it could consume from this source"
    )


def _build_slowfast_fast(pretrained: str, seed: int):
    try:
        import pytorchvideo  # noqa: F401
    except ImportError as e:
        raise ExportError(
            "slowfast_fast: pytorchvideo is not installed; provide the "
            "checkpoint through its native package to export it"
        ) from e
    raise ExportError("slowfast_fast: no consumable tensor mapping is defined yet")


SOURCES = {
    "resnet18_stage2": _build_resnet18_stage2,
    "clip_vit": _build_clip_vit,
    "slowfast_fast": _build_slowfast_fast,
}


def default_mapping(source: str) -> dict[str, str]:
    """Source-name -> weight-file-name table; identity for ResNet stages."""
    if source == "resnet18_stage2":
        tensors, _ = _build_resnet18_stage2("no", seed=0)
        return {name: name for name in tensors}
    raise ExportError(f"no default mapping for source {source!r}")


@dataclass
class ExportSpec:
    """What to pull and where to put it."""

    source: str
    output: Path
    mapping: dict[str, str] = field(default_factory=dict)
    pretrained: str = "auto"  # auto | yes | no
    seed: int = 0  # random-init fallback seed

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise ExportError(
                f"unknown source {self.source!r}; known: {', '.join(sorted(SOURCES))}"
            )
        if self.pretrained not in ("auto", "yes", "no"):
            raise ExportError(f"pretrained must be auto/yes/no, got {self.pretrained!r}")
        values = list(self.mapping.values())
        if len(set(values)) != len(values):
            raise ExportError("mapping must be injective")


@dataclass
class ExportResult:
    output: Path
    manifest: Path
    payload_sha256: str
    tensors: dict[str, tuple[int, ...]]


def export(spec: ExportSpec) -> ExportResult:
    """Write the .mvqw file plus a JSON manifest with a payload fingerprint."""
    source_tensors, meta = SOURCES[spec.source](spec.pretrained, spec.seed)
    mapping = spec.mapping or {name: name for name in source_tensors}
    missing = [s for s in mapping if s not in source_tensors]
    if missing:
        raise ExportError(f"mapped tensors missing from source: {', '.join(sorted(missing))}")
    out_tensors: dict[str, np.ndarray] = {}
    for src_name, wf_name in mapping.items():
        value = source_tensors[src_name]
        if value.dtype not in (torch.float32, torch.float64, torch.float16):
            raise ExportError(
                f"{src_name}: unsupported dtype {value.dtype}, expected a float tensor"
            )
        out_tensors[wf_name] = value.detach().cpu().to(torch.float32).numpy()
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    digest = write_weight_file(spec.output, out_tensors)
    manifest_path = spec.output.with_suffix(spec.output.suffix + ".json")
    manifest = {
        "source": spec.source,
        "payload_sha256": digest,
        "tensors": {name: list(arr.shape) for name, arr in out_tensors.items()},
        # layout conventions, stated rather than implied
        "conv_layout": "out_channel, in_channel, kh, kw",
        "mapping": mapping,
        **meta,
    }
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n")
    return ExportResult(
        output=spec.output,
        manifest=manifest_path,
        payload_sha256=digest,
        tensors={name: tuple(arr.shape) for name, arr in out_tensors.items()},
    )
