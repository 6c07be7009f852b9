"""Exporter from pretrained torch backbones to .mvqw weight files."""

from .exporter import ExportResult, ExportSpec, SOURCES, default_mapping, export
from .writer import ExportError, write_weight_file

__all__ = [
    "ExportError",
    "ExportResult",
    "ExportSpec",
    "SOURCES",
    "default_mapping",
    "export",
    "write_weight_file",
]

__version__ = "0.1.0"
