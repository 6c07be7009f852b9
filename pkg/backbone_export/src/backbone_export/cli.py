"""Command line: backbone-export --source resnet18_stage2 --out weights.mvqw"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .exporter import SOURCES, ExportSpec, export
from .writer import ExportError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="backbone-export",
        description="Serialize pretrained backbone tensors into a .mvqw weight file",
    )
    parser.add_argument("--source", choices=sorted(SOURCES), required=True)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--pretrained", choices=["auto", "yes", "no"], default="auto",
                        help="auto: try the pretrained checkpoint, fall back to seeded init")
    parser.add_argument("--seed", type=int, default=0, help="random-init fallback seed")
    args = parser.parse_args(argv)
    try:
        result = export(ExportSpec(
            source=args.source, output=args.out,
            pretrained=args.pretrained, seed=args.seed,
        ))
    except ExportError as e:
        print(f"backbone-export: {e}", file=sys.stderr)
        return 2
    print(f"wrote {len(result.tensors)} tensors to {result.output}")
    print(f"payload sha256 {result.payload_sha256}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
