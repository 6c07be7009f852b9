"""Command-line entry point: synth | train | eval | predict | pyramid.

Every run is reproducible from (config file, --seed, dataset hash);
train writes run.json carrying exactly that.  Exit codes: 0 success,
1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import DataError, NumericError
from .media import load_clip, load_manifest, sample_key_frames
from .pyramid import build_pyramid, compute_rho
from .rectify import QualityModel, predict
from .synth import build_benchmark
from .train import TrainConfig, train_epochs
from .evaluation import evaluate_run, make_splits
from .nn import load_weights, save_weights

FLOAT_FMT = "%.17g"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--workers", type=int, default=1,
                   help="data-pipeline parallelism (results are worker-independent)")


def _add_config_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="JSON training config")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--paper-lr", action="store_true", help="force the 1e-5 learning rate")
    p.add_argument("--m-keyframes", type=int, default=None)
    p.add_argument("--chunk-len", type=int, default=None)


def _load_config(args) -> TrainConfig:
    data: dict = {}
    if args.config is not None:
        if not args.config.is_file():
            raise DataError(f"config file not found: {args.config}")
        data = json.loads(args.config.read_text())
        if not isinstance(data, dict):
            raise DataError(f"{args.config}: config must be a JSON object")
    config = TrainConfig.from_dict(data)
    overrides = {}
    for flag, attr in [
        ("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr"),
        ("m_keyframes", "m_keyframes"), ("chunk_len", "chunk_len"),
        ("seed", "seed"),
    ]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[attr] = value
    if getattr(args, "paper_lr", False):
        overrides["lr"] = 1e-5
    return replace(config, **overrides) if overrides else config


def _manifest_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_synth(args) -> int:
    manifest = build_benchmark(
        kind=args.kind, n_scenes=args.scenes, severities=args.severities,
        out_dir=args.out, seed=args.seed if args.seed is not None else 0,
        base_h=args.height, base_w=args.width, base_fps=args.fps,
        duration_frames=args.frames,
    )
    print(f"wrote {len(manifest)} clips under {args.out}")
    return 0


def _write_log_csv(path: Path, log) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["epoch", "lr", "train_loss", "srcc_qb", "srcc_qs", "srcc_qt", "srcc_qst"]
        )
        for row in log:
            writer.writerow(
                [row.epoch]
                + [
                    FLOAT_FMT % v
                    for v in (row.lr, row.train_loss, row.srcc_qb, row.srcc_qs,
                              row.srcc_qt, row.srcc_qst)
                ]
            )


def _model_meta(config: TrainConfig) -> dict:
    return {
        "config": config.to_dict(),
        "concat_order": QualityModel.CONCAT_ORDER,
        "format": "mvqw-v1",
    }


def cmd_train(args) -> int:
    config = _load_config(args)
    manifest = load_manifest(args.manifest)
    plans = make_splits(manifest, config.seed, n_repeats=args.repeats)
    if not 0 <= args.repeat < len(plans):
        raise DataError(f"--repeat must lie in 0..{len(plans) - 1}")
    plan = plans[args.repeat]
    model = QualityModel(config)
    result = train_epochs(config, model, manifest, plan, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_log_csv(out / "log.csv", result.log)
    save_weights(out / "best.mvqw", {
        name: p.data for name, p in result.model.named_parameters().items()
    })
    (out / "best.mvqw.json").write_text(json.dumps(_model_meta(config), indent=1) + "\n")
    run = {
        "command": "train",
        "config": config.to_dict(),
        "manifest": str(Path(args.manifest).resolve()),
        "manifest_sha256": _manifest_hash(Path(args.manifest)),
        "repeat": args.repeat,
        "repeats": args.repeats,
        "concat_order": QualityModel.CONCAT_ORDER,
        "best_epoch": result.best_epoch,
        "best_val_srcc_qst": result.best_val_srcc,
    }
    (out / "run.json").write_text(json.dumps(run, indent=1) + "\n")
    print(
        f"best epoch {result.best_epoch}: val SRCC(q_st) {result.best_val_srcc:.4f}; "
        f"artifacts in {out}"
    )
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args)
    manifest = load_manifest(args.manifest)
    plans = make_splits(manifest, config.seed, n_repeats=args.repeats)
    report = evaluate_run(config, manifest, plans, workers=args.workers, out_dir=args.out)
    med = report.median()
    print("median SRCC: " + "  ".join(f"{k}={med.srcc[k]:.4f}" for k in med.srcc))
    print("median PLCC: " + "  ".join(f"{k}={med.plcc[k]:.4f}" for k in med.plcc))
    return 0


def _load_model(args) -> tuple[TrainConfig, QualityModel]:
    """Model from --run-dir, --weights + --config, or config alone (fresh)."""
    weights: Path | None
    if args.run_dir is not None:
        run_dir = Path(args.run_dir)
        run_file = run_dir / "run.json"
        if not run_file.is_file():
            raise DataError(f"no run.json under {run_dir}")
        run = json.loads(run_file.read_text())
        config = TrainConfig.from_dict(run["config"])
        weights = run_dir / "best.mvqw"
    else:
        config = _load_config(args)
        weights = Path(args.weights) if args.weights is not None else None
    model = QualityModel(config)
    if weights is not None:
        if not weights.is_file():
            raise DataError(f"weights file not found: {weights}")
        load_weights(weights, model)
    return config, model


def cmd_predict(args) -> int:
    config, model = _load_model(args)
    if (args.manifest is None) == (args.clip is None):
        raise DataError("predict needs exactly one of --manifest or --clip")
    if args.manifest is not None:
        manifest = load_manifest(args.manifest)
        clip_dirs = [manifest.clip_dir(r) for r in manifest.rows]
    else:
        clip_dirs = [Path(args.clip)]
    rows = []
    for d in clip_dirs:
        video = load_clip(d)
        quad = predict(video, config, model)
        rows.append((video.clip_id, quad.q_b, quad.q_s, quad.q_t, quad.q_st))
    out_f = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out_f)
        writer.writerow(["clip_id", "q_b", "q_s", "q_t", "q_st"])
        for clip_id, *scores in rows:
            writer.writerow([clip_id] + [f"{v:.6f}" for v in scores])
    finally:
        if args.out:
            out_f.close()
    return 0


def _to_png_grid(images, path: Path) -> None:
    from PIL import Image

    norm = []
    for img in images:
        peak = float(np.abs(img).max())
        scaled = 0.5 + img / (2.0 * peak) if peak > 0 else np.full_like(img, 0.5)
        norm.append(np.clip(scaled, 0.0, 1.0))
    grid = np.concatenate(norm, axis=1)
    Image.fromarray((grid * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(path)


def cmd_pyramid(args) -> int:
    video = load_clip(args.clip)
    ks = sample_key_frames(video, args.keyframes)
    rho = compute_rho(
        video.height, video.width, args.base_size, args.base_size, args.levels
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pyramids = [build_pyramid(f, rho, args.levels) for f in ks.frames]
    for k in range(args.levels):
        _to_png_grid([p.subbands[k] for p in pyramids], out / f"level{k}.png")
    _to_png_grid([p.residual for p in pyramids], out / "residual.png")
    print(f"wrote {args.levels + 1} grids (rho={rho:.4f}) to {out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="modvqa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark")
    p.add_argument("--kind", choices=["spatial", "temporal", "mixed"], required=True)
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--severities", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--fps", type=float, default=30.0)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model on one split")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--repeat", type=int, default=0, help="split plan index")
    p.add_argument("--repeats", type=int, default=10, help="total split plans")
    _add_config_overrides(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="full repeated-split evaluation")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--repeats", type=int, default=10)
    _add_config_overrides(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="score clips with a trained model")
    p.add_argument("--run-dir", type=Path, default=None,
                   help="training output directory (run.json + best.mvqw)")
    p.add_argument("--weights", type=Path, default=None)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--clip", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None, help="CSV path (default stdout)")
    _add_config_overrides(p)
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("pyramid", help="dump per-level subband grids as PNGs")
    p.add_argument("--clip", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--keyframes", type=int, default=4)
    p.add_argument("--base-size", type=int, default=224)
    _add_common(p)
    p.set_defaults(func=cmd_pyramid)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as e:
        print(f"modvqa: data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"modvqa: numeric failure: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"modvqa: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
