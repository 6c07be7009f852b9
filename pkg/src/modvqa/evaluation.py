"""Split protocol and the repeated train/test evaluation harness.

Scenes (not clips) are shuffled into 60/20/20 train/val/test so every
distorted version of a scene lands in one partition.  The protocol runs
a configurable number of repeats (10 by default), trains a fresh model
per repeat, and reports per-repeat and median SRCC/PLCC for all four
scores.  Repeats are independent, so they can fan out across processes.
"""

from __future__ import annotations

import csv
import multiprocessing as mp
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .media import DatasetManifest, ManifestRow
from .metrics import plcc, srcc

__all__ = [
    "SplitPlan",
    "RepeatMetrics",
    "MetricReport",
    "make_splits",
    "evaluate_run",
    "cross_evaluate",
    "weighted_average",
    "SCORES",
]

SCORES = ("q_b", "q_s", "q_t", "q_st")
FRACTIONS = (0.6, 0.2, 0.2)


@dataclass
class SplitPlan:
    repeat_index: int
    train_scenes: frozenset[str]
    val_scenes: frozenset[str]
    test_scenes: frozenset[str]
    train_rows: list[ManifestRow] = field(default_factory=list)
    val_rows: list[ManifestRow] = field(default_factory=list)
    test_rows: list[ManifestRow] = field(default_factory=list)
    fractions: tuple[float, float, float] = FRACTIONS


def make_splits(manifest: DatasetManifest, seed: int, n_repeats: int = 10) -> list[SplitPlan]:
    """Content-independent scene splits, one per repeat.

    Scene order is shuffled with a repeat-derived seed; the first 60%
    of scenes train (rounding remainder included), the next 20%
    validate, the rest test.
    """
    scenes = manifest.scene_ids()
    if len(scenes) < 5:
        raise DataError(f"need at least 5 scenes for a 60/20/20 split, got {len(scenes)}")
    plans = []
    for rep in range(n_repeats):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(200, rep)))
        order = [scenes[i] for i in rng.permutation(len(scenes))]
        n = len(order)
        n_val = int(np.floor(FRACTIONS[1] * n))
        n_test = int(np.floor(FRACTIONS[2] * n))
        n_train = n - n_val - n_test
        train = frozenset(order[:n_train])
        val = frozenset(order[n_train : n_train + n_val])
        test = frozenset(order[n_train + n_val :])
        plan = SplitPlan(
            repeat_index=rep, train_scenes=train, val_scenes=val, test_scenes=test
        )
        for row in manifest.rows:
            if row.scene_id in train:
                plan.train_rows.append(row)
            elif row.scene_id in val:
                plan.val_rows.append(row)
            else:
                plan.test_rows.append(row)
        plans.append(plan)
    return plans


@dataclass
class RepeatMetrics:
    repeat_index: int
    srcc: dict[str, float]
    plcc: dict[str, float]
    best_epoch: int = 0


@dataclass
class MetricReport:
    repeats: list[RepeatMetrics]

    def median(self) -> RepeatMetrics:
        med_s = {
            k: float(np.median([r.srcc[k] for r in self.repeats])) for k in SCORES
        }
        med_p = {
            k: float(np.median([r.plcc[k] for r in self.repeats])) for k in SCORES
        }
        return RepeatMetrics(repeat_index=-1, srcc=med_s, plcc=med_p)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["repeat"]
                + [f"srcc_{k}" for k in SCORES]
                + [f"plcc_{k}" for k in SCORES]
            )
            for r in self.repeats + [self.median()]:
                label = "median" if r.repeat_index < 0 else str(r.repeat_index)
                writer.writerow(
                    [label]
                    + [f"{r.srcc[k]:.6f}" for k in SCORES]
                    + [f"{r.plcc[k]:.6f}" for k in SCORES]
                )

    def write_markdown(self, path: str | Path) -> None:
        med = self.median()
        lines = [
            "| Score | SRCC | PLCC |",
            "| --- | --- | --- |",
        ]
        for k in SCORES:
            lines.append(f"| {k} | {med.srcc[k]:.3f} | {med.plcc[k]:.3f} |")
        lines.append("")
        lines.append(f"Median over {len(self.repeats)} content-independent splits.")
        Path(path).write_text("\n".join(lines) + "\n")


def weighted_average(reports: list[MetricReport], sizes: list[int]) -> RepeatMetrics:
    """Cross-dataset medians averaged with dataset-size weights."""
    if len(reports) != len(sizes) or not reports:
        raise DataError("need one size per report")
    total = float(sum(sizes))
    weights = [s / total for s in sizes]
    meds = [r.median() for r in reports]
    out_s = {
        k: float(sum(w * m.srcc[k] for w, m in zip(weights, meds))) for k in SCORES
    }
    out_p = {
        k: float(sum(w * m.plcc[k] for w, m in zip(weights, meds))) for k in SCORES
    }
    return RepeatMetrics(repeat_index=-1, srcc=out_s, plcc=out_p)


def _repeat_seed(seed: int, repeat_index: int) -> int:
    return int(
        np.random.SeedSequence(seed, spawn_key=(300, repeat_index)).generate_state(1)[0]
    )


def run_repeat(config, manifest: DatasetManifest, plan: SplitPlan,
               workers: int = 0) -> RepeatMetrics:
    """Train on one split and score its held-out test scenes."""
    from .rectify import QualityModel
    from .train import ClipCache, _score_split, train_epochs

    cfg = replace(config, seed=_repeat_seed(config.seed, plan.repeat_index))
    model = QualityModel(cfg)
    result = train_epochs(cfg, model, manifest, plan, workers=workers)
    test_cache = ClipCache(manifest, plan.test_rows, cfg, workers)
    scores = _score_split(result.model, test_cache, np.arange(len(test_cache)), cfg)
    mos = test_cache.mos
    return RepeatMetrics(
        repeat_index=plan.repeat_index,
        srcc={k: srcc(scores[:, i], mos) for i, k in enumerate(SCORES)},
        plcc={k: plcc(scores[:, i], mos) for i, k in enumerate(SCORES)},
        best_epoch=result.best_epoch,
    )


def cross_evaluate(config, train_manifest: DatasetManifest,
                   test_manifest: DatasetManifest, repeat: int = 0,
                   n_repeats: int = 10, workers: int = 0) -> RepeatMetrics:
    """Train on one dataset's split, score every clip of another dataset."""
    from .rectify import QualityModel
    from .train import ClipCache, _score_split, train_epochs

    plans = make_splits(train_manifest, config.seed, n_repeats)
    if not 0 <= repeat < len(plans):
        raise DataError(f"repeat must lie in 0..{len(plans) - 1}")
    plan = plans[repeat]
    cfg = replace(config, seed=_repeat_seed(config.seed, repeat))
    model = QualityModel(cfg)
    result = train_epochs(cfg, model, train_manifest, plan, workers=workers)
    test_cache = ClipCache(test_manifest, test_manifest.rows, cfg, workers)
    scores = _score_split(result.model, test_cache, np.arange(len(test_cache)), cfg)
    mos = test_cache.mos
    return RepeatMetrics(
        repeat_index=repeat,
        srcc={k: srcc(scores[:, i], mos) for i, k in enumerate(SCORES)},
        plcc={k: plcc(scores[:, i], mos) for i, k in enumerate(SCORES)},
        best_epoch=result.best_epoch,
    )


def _repeat_worker(payload) -> RepeatMetrics:
    config, manifest, plan = payload
    return run_repeat(config, manifest, plan, workers=0)


def evaluate_run(config, manifest: DatasetManifest, plans: list[SplitPlan],
                 workers: int = 1, out_dir: str | Path | None = None) -> MetricReport:
    """Train/test every plan and aggregate the report.

    workers > 1 fans repeats out over spawned processes (each pinned to
    one BLAS thread so cores are not oversubscribed).
    """
    if workers > 1 and len(plans) > 1:
        env_before = os.environ.get("OMP_NUM_THREADS")
        os.environ["OMP_NUM_THREADS"] = "1"
        try:
            ctx = mp.get_context("spawn")
            with ctx.Pool(processes=min(workers, len(plans))) as pool:
                repeats = pool.map(
                    _repeat_worker, [(config, manifest, p) for p in plans]
                )
        finally:
            if env_before is None:
                del os.environ["OMP_NUM_THREADS"]
            else:
                os.environ["OMP_NUM_THREADS"] = env_before
    else:
        repeats = [run_repeat(config, manifest, p) for p in plans]
    report = MetricReport(repeats=sorted(repeats, key=lambda r: r.repeat_index))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / "report.csv")
        report.write_markdown(out / "report.md")
    return report
