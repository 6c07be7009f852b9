"""Split protocol, report aggregation, and the tiny end-to-end harness."""

from __future__ import annotations

import numpy as np
import pytest

from modvqa.errors import DataError
from modvqa.media import DatasetManifest, ManifestRow
from modvqa.evaluation import (
    MetricReport,
    RepeatMetrics,
    SCORES,
    cross_evaluate,
    evaluate_run,
    make_splits,
    weighted_average,
)


def fake_manifest(n_scenes: int, clips_per_scene: int = 3) -> DatasetManifest:
    rows = [
        ManifestRow(
            clip_path=f"clips/s{s:03d}_c{c}", mos=1.0 - 0.1 * c,
            scene_id=f"s{s:03d}", fps=30.0, width=64, height=48,
        )
        for s in range(n_scenes)
        for c in range(clips_per_scene)
    ]
    return DatasetManifest(rows=rows)


class TestMakeSplits:
    def test_20_scenes_gives_12_4_4(self):
        plans = make_splits(fake_manifest(20), seed=0)
        assert len(plans) == 10
        for p in plans:
            assert (len(p.train_scenes), len(p.val_scenes), len(p.test_scenes)) == (12, 4, 4)

    def test_remainder_goes_to_train(self):
        plans = make_splits(fake_manifest(22), seed=0, n_repeats=2)
        for p in plans:
            assert (len(p.train_scenes), len(p.val_scenes), len(p.test_scenes)) == (14, 4, 4)

    def test_scene_sets_disjoint_and_cover(self):
        manifest = fake_manifest(17)
        for p in make_splits(manifest, seed=3):
            union = p.train_scenes | p.val_scenes | p.test_scenes
            assert union == set(manifest.scene_ids())
            assert not (p.train_scenes & p.val_scenes)
            assert not (p.train_scenes & p.test_scenes)
            assert not (p.val_scenes & p.test_scenes)

    def test_content_independent_rows(self):
        manifest = fake_manifest(10, clips_per_scene=5)
        for p in make_splits(manifest, seed=1, n_repeats=4):
            for rows, scenes in [
                (p.train_rows, p.train_scenes),
                (p.val_rows, p.val_scenes),
                (p.test_rows, p.test_scenes),
            ]:
                assert {r.scene_id for r in rows} == set(scenes)
            assert len(p.train_rows) + len(p.val_rows) + len(p.test_rows) == 50

    def test_deterministic(self):
        m = fake_manifest(12)
        a = make_splits(m, seed=9)
        b = make_splits(m, seed=9)
        for pa, pb in zip(a, b):
            assert pa.train_scenes == pb.train_scenes
            assert pa.test_scenes == pb.test_scenes

    def test_repeats_differ(self):
        plans = make_splits(fake_manifest(15), seed=2)
        assert len({p.test_scenes for p in plans}) > 1

    def test_too_few_scenes(self):
        with pytest.raises(DataError):
            make_splits(fake_manifest(4), seed=0)


def report_from(values: list[dict[str, float]]) -> MetricReport:
    return MetricReport(
        repeats=[
            RepeatMetrics(repeat_index=i, srcc=dict(v), plcc=dict(v))
            for i, v in enumerate(values)
        ]
    )


class TestReport:
    def test_median_is_elementwise(self):
        vals = [{k: 0.1 * i for k in SCORES} for i in range(10)]
        rep = report_from(vals)
        med = rep.median()
        assert med.srcc["q_b"] == pytest.approx(0.45)

    def test_corrupted_repeat_moves_median_one_step(self):
        base = [{k: 0.5 + 0.01 * i for k in SCORES} for i in range(10)]
        clean = report_from(base).median().srcc["q_st"]
        corrupted = base.copy()
        corrupted[3] = {k: 0.0 for k in SCORES}
        shifted = report_from(corrupted).median().srcc["q_st"]
        sorted_vals = sorted(v["q_st"] for v in base)
        assert abs(shifted - clean) <= sorted_vals[5] - sorted_vals[4] + 1e-12

    def test_weighted_average_rule(self):
        r1 = report_from([{k: 0.8 for k in SCORES}])
        r2 = report_from([{k: 0.6 for k in SCORES}])
        avg = weighted_average([r1, r2], [120, 88])
        want = 0.8 * 120 / 208 + 0.6 * 88 / 208
        assert avg.srcc["q_b"] == pytest.approx(want, abs=1e-12)

    def test_report_files(self, tmp_path):
        rep = report_from([{k: 0.5 for k in SCORES} for _ in range(3)])
        rep.write_csv(tmp_path / "r.csv")
        rep.write_markdown(tmp_path / "r.md")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0].startswith("repeat,srcc_q_b")
        assert len(lines) == 1 + 3 + 1  # header + repeats + median
        assert "| q_st |" in (tmp_path / "r.md").read_text()


class TestEvaluateRunTiny:
    def test_identity_model_columns_identical(self, tmp_path):
        # untrained identity rectifiers: all four score columns agree
        from modvqa.synth import build_benchmark
        from modvqa.train import TrainConfig, ClipCache, _score_split
        from modvqa.rectify import QualityModel

        manifest = build_benchmark(
            "mixed", 5, 2, tmp_path / "ds", seed=5, base_h=24, base_w=32,
            duration_frames=6,
        )
        cfg = TrainConfig(
            batch_size=4, epochs=1, m_keyframes=2, k_levels=2, chunk_len=2,
            base_size=8, hv=8, wv=8, hidden_dim=8,
            image_channels=(2, 3, 4), subband_channels=(2, 3),
            temporal_channels=(2, 3), seed=1,
        )
        model = QualityModel(cfg)
        cache = ClipCache(manifest, manifest.rows, cfg)
        scores = _score_split(model, cache, np.arange(len(cache)), cfg)
        for col in range(1, 4):
            np.testing.assert_allclose(scores[:, col], scores[:, 0], atol=1e-5)

    def test_end_to_end_two_repeats(self, tmp_path):
        from modvqa.synth import build_benchmark
        from modvqa.train import TrainConfig

        manifest = build_benchmark(
            "spatial", 6, 2, tmp_path / "ds", seed=6, base_h=24, base_w=32,
            duration_frames=6,
        )
        cfg = TrainConfig(
            batch_size=4, lr=1e-3, epochs=2, m_keyframes=2, k_levels=2, chunk_len=2,
            base_size=8, hv=8, wv=8, hidden_dim=8,
            image_channels=(2, 3, 4), subband_channels=(2, 3),
            temporal_channels=(2, 3), seed=1,
        )
        plans = make_splits(manifest, cfg.seed, n_repeats=2)
        report = evaluate_run(cfg, manifest, plans, workers=1, out_dir=tmp_path / "out")
        assert len(report.repeats) == 2
        for r in report.repeats:
            for k in SCORES:
                assert -1.0 <= r.srcc[k] <= 1.0
                assert -1.0 <= r.plcc[k] <= 1.0
        assert (tmp_path / "out" / "report.csv").is_file()
        assert (tmp_path / "out" / "report.md").is_file()

    def test_cross_dataset(self, tmp_path):
        from modvqa.synth import build_benchmark
        from modvqa.train import TrainConfig

        a = build_benchmark("spatial", 6, 2, tmp_path / "a", seed=7, base_h=24,
                            base_w=32, duration_frames=6)
        b = build_benchmark("spatial", 5, 2, tmp_path / "b", seed=8, base_h=24,
                            base_w=32, duration_frames=6)
        cfg = TrainConfig(
            batch_size=4, lr=1e-3, epochs=1, m_keyframes=2, k_levels=2, chunk_len=2,
            base_size=8, hv=8, wv=8, hidden_dim=8,
            image_channels=(2, 3, 4), subband_channels=(2, 3),
            temporal_channels=(2, 3), seed=2,
        )
        metrics = cross_evaluate(cfg, a, b, repeat=0, n_repeats=2)
        for k in SCORES:
            assert -1.0 <= metrics.srcc[k] <= 1.0
