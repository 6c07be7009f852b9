"""Combiner algebra, dropout draws, rectifier ops, and full prediction."""

from __future__ import annotations

import math

import numpy as np
import pytest

from modvqa.errors import DataError
from modvqa.media import ChunkSet, KeyFrameSet, VideoTensor
from modvqa.nn import (
    Tensor,
    check_gradients,
    max_relative_error,
    softplus_inverse,
)
from modvqa.rectify import (
    DropoutDraw,
    QualityModel,
    RectifierOutput,
    base_quality,
    combine,
    predict,
    spatial_rectifier,
    temporal_rectifier,
    spatial_outputs_batch,
)
from modvqa.train import TrainConfig


def draw_flags(active_s: bool, active_t: bool) -> DropoutDraw:
    return DropoutDraw(
        u_s=0.5 if active_s else 0.0,
        u_t=0.5 if active_t else 0.0,
        p_s=0.0 if active_s else 1.0,
        p_t=0.0 if active_t else 1.0,
    )


class TestCombine:
    def test_both_dropped_passthrough_bitwise(self):
        q_b = 0.37
        alpha, beta, q_st = combine(q_b, None, None, draw_flags(False, False))
        assert (alpha, beta) == (1.0, 0.0)
        assert q_st == 0.37  # bitwise: the exact same float comes back

    def test_both_active_hand_values(self):
        s = RectifierOutput(alpha=4.0, beta=0.2)
        t = RectifierOutput(alpha=1.0, beta=0.4)
        alpha, beta, q_st = combine(0.5, s, t, draw_flags(True, True))
        assert alpha == pytest.approx(2.0, abs=1e-12)
        assert beta == pytest.approx(0.3, abs=1e-12)
        assert q_st == pytest.approx(1.3, abs=1e-12)

    def test_only_spatial_reduces_to_affine(self):
        s = RectifierOutput(alpha=1.5, beta=-0.1)
        alpha, beta, q_st = combine(0.2, s, None, draw_flags(True, False))
        assert (alpha, beta) == (1.5, -0.1)
        assert q_st == pytest.approx(1.5 * 0.2 - 0.1, abs=1e-15)

    def test_only_temporal_reduces_to_affine(self):
        t = RectifierOutput(alpha=0.7, beta=0.25)
        alpha, beta, q_st = combine(-0.4, None, t, draw_flags(False, True))
        assert (alpha, beta) == (0.7, 0.25)
        assert q_st == pytest.approx(0.7 * -0.4 + 0.25, abs=1e-15)

    def test_random_tuples_match_direct_formula(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            a_s, a_t = rng.uniform(0.05, 10.0, size=2)
            b_s, b_t = rng.uniform(-2.0, 2.0, size=2)
            q_b = rng.uniform(-1.0, 1.0)
            alpha, beta, q_st = combine(
                q_b,
                RectifierOutput(a_s, b_s),
                RectifierOutput(a_t, b_t),
                draw_flags(True, True),
            )
            want = math.sqrt(a_s * a_t) * q_b + (b_s + b_t) / 2.0
            assert abs(q_st - want) < 1e-12
            assert abs(alpha - math.sqrt(a_s * a_t)) < 1e-12

    def test_combined_values_bounded_by_inputs(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            a_s, a_t = rng.uniform(0.01, 20.0, size=2)
            b_s, b_t = rng.uniform(-3.0, 3.0, size=2)
            alpha, beta, _ = combine(
                0.0, RectifierOutput(a_s, b_s), RectifierOutput(a_t, b_t),
                draw_flags(True, True),
            )
            assert min(a_s, a_t) - 1e-12 <= alpha <= max(a_s, a_t) + 1e-12
            assert min(b_s, b_t) - 1e-12 <= beta <= max(b_s, b_t) + 1e-12

    def test_symmetric_under_swap(self):
        s = RectifierOutput(alpha=3.0, beta=0.5)
        t = RectifierOutput(alpha=0.4, beta=-0.2)
        a1 = combine(0.3, s, t, draw_flags(True, True))
        a2 = combine(0.3, t, s, draw_flags(True, True))
        assert a1 == pytest.approx(a2, abs=1e-14)

    def test_active_without_output_rejected(self):
        with pytest.raises(DataError):
            combine(0.1, None, None, draw_flags(True, False))

    def test_nonpositive_alpha_rejected(self):
        with pytest.raises(DataError):
            RectifierOutput(alpha=-1.0, beta=0.0)
        bad = RectifierOutput(alpha=Tensor(np.array(-1.0)), beta=0.0)
        with pytest.raises(DataError):
            combine(0.1, bad, None, draw_flags(True, False))

    def test_gradient_through_geometric_mean(self):
        # d q_st / d alpha_s == q_b * sqrt(alpha_t) / (2 sqrt(alpha_s))
        q_b = 0.8
        a_s = Tensor(np.array(2.5), requires_grad=True)
        a_t = Tensor(np.array(0.9), requires_grad=True)

        def build():
            _, _, q_st = combine(
                q_b,
                RectifierOutput(a_s, Tensor(np.array(0.1))),
                RectifierOutput(a_t, Tensor(np.array(-0.2))),
                draw_flags(True, True),
            )
            return q_st

        errs = check_gradients(build, {"a_s": a_s, "a_t": a_t})
        assert max(errs.values()) < 1e-4
        closed = q_b * math.sqrt(0.9) / (2.0 * math.sqrt(2.5))
        a_s.grad = None
        build().backward()
        assert max_relative_error(a_s.grad, np.array(closed)) < 1e-10


class TestDropoutDraw:
    def test_indicator_rule(self):
        d = DropoutDraw(u_s=0.2, u_t=0.19, p_s=0.2, p_t=0.2)
        assert d.active_s is True  # u >= p
        assert d.active_t is False

    def test_inference_both_active(self):
        d = DropoutDraw.inference()
        assert d.active_s and d.active_t

    def test_validation(self):
        with pytest.raises(DataError):
            DropoutDraw(u_s=1.0, u_t=0.0, p_s=0.2, p_t=0.2)
        with pytest.raises(DataError):
            DropoutDraw(u_s=0.0, u_t=0.0, p_s=1.5, p_t=0.2)

    def test_activation_frequency_at_p02(self):
        rng = np.random.default_rng(7)
        draws = [DropoutDraw.sample(rng, 0.2, 0.2) for _ in range(10_000)]
        freq_s = np.mean([d.active_s for d in draws])
        freq_t = np.mean([d.active_t for d in draws])
        assert 0.78 <= freq_s <= 0.82
        assert 0.78 <= freq_t <= 0.82


def toy_config(**kw):
    defaults = dict(
        batch_size=2, lr=1e-3, epochs=1, m_keyframes=2, k_levels=2, chunk_len=2,
        base_size=12, hv=12, wv=12, hidden_dim=8,
        image_channels=(2, 3, 4), subband_channels=(2, 3), temporal_channels=(2, 3),
        seed=3,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


def toy_video(n=8, h=24, w=32, seed=0):
    rng = np.random.default_rng(seed)
    return VideoTensor(
        frames=rng.random((n, h, w, 3)).astype(np.float32), fps=30.0,
        clip_id="toy", scene_id="toy",
    )


class _MeanEncoder:
    """Stub: per-frame mean as the single feature."""

    feature_dim = 1

    def __call__(self, x: Tensor) -> Tensor:
        return x.mean(axis=(1, 2, 3)).reshape(x.shape[0], 1)


class _IdentityHead:
    def __call__(self, f: Tensor) -> Tensor:
        return f


class TestBranchOps:
    def test_base_quality_mean_of_stubbed_scores(self):
        frames = np.stack([
            np.full((12, 12, 3), 0.2), np.full((12, 12, 3), 0.4),
            np.full((12, 12, 3), 0.9),
        ]).astype(np.float32)
        ks = KeyFrameSet(frames=frames, indices=np.array([0, 1, 2]))
        q_b = base_quality(ks, _MeanEncoder(), _IdentityHead(), target=12)
        assert q_b == pytest.approx(0.5, abs=1e-6)

    def test_base_quality_single_frame(self):
        frames = np.full((1, 12, 12, 3), 0.7, dtype=np.float32)
        ks = KeyFrameSet(frames=frames, indices=np.array([0]))
        assert base_quality(ks, _MeanEncoder(), _IdentityHead(), target=12) == pytest.approx(0.7, abs=1e-6)

    def test_base_quality_identical_frames(self):
        frames = np.repeat(
            np.random.default_rng(4).random((1, 16, 20, 3)), 5, axis=0
        ).astype(np.float32)
        ks = KeyFrameSet(frames=frames, indices=np.arange(5))
        cfg = toy_config()
        model = QualityModel(cfg)
        q_b = base_quality(ks, model.base_encoder, model.base_head, target=cfg.base_size)
        single = base_quality(
            KeyFrameSet(frames=frames[:1], indices=np.arange(1)),
            model.base_encoder, model.base_head, target=cfg.base_size,
        )
        assert q_b == pytest.approx(single, abs=1e-6)

    def test_fresh_rectifiers_are_identities(self):
        cfg = toy_config()
        model = QualityModel(cfg)
        rng = np.random.default_rng(5)
        frames = rng.random((2, 24, 32, 3)).astype(np.float32)
        ks = KeyFrameSet(frames=frames, indices=np.array([0, 1]))
        s = spatial_rectifier(ks, 1.3, cfg.k_levels, model.spatial_cnn, model.spatial_head)
        assert s.alpha == pytest.approx(1.0, abs=1e-6)
        assert s.beta == pytest.approx(0.0, abs=1e-6)
        chunks = ChunkSet(
            chunks=rng.random((2, 2, 12, 12, 3)).astype(np.float32),
            center_indices=np.array([0, 1]),
        )
        t = temporal_rectifier(chunks, model.temporal_cnn, model.temporal_head)
        assert t.alpha == pytest.approx(1.0, abs=1e-6)
        assert t.beta == pytest.approx(0.0, abs=1e-6)

    def test_spatial_head_input_length_rule(self):
        # M * K * 2C features reach the spatial head
        cfg = toy_config(m_keyframes=5, k_levels=4)
        model = QualityModel(cfg)
        c = model.spatial_cnn.feature_dim
        assert model.spatial_head.fc1.weight.shape[1] == 5 * 4 * 2 * c
        b, mk = 2, 5 * 4
        subbands = np.random.default_rng(6).random((b, mk, 16, 16, 3)).astype(np.float32)
        alpha, beta = spatial_outputs_batch(model, subbands)
        assert alpha.shape == (b,) and beta.shape == (b,)

    def test_temporal_duplication_invariance(self):
        cfg = toy_config()
        model = QualityModel(cfg)
        rng = np.random.default_rng(8)
        chunks = rng.random((3, 2, 12, 12, 3)).astype(np.float32)
        once = temporal_rectifier(
            ChunkSet(chunks=chunks, center_indices=np.arange(3)),
            model.temporal_cnn, model.temporal_head,
        )
        twice = temporal_rectifier(
            ChunkSet(chunks=np.concatenate([chunks, chunks]), center_indices=np.arange(6)),
            model.temporal_cnn, model.temporal_head,
        )
        assert once.alpha == pytest.approx(twice.alpha, abs=1e-6)
        assert once.beta == pytest.approx(twice.beta, abs=1e-6)

    def test_empty_inputs_rejected(self):
        cfg = toy_config()
        model = QualityModel(cfg)
        empty_ks = KeyFrameSet(frames=np.zeros((0, 12, 12, 3)), indices=np.array([], dtype=int))
        with pytest.raises(DataError):
            base_quality(empty_ks, model.base_encoder, model.base_head, target=12)
        empty_chunks = ChunkSet(chunks=np.zeros((0, 2, 12, 12, 3)), center_indices=np.array([], dtype=int))
        with pytest.raises(DataError):
            temporal_rectifier(empty_chunks, model.temporal_cnn, model.temporal_head)


class TestPredict:
    def test_identity_model_equal_scores(self):
        cfg = toy_config()
        model = QualityModel(cfg)
        quad = predict(toy_video(), cfg, model)
        assert quad.q_s == pytest.approx(quad.q_b, abs=1e-6)
        assert quad.q_t == pytest.approx(quad.q_b, abs=1e-6)
        assert quad.q_st == pytest.approx(quad.q_b, abs=1e-6)

    def test_hand_set_rectifiers_quad(self):
        cfg = toy_config()
        model = QualityModel(cfg)
        # pin base score to 0.25 and rectifiers to (2, 0) and (8, 1)
        model.base_head.fc2.weight.data[:] = 0.0
        model.base_head.fc2.bias.data[:] = 0.25
        for head, alpha, beta in [
            (model.spatial_head, 2.0, 0.0), (model.temporal_head, 8.0, 1.0),
        ]:
            head.fc2.weight.data[:] = 0.0
            head.fc2.bias.data[0] = softplus_inverse(alpha - 1e-4)
            head.fc2.bias.data[1] = beta
        quad = predict(toy_video(), cfg, model)
        assert quad.q_b == pytest.approx(0.25, abs=1e-5)
        assert quad.q_s == pytest.approx(0.5, abs=1e-5)
        assert quad.q_t == pytest.approx(3.0, abs=1e-4)
        assert quad.q_st == pytest.approx(1.5, abs=1e-4)

    def test_degenerate_single_frame_video(self):
        cfg = toy_config(m_keyframes=1, chunk_len=1)
        model = QualityModel(cfg)
        video = toy_video(n=1)
        quad = predict(video, cfg, model)
        for v in (quad.q_b, quad.q_s, quad.q_t, quad.q_st):
            assert math.isfinite(v)

    def test_invariant_qst_formula_at_inference(self):
        # q_st == sqrt(a_s a_t) q_b + (b_s + b_t)/2 when both are enabled
        from modvqa.media import sample_chunks, sample_key_frames
        from modvqa.pyramid import compute_rho

        cfg = toy_config()
        model = QualityModel(cfg)
        rng = np.random.default_rng(11)
        for head in (model.spatial_head, model.temporal_head):
            head.fc2.weight.data[:] = rng.standard_normal(head.fc2.weight.shape) * 0.1
            head.fc2.bias.data[:] = rng.standard_normal(2) * 0.1
        video = toy_video(seed=2)
        quad = predict(video, cfg, model)
        ks = sample_key_frames(video, cfg.m_keyframes)
        rho = compute_rho(video.height, video.width, cfg.base_size, cfg.base_size, cfg.k_levels)
        s = spatial_rectifier(ks, rho, cfg.k_levels, model.spatial_cnn, model.spatial_head)
        cs = sample_chunks(video, ks, cfg.chunk_len, cfg.hv, cfg.wv)
        t = temporal_rectifier(cs, model.temporal_cnn, model.temporal_head)
        want = math.sqrt(s.alpha * t.alpha) * quad.q_b + (s.beta + t.beta) / 2.0
        assert quad.q_st == pytest.approx(want, abs=1e-5)
