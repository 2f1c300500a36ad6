import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import module_grad_error
from mqa.errors import ConfigurationError, DimensionError
from mqa.mqaformer import (
    KINDS, PRESETS, EmbedderConfig, Encoder, ScorerConfig, ScorerModel,
    add_positional, build_embedder, check_partition, default_parts, predict_score, predict_scores,
    sinusoidal_table,
)
from mqa.numcore import FlopCounter, Tensor, no_grad, ops


def tiny_embedder(kind, **kw):
    base = dict(kind=kind, K=8, W=4, D=30, K_part=6, hfe_attention_heads=2, mlp_hidden=(8, 8),
                cnn_channels=(4, 4), cnn_kernels=(3, 2), hfe_channels=4)
    base.update(kw)
    return EmbedderConfig(**base)


def jitter_biases(module, rng):
    """Zero-initialised biases can leave a ReLU input exactly at its kink."""
    for name, p in module.named_parameters():
        if name.endswith("bias"):
            p.data = p.data + rng.normal(scale=0.1, size=p.shape)


def tiny_scorer(kind, canonical_T=8, seed=0, **kw):
    cfg = ScorerConfig(tiny_embedder(kind, **kw), canonical_T=canonical_T, heads=2, blocks=1, head_hidden=(8, 4))
    return ScorerModel(cfg, np.random.default_rng(seed))


class TestBodyParts:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_presets_partition(self, name):
        parts = PRESETS[name]
        assert len(parts) == 5
        check_partition(parts, sum(len(v) for v in parts.values()))

    def test_overlap_rejected(self):
        with pytest.raises(ConfigurationError):
            check_partition({"a": [0, 1], "b": [1, 2]}, 3)

    def test_gap_rejected(self):
        with pytest.raises(ConfigurationError):
            tiny_embedder("hfe", body_parts={"a": [0, 1, 2], "b": [3, 4, 5, 6, 7, 8]})

    def test_unknown_joint_count(self):
        with pytest.raises(ConfigurationError):
            default_parts(17)


class TestMLP:
    def test_default_token_size(self, rng):
        emb = build_embedder(EmbedderConfig("mlp", D=75), rng)
        assert emb(rng.normal(size=(40, 75))).shape == (256,)

    def test_zero_weights(self, rng):
        emb = build_embedder(tiny_embedder("mlp"), rng)
        for p in emb.parameters():
            p.data[...] = 0.0
        np.testing.assert_array_equal(emb(rng.normal(size=(4, 30))).data, np.zeros(8))

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            build_embedder(tiny_embedder("mlp"), rng)(np.zeros((5, 30)))


class TestCNN:
    def test_time_constant_window(self, rng):
        emb = build_embedder(tiny_embedder("cnn", W=6), rng)
        x = np.tile(rng.normal(size=30), (6, 1))
        with no_grad():
            pooled = emb(x).data
            features = emb.conv2(emb.conv1(Tensor(x))).data
            single = emb.out(Tensor(features[0])).data
        np.testing.assert_allclose(features, np.tile(features[0], (len(features), 1)), atol=1e-12)
        np.testing.assert_allclose(pooled, single, atol=1e-12)

    def test_receptive_field(self, rng):
        with pytest.raises(DimensionError):
            build_embedder(tiny_embedder("cnn", W=3), rng)

    def test_output_length(self, rng):
        assert build_embedder(tiny_embedder("cnn"), rng)(rng.normal(size=(2, 3, 4, 30))).shape == (2, 3, 8)


class TestHFE:
    def test_locality(self, rng):
        emb = build_embedder(tiny_embedder("hfe"), rng)
        x = rng.normal(size=(4, 30))
        y = x.copy()
        y[:, 6:12] += rng.normal(size=(4, 6))  # left arm = joints 2, 3
        with no_grad():
            a, b = emb.part_features(x).data, emb.part_features(y).data
        changed = [not np.allclose(a[i], b[i]) for i in range(5)]
        assert changed == [False, True, False, False, False]

    def test_shape_arithmetic(self, rng):
        emb = build_embedder(EmbedderConfig("hfe", D=75), rng)
        assert emb.part_features(rng.normal(size=(40, 75))).shape == (5, 64)
        assert emb.out.weight.shape == (320, 256)
        assert emb(rng.normal(size=(40, 75))).shape == (256,)


class TestHFEA:
    def test_rows_stochastic(self, rng):
        emb = build_embedder(tiny_embedder("hfe_a"), rng)
        emb(rng.normal(scale=3, size=(7, 4, 30)))
        w = emb.last_part_attention
        assert w.shape == (7, 2, 5, 5)
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)

    def test_identical_parts_uniform(self, rng):
        emb = build_embedder(EmbedderConfig("hfe_a", D=75), rng)
        parts = np.tile(rng.normal(size=64), (5, 1))
        _, w = emb.part_attention(parts)
        assert w.shape == (5, 5, 5)
        np.testing.assert_allclose(w, 0.2, atol=1e-12)


class TestEmbedderGradients:
    @pytest.mark.parametrize("kind", KINDS)
    def test_gradient(self, rng, kind):
        emb = build_embedder(tiny_embedder(kind), rng)
        jitter_biases(emb, rng)
        x = rng.normal(size=(3, 4, 30))
        target = rng.normal(size=(3, 8))
        assert module_grad_error(emb, lambda: ops.mse_loss(emb(x), target)) < 1e-3


class TestPositional:
    def test_zero_table(self, rng):
        z = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(add_positional(z, np.zeros((3, 4))).data, z)

    def test_position_zero(self):
        t = sinusoidal_table(10, 16)
        np.testing.assert_array_equal(t[0, 0::2], 0.0)
        np.testing.assert_array_equal(t[0, 1::2], 1.0)

    @pytest.mark.parametrize("K", [8, 9, 256])
    def test_distinct_rows(self, K):
        t = sinusoidal_table(64, K)
        d = np.abs(t[:, None, :] - t[None, :, :]).max(axis=-1)
        assert np.all(d[~np.eye(64, dtype=bool)] > 1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            add_positional(np.zeros((3, 4)), np.zeros((4, 4)))


class TestEncoder:
    def test_shape_and_record(self, rng):
        enc = Encoder(8, 2, 2, 16, rng)
        out, maps = enc(rng.normal(size=(5, 8)))
        assert out.shape == (5, 8)
        assert len(maps) == 2 and maps[0].shape == (2, 5, 5)

    def test_singleton(self, rng):
        _, maps = Encoder(8, 4, 1, 16, rng)(rng.normal(size=(1, 8)))
        np.testing.assert_array_equal(maps[0], np.ones((4, 1, 1)))

    def test_heads_must_divide(self, rng):
        with pytest.raises(ConfigurationError):
            Encoder(10, 4, 1, 16, rng)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 6), st.floats(0.1, 20))
    def test_rows_stochastic(self, N, scale):
        r = np.random.default_rng(N)
        _, maps = Encoder(8, 2, 2, 16, r)(r.normal(scale=scale, size=(N, 8)))
        for m in maps:
            assert np.all(m >= 0)
            np.testing.assert_allclose(m.sum(axis=-1), 1.0, atol=1e-6)


class TestScorer:
    def test_default_widths(self):
        cfg = ScorerConfig(EmbedderConfig("hfe_a", D=75))
        assert (cfg.K, cfg.embedder.W, cfg.heads, cfg.blocks, cfg.embedder.hfe_attention_heads) == (256, 40, 4, 2, 5)

    @pytest.mark.parametrize("kind", KINDS)
    def test_drop_in(self, rng, kind):
        model = tiny_scorer(kind)
        seq = rng.normal(scale=20, size=(13, 30))
        s1, rec = predict_score(model, seq)
        s2, _ = predict_score(model, seq)
        assert 0.0 < s1 < 1.0 and s1 == s2
        assert [m.shape for m in rec.encoder] == [(2, 2, 2)]
        assert (rec.parts is not None) == (kind == "hfe_a")

    @pytest.mark.parametrize("kind", KINDS)
    def test_full_gradient(self, rng, kind):
        model = tiny_scorer(kind)
        jitter_biases(model, rng)
        x = rng.normal(size=(3, 8, 30))
        model.fit_normalization(x)
        y = np.array([0.2, 0.5, 0.9])
        assert module_grad_error(model, lambda: ops.bce_loss(model(x)[0], y)) < 1e-3

    def test_attention_flops_quadratic(self, rng):
        counts = {}
        for N in (4, 8):
            model = tiny_scorer("mlp", canonical_T=4 * N)
            with FlopCounter() as fc, no_grad():
                model(rng.normal(size=(1, 4 * N, 30)))
            counts[N] = fc.by_scope["attention"]
            assert counts[N] == 4 * N * N * 8  # one block, K = 8
        assert counts[8] == 4 * counts[4]

    def test_window_order_matters(self):
        model = tiny_scorer("mlp", canonical_T=16)
        r = np.random.default_rng(5)
        x = r.normal(size=(20, 16, 30))
        perm = x.reshape(20, 4, 4, 30)[:, ::-1].reshape(20, 16, 30)
        a, _ = predict_scores(model, x)
        b, _ = predict_scores(model, perm)
        assert np.sum(np.abs(a - b) > 1e-6) >= 18

    def test_round_trip(self, tmp_path, rng):
        model = tiny_scorer("hfe_a")
        model.fit_normalization(rng.normal(size=(4, 8, 30)))
        path = model.save(tmp_path / "m.ckpt")
        again = ScorerModel.load(path)
        x = rng.normal(size=(3, 8, 30))
        assert predict_scores(model, x)[0].tobytes() == predict_scores(again, x)[0].tobytes()

    def test_too_short(self):
        with pytest.raises(DimensionError):
            ScorerConfig(tiny_embedder("mlp"), canonical_T=3)
