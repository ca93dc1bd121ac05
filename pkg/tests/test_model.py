import numpy as np
import pytest

from lisalab.checkpoint import load_checkpoint, save_checkpoint
from lisalab.errors import ConfigError, ShapeError
from lisalab.instrument import group_param_counts, total_param_count
from lisalab.model import (
    ModelConfig,
    build_model,
    forward,
    layer_params,
    loss_on_batch,
)


class TestConfig:
    def test_dim_head_divisibility(self):
        with pytest.raises(ConfigError):
            ModelConfig(64, 32, 65, 4, 2)

    def test_num_blocks_positive(self):
        with pytest.raises(ConfigError):
            ModelConfig(64, 32, 64, 4, 0)

    def test_defaults(self):
        cfg = ModelConfig(64, 32, 64, 4, 4)
        assert cfg.mlp_ratio == 4 and not cfg.tie_embeddings


class TestBuild:
    def test_group_count(self):
        cfg = ModelConfig(64, 32, 64, 4, 12)
        assert len(build_model(cfg, 0).layers) == 14

    def test_same_seed_bitwise_identical(self, tiny_config):
        m1 = build_model(tiny_config, seed=42)
        m2 = build_model(tiny_config, seed=42)
        for p1, p2 in zip(m1.named_params(), m2.named_params()):
            assert p1.name == p2.name
            assert np.array_equal(p1.data, p2.data)

    def test_different_seed_differs(self, tiny_config):
        m1 = build_model(tiny_config, seed=1)
        m2 = build_model(tiny_config, seed=2)
        assert not np.array_equal(m1.param("embed.wte").data, m2.param("embed.wte").data)

    def test_desk_count_matches_closed_form(self, desk_config):
        model = build_model(desk_config, 0)
        assert model.count_params() == total_param_count(desk_config)
        counts = group_param_counts(desk_config)
        for i, group in enumerate(model.layers):
            assert sum(p.numel for p in group.params) == counts[i]

    def test_gpt2_small_count_is_124m(self):
        # tied-embedding GPT-2 Small arithmetic
        cfg = ModelConfig(50257, 1024, 768, 12, 12, tie_embeddings=True)
        n = total_param_count(cfg)
        assert n == 124_439_808
        model = build_model(cfg, 0)
        assert model.count_params() == n

    def test_partition_no_overlap_no_gap(self, tiny_model):
        seen = set()
        for i in range(len(tiny_model.layers)):
            for p in layer_params(tiny_model, i):
                assert id(p) not in seen
                seen.add(id(p))
        assert seen == {id(p) for p in tiny_model.named_params()}


class TestLayerParams:
    def test_embedding_group(self, tiny_model):
        names = {p.name for p in layer_params(tiny_model, 0)}
        assert names == {"embed.wte", "embed.wpe"}

    def test_head_group_untied(self, tiny_model):
        names = {p.name for p in layer_params(tiny_model, len(tiny_model.layers) - 1)}
        assert names == {"head.ln_f.gain", "head.ln_f.bias", "head.w_out"}

    def test_head_group_tied_has_norm_only(self):
        cfg = ModelConfig(32, 16, 32, 4, 2, tie_embeddings=True)
        model = build_model(cfg, 0)
        names = {p.name for p in layer_params(model, 3)}
        assert names == {"head.ln_f.gain", "head.ln_f.bias"}
        assert {p.name for p in layer_params(model, 0)} == {"embed.wte", "embed.wpe"}

    def test_out_of_range(self, tiny_model):
        with pytest.raises(IndexError):
            layer_params(tiny_model, len(tiny_model.layers))
        with pytest.raises(IndexError):
            layer_params(tiny_model, -1)


class TestForward:
    def test_shapes(self, tiny_model):
        toks = np.zeros((2, 8), dtype=np.int64)
        out = forward(tiny_model, toks)
        assert out.shape == (2, 8, 32)

    def test_causality_bitwise(self, tiny_model):
        rng = np.random.default_rng(0)
        toks = rng.integers(0, 32, (1, 10))
        base = forward(tiny_model, toks).data.copy()
        for t in range(9):
            perturbed = toks.copy()
            perturbed[0, t + 1] = (perturbed[0, t + 1] + 7) % 32
            out = forward(tiny_model, perturbed).data
            assert np.array_equal(out[0, : t + 1], base[0, : t + 1])

    def test_purity_bitwise(self, tiny_model):
        rng = np.random.default_rng(1)
        toks = rng.integers(0, 32, (2, 12))
        a = forward(tiny_model, toks).data
        b = forward(tiny_model, toks).data
        assert np.array_equal(a, b)

    def test_zero_head_gives_log_vocab_loss(self, tiny_config):
        model = build_model(tiny_config, 5)
        model.param("head.w_out").data[:] = 0.0
        rng = np.random.default_rng(2)
        toks = rng.integers(0, 32, (3, 8))
        loss = loss_on_batch(model, toks, toks)
        assert abs(loss.item() - np.log(32)) < 1e-9

    def test_tied_embeddings_forward_and_grads(self):
        cfg = ModelConfig(32, 16, 32, 4, 2, tie_embeddings=True)
        model = build_model(cfg, 7)
        rng = np.random.default_rng(3)
        toks = rng.integers(0, 32, (2, 8))
        from lisalab.optim import zero_grads
        from lisalab.tensor import Tape

        with Tape() as tape:
            loss = loss_on_batch(model, toks, toks)
        zero_grads(model)
        tape.backward(loss)
        # the tied table collects gradient from both the lookup and the head
        assert model.param("embed.wte").grad is not None
        assert np.abs(model.param("embed.wte").grad).sum() > 0

    def test_overlong_sequence_rejected(self, tiny_model):
        with pytest.raises(ShapeError):
            forward(tiny_model, np.zeros((1, 17), dtype=np.int64))

    def test_token_out_of_vocab_rejected(self, tiny_model):
        toks = np.zeros((1, 4), dtype=np.int64)
        toks[0, 0] = 32
        with pytest.raises(IndexError):
            forward(tiny_model, toks)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tiny_model, tmp_path):
        path = tmp_path / "model.npz"
        save_checkpoint(path, tiny_model)
        loaded, state = load_checkpoint(path)
        assert state is None
        assert loaded.cfg == tiny_model.cfg
        for p in tiny_model.named_params():
            assert np.array_equal(loaded.param(p.name).data, p.data)

    def test_round_trip_preserves_trainable_flags(self, tiny_model, tmp_path):
        tiny_model.layers[1].trainable = False
        path = tmp_path / "model.npz"
        save_checkpoint(path, tiny_model)
        loaded, _ = load_checkpoint(path)
        assert [g.trainable for g in loaded.layers] == [
            g.trainable for g in tiny_model.layers
        ]
