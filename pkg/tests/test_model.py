import math

import numpy as np
import pytest

import ternkit as tk
from ternkit.errors import (
    CapacityError,
    InvalidInputError,
    InvalidTokenError,
    ShapeError,
)

import oracles
from conftest import TINY_CONFIG


class TestRmsnorm:
    def test_uniform_vector_is_fixed_point(self):
        x = np.ones(4, dtype=np.float32)
        gain = np.ones(4, dtype=np.float32)
        assert tk.rmsnorm(x, gain, 0.0).tolist() == [1.0, 1.0, 1.0, 1.0]

    def test_zero_vector_with_eps(self):
        out = tk.rmsnorm(np.zeros(2, dtype=np.float32), np.ones(2, np.float32), 1e-5)
        assert out.tolist() == [0.0, 0.0]

    def test_three_four_frozen(self):
        out = tk.rmsnorm(np.array([3.0, 4.0], np.float32), np.ones(2, np.float32), 0.0)
        assert np.allclose(out, [0.8485281, 1.1313708], atol=1e-6)

    def test_gain_scales_output(self):
        x = np.array([3.0, 4.0], np.float32)
        base = tk.rmsnorm(x, np.ones(2, np.float32), 0.0)
        scaled = tk.rmsnorm(x, np.array([2.0, 0.5], np.float32), 0.0)
        assert np.allclose(scaled, base * np.array([2.0, 0.5]))

    def test_matches_float64_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((5, 16)).astype(np.float32)
        gain = rng.standard_normal(16).astype(np.float32)
        got = tk.rmsnorm(x, gain, 1e-5)
        want = oracles.oracle_rmsnorm(x, gain, 1e-5)
        assert np.allclose(got, want, rtol=1e-5, atol=1e-6)

    def test_gain_length_checked(self):
        with pytest.raises(ShapeError):
            tk.rmsnorm(np.ones(4, np.float32), np.ones(3, np.float32), 1e-5)


class TestReluSquared:
    def test_pointwise_values(self):
        out = tk.relu_squared(np.array([-2.0, 0.0, 3.0], np.float32))
        assert out.tolist() == [0.0, 0.0, 9.0]

    def test_nonnegative_everywhere(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(100).astype(np.float32)
        assert np.all(tk.relu_squared(x) >= 0)


class TestRope:
    def test_position_zero_identity(self):
        rng = np.random.default_rng(2)
        q = rng.standard_normal(8).astype(np.float32)
        k = rng.standard_normal(8).astype(np.float32)
        rq, rk = tk.rope_apply(q, k, 0)
        assert np.array_equal(rq, q)
        assert np.array_equal(rk, k)

    def test_two_dims_position_one(self):
        # One pair, position 1: plain rotation by 1 radian.
        rq, rk = tk.rope_apply([1.0, 0.0], [0.0, 1.0], 1)
        assert np.allclose(rq, [math.cos(1.0), math.sin(1.0)], atol=1e-6)
        assert np.allclose(rk, [-math.sin(1.0), math.cos(1.0)], atol=1e-6)

    def test_norm_preserved(self):
        rng = np.random.default_rng(3)
        q = rng.standard_normal(16).astype(np.float32)
        k = rng.standard_normal(16).astype(np.float32)
        for pos in (1, 7, 100):
            rq, rk = tk.rope_apply(q, k, pos)
            assert abs(np.linalg.norm(rq) - np.linalg.norm(q)) < 1e-5
            assert abs(np.linalg.norm(rk) - np.linalg.norm(k)) < 1e-5

    def test_relative_position_dot_product(self):
        # q at p+d against k at p depends only on the offset d.
        rng = np.random.default_rng(4)
        q = rng.standard_normal(8).astype(np.float32)
        k = rng.standard_normal(8).astype(np.float32)
        d = 3
        pairs = []
        for p in (0, 5, 40):
            rq, _ = tk.rope_apply(q, q, p + d)
            _, rk = tk.rope_apply(k, k, p)
            pairs.append(float(rq @ rk))
        assert max(pairs) - min(pairs) < 1e-4

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        vec = rng.standard_normal((1, 1, 12)).astype(np.float32)
        want = oracles.oracle_rope(vec, [9], 10000.0)[0, 0]
        rq, _ = tk.rope_apply(vec[0, 0], vec[0, 0], 9)
        assert np.allclose(rq, want, rtol=1e-5, atol=1e-6)

    def test_odd_dimension_rejected(self):
        with pytest.raises(ShapeError):
            tk.rope_apply([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 1)

    def test_negative_position_rejected(self):
        with pytest.raises(InvalidInputError):
            tk.rope_apply([1.0, 0.0], [1.0, 0.0], -1)


class TestBitlinear:
    def test_zero_input_gives_zero(self):
        rng = np.random.default_rng(6)
        pt = tk.pack_ternary(
            tk.absmean_quantize_weights(rng.standard_normal((5, 8)).astype(np.float32))
        )
        out = tk.bitlinear_forward(np.zeros((3, 8), np.float32), pt)
        assert not out.any()

    def test_zero_weights_give_zero(self):
        pt = tk.pack_ternary(tk.TernaryWeights(np.zeros((5, 8), np.int8), 0.0))
        rng = np.random.default_rng(7)
        out = tk.bitlinear_forward(rng.standard_normal((3, 8)).astype(np.float32), pt)
        assert not out.any()

    def test_matches_float_oracle(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((2, 8)).astype(np.float32)
        tw = tk.absmean_quantize_weights(rng.standard_normal((4, 8)).astype(np.float32))
        got = tk.bitlinear_forward(x, tk.pack_ternary(tw))
        want = oracles.oracle_bitlinear(x, tw)
        assert np.allclose(got, want, rtol=1e-4, atol=1e-6)

    def test_kernels_bit_identical(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((6, 32)).astype(np.float32)
        tw = tk.absmean_quantize_weights(rng.standard_normal((12, 32)).astype(np.float32))
        pt = tk.pack_ternary(tw)
        a = tk.bitlinear_forward(x, pt, kernel="reference")
        b = tk.bitlinear_forward(x, pt, kernel="packed")
        c = tk.bitlinear_forward(x, pt, kernel="lut")
        assert np.array_equal(a, b) and np.array_equal(b, c)

    def test_unknown_kernel_rejected(self):
        pt = tk.pack_ternary(tk.TernaryWeights(np.zeros((2, 4), np.int8), 0.0))
        with pytest.raises(InvalidInputError):
            tk.bitlinear_forward(np.zeros((1, 4), np.float32), pt, kernel="fused")


class TestAttention:
    def test_single_token_reduces_to_value_path(self):
        # With one cached position the softmax is a delta, so the block
        # output is exactly wo(subln(v heads broadcast across groups)).
        cfg = TINY_CONFIG
        model = tk.random_model(cfg, seed=11)
        layer = model.layers[0]
        rng = np.random.default_rng(12)
        x = rng.standard_normal((1, cfg.d_model)).astype(np.float32)
        cache = tk.KVCache.for_config(cfg)
        got = tk.attention_forward(x, layer, cache, 0, layer_idx=0, config=cfg)

        h = tk.rmsnorm(x, layer.attn_norm, cfg.norm_eps)
        v = tk.bitlinear_forward(h, layer.wv).reshape(1, cfg.n_kv_heads, cfg.head_dim)
        group = cfg.n_heads // cfg.n_kv_heads
        ctx = np.repeat(v, group, axis=1).reshape(1, cfg.d_model)
        want = tk.bitlinear_forward(tk.rmsnorm(ctx, layer.attn_subln, cfg.norm_eps), layer.wo)
        assert np.array_equal(got, want)

    def test_causal_prefix_unchanged_bitwise(self):
        cfg = TINY_CONFIG
        model = tk.random_model(cfg, seed=13)
        layer = model.layers[1]
        rng = np.random.default_rng(14)
        x_full = rng.standard_normal((9, cfg.d_model)).astype(np.float32)
        out_full = tk.attention_forward(
            x_full, layer, tk.KVCache.for_config(cfg), 0, layer_idx=0, config=cfg
        )
        out_prefix = tk.attention_forward(
            x_full[:5], layer, tk.KVCache.for_config(cfg), 0, layer_idx=0, config=cfg
        )
        assert np.array_equal(out_full[:5], out_prefix)

    def test_grouped_heads_match_per_head_oracle(self):
        cfg = TINY_CONFIG
        model = tk.random_model(cfg, seed=15)
        layer = model.layers[0]
        rng = np.random.default_rng(16)
        x = rng.standard_normal((6, cfg.d_model)).astype(np.float32)
        cache = tk.KVCache.for_config(cfg)
        got = tk.attention_forward(x, layer, cache, 0, layer_idx=0, config=cfg)
        want, _, _ = oracles.oracle_attention(x, layer, cfg, 0)
        assert np.allclose(got, want, rtol=1e-4, atol=1e-6)

    def test_cache_rows_match_oracle(self):
        cfg = TINY_CONFIG
        model = tk.random_model(cfg, seed=17)
        layer = model.layers[0]
        rng = np.random.default_rng(18)
        x = rng.standard_normal((4, cfg.d_model)).astype(np.float32)
        cache = tk.KVCache.for_config(cfg)
        tk.attention_forward(x, layer, cache, 0, layer_idx=1, config=cfg)
        _, k, v = oracles.oracle_attention(x, layer, cfg, 0)
        # cache layout: (layer, kv_head, position, head_dim)
        got_k = cache.keys[1, :, :4].transpose(1, 0, 2)
        got_v = cache.values[1, :, :4].transpose(1, 0, 2)
        assert np.allclose(got_k, k, rtol=1e-4, atol=1e-6)
        assert np.allclose(got_v, v, rtol=1e-4, atol=1e-6)
        assert not cache.keys[0].any()

    def test_capacity_enforced(self):
        cfg = TINY_CONFIG
        model = tk.random_model(cfg, seed=19)
        cache = tk.KVCache.for_config(cfg)
        x = np.zeros((1, cfg.d_model), np.float32)
        with pytest.raises(CapacityError):
            tk.attention_forward(
                x, model.layers[0], cache, cfg.max_seq_len, layer_idx=0, config=cfg
            )


class TestFfn:
    def test_matches_oracle(self):
        cfg = TINY_CONFIG
        model = tk.random_model(cfg, seed=20)
        rng = np.random.default_rng(21)
        x = rng.standard_normal((5, cfg.d_model)).astype(np.float32)
        got = tk.ffn_forward(x, model.layers[0], config=cfg)
        want = oracles.oracle_ffn(x, model.layers[0], cfg)
        assert np.allclose(got, want, rtol=1e-4, atol=1e-6)

    def test_zero_input_gives_zero(self):
        cfg = TINY_CONFIG
        model = tk.random_model(cfg, seed=22)
        out = tk.ffn_forward(np.zeros((2, cfg.d_model), np.float32), model.layers[0], config=cfg)
        assert not out.any()


class TestForwardPass:
    def test_logits_shape(self, tiny_model):
        logits = tk.forward_pass([1, 2, 3], tiny_model)
        assert logits.shape == (3, tiny_model.config.vocab_size)
        assert logits.dtype == np.float32

    def test_zero_layer_model_is_norm_plus_head(self):
        cfg = tk.ModelConfig(
            n_layers=0, d_model=16, n_heads=2, n_kv_heads=1, d_ff=32,
            vocab_size=32, max_seq_len=8,
        )
        model = tk.random_model(cfg, seed=23)
        tokens = [3, 9, 30]
        got = tk.forward_pass(tokens, model)
        x = model.embedding[tokens]
        want = tk.rmsnorm(x, model.final_norm, cfg.norm_eps) @ model.lm_head.T
        assert np.array_equal(got, want)

    def test_matches_float64_oracle(self, tiny_model):
        tokens = [5, 0, 77, 12]
        got = tk.forward_pass(tokens, tiny_model)
        want = oracles.oracle_forward(tokens, tiny_model)
        scale = max(1.0, float(np.max(np.abs(want))))
        assert np.max(np.abs(got - want)) <= 1e-4 * scale

    def test_incremental_matches_full(self, tiny_model):
        rng = np.random.default_rng(24)
        tokens = rng.integers(0, tiny_model.config.vocab_size, 12).tolist()
        full = tk.forward_pass(tokens, tiny_model)
        cache = tk.KVCache.for_config(tiny_model.config)
        rows = []
        pos = 0
        for chunk in (tokens[:5], tokens[5:6], tokens[6:]):
            rows.append(tk.forward_pass(chunk, tiny_model, cache, pos))
            pos += len(chunk)
        inc = np.concatenate(rows, axis=0)
        assert np.allclose(inc, full, rtol=1e-4, atol=1e-6)

    def test_kernel_routes_identical(self, tiny_config):
        ref = tk.random_model(tiny_config, seed=25, kernel="reference")
        packed = tk.random_model(tiny_config, seed=25, kernel="packed")
        lut = tk.random_model(tiny_config, seed=25, kernel="lut")
        tokens = [1, 2, 3, 4, 5]
        a = tk.forward_pass(tokens, ref)
        b = tk.forward_pass(tokens, packed)
        c = tk.forward_pass(tokens, lut)
        assert np.array_equal(a, b) and np.array_equal(b, c)

    def test_no_bias_parameters(self, tiny_model):
        names = [name for name, _ in tiny_model.named_parameters()]
        assert names, "model must expose parameters"
        assert all("bias" not in n for n in names)
        per_layer = [n.split(".", 2)[2] for n in names if n.startswith("layers.0.")]
        assert per_layer == list(tk.LAYER_TENSOR_ORDER)

    def test_out_of_vocab_token_rejected(self, tiny_model):
        with pytest.raises(InvalidTokenError):
            tk.forward_pass([tiny_model.config.vocab_size], tiny_model)

    def test_stale_cache_position_rejected(self, tiny_model):
        cache = tk.KVCache.for_config(tiny_model.config)
        with pytest.raises(InvalidInputError):
            tk.forward_pass([1], tiny_model, cache, 3)

    def test_sequence_capacity_enforced(self, tiny_model):
        too_long = [0] * (tiny_model.config.max_seq_len + 1)
        with pytest.raises(CapacityError):
            tk.forward_pass(too_long, tiny_model)


class TestSample:
    def test_greedy_argmax(self):
        params = tk.GenerationParams(temperature=0.0)
        rng = np.random.default_rng(0)
        assert tk.sample(np.array([1.0, 3.0, 2.0]), params, rng) == 1

    def test_greedy_tie_takes_lowest_index(self):
        params = tk.GenerationParams(temperature=0.0)
        rng = np.random.default_rng(0)
        assert tk.sample(np.array([5.0, 5.0]), params, rng) == 0

    def test_seeded_sampling_deterministic(self):
        logits = np.array([0.1, 0.7, 0.2, 1.5])
        params = tk.GenerationParams(temperature=0.8, seed=42)
        a = [tk.sample(logits, params, np.random.default_rng(42)) for _ in range(10)]
        b = [tk.sample(logits, params, np.random.default_rng(42)) for _ in range(10)]
        assert a == b

    def test_top_k_restricts_support(self):
        logits = np.array([10.0, 9.0, -50.0, -60.0])
        params = tk.GenerationParams(temperature=1.0, top_k=2)
        rng = np.random.default_rng(7)
        draws = {tk.sample(logits, params, rng) for _ in range(200)}
        assert draws <= {0, 1}
        assert draws == {0, 1}

    def test_top_k_one_is_greedy(self):
        logits = np.array([0.3, 2.0, 1.9])
        params = tk.GenerationParams(temperature=5.0, top_k=1)
        rng = np.random.default_rng(11)
        assert all(tk.sample(logits, params, rng) == 1 for _ in range(20))

    def test_high_temperature_spreads_mass(self):
        logits = np.array([1.0, 1.1])
        params = tk.GenerationParams(temperature=100.0)
        rng = np.random.default_rng(13)
        draws = [tk.sample(logits, params, rng) for _ in range(300)]
        assert 0.3 < np.mean(draws) < 0.7

    def test_invalid_params_rejected(self):
        with pytest.raises(InvalidInputError):
            tk.GenerationParams(max_new_tokens=-1)
        with pytest.raises(InvalidInputError):
            tk.GenerationParams(temperature=-0.1)
        with pytest.raises(InvalidInputError):
            tk.GenerationParams(top_k=0)


class TestGenerate:
    def test_zero_new_tokens(self, tiny_model):
        result = tk.generate([1, 2], tiny_model, tk.GenerationParams(max_new_tokens=0))
        assert result.ids == []
        assert result.step_times_s == []

    def test_step_count_and_timing(self, tiny_model):
        result = tk.generate([1, 2, 3], tiny_model, tk.GenerationParams(max_new_tokens=6))
        assert len(result.ids) == 6
        assert len(result.step_times_s) == 6
        assert all(t > 0 for t in result.step_times_s)

    def test_greedy_is_deterministic(self, tiny_model):
        params = tk.GenerationParams(max_new_tokens=16)
        a = tk.generate([7, 8, 9], tiny_model, params)
        b = tk.generate([7, 8, 9], tiny_model, params)
        assert a.ids == b.ids

    def test_stop_token_halts_and_is_included(self, tiny_model):
        probe = tk.generate([4, 5], tiny_model, tk.GenerationParams(max_new_tokens=8))
        assert len(probe.ids) == 8
        stop = probe.ids[3]
        stop_at = probe.ids.index(stop)
        result = tk.generate(
            [4, 5], tiny_model, tk.GenerationParams(max_new_tokens=8, stop_ids=frozenset({stop}))
        )
        assert result.ids == probe.ids[: stop_at + 1]
        assert result.ids[-1] == stop

    def test_prompt_capacity_enforced(self, tiny_model):
        max_seq = tiny_model.config.max_seq_len
        prompt = [0] * (max_seq - 3)
        with pytest.raises(CapacityError):
            tk.generate(prompt, tiny_model, tk.GenerationParams(max_new_tokens=5))
        ok = tk.generate(prompt, tiny_model, tk.GenerationParams(max_new_tokens=4))
        assert len(ok.ids) == 4

    def test_empty_prompt_rejected(self, tiny_model):
        with pytest.raises(InvalidInputError):
            tk.generate([], tiny_model, tk.GenerationParams(max_new_tokens=1))

    def test_sampled_generation_seed_reproducible(self, tiny_model):
        params = tk.GenerationParams(max_new_tokens=12, temperature=0.9, top_k=40, seed=123)
        a = tk.generate([10, 11], tiny_model, params)
        b = tk.generate([10, 11], tiny_model, params)
        assert a.ids == b.ids


class TestModelConfig:
    def test_dict_round_trip(self, tiny_config):
        again = tk.ModelConfig.from_dict(tiny_config.to_dict())
        assert again == tiny_config

    def test_head_divisibility_checked(self):
        with pytest.raises(InvalidInputError):
            tk.ModelConfig(
                n_layers=1, d_model=64, n_heads=3, n_kv_heads=2, d_ff=128,
                vocab_size=32, max_seq_len=8,
            )

    def test_kv_grouping_checked(self):
        with pytest.raises(InvalidInputError):
            tk.ModelConfig(
                n_layers=1, d_model=64, n_heads=4, n_kv_heads=3, d_ff=128,
                vocab_size=32, max_seq_len=8,
            )

    def test_odd_head_dim_rejected(self):
        with pytest.raises(InvalidInputError):
            tk.ModelConfig(
                n_layers=1, d_model=6, n_heads=2, n_kv_heads=2, d_ff=8,
                vocab_size=32, max_seq_len=8,
            )

    def test_from_dict_rejects_missing_key(self):
        d = TINY_CONFIG.to_dict()
        del d["d_model"]
        with pytest.raises(InvalidInputError):
            tk.ModelConfig.from_dict(d)

    def test_derived_dims(self, tiny_config):
        assert tiny_config.head_dim == 16
        assert tiny_config.kv_dim == 32


class TestTensorBridge:
    def test_round_trip_through_tensor_dict(self, tiny_model):
        tensors = tk.model_to_tensors(tiny_model)
        again = tk.model_from_tensors(tiny_model.config, tensors)
        tokens = [1, 2, 3]
        assert np.array_equal(tk.forward_pass(tokens, again), tk.forward_pass(tokens, tiny_model))

    def test_names_cover_expected_set(self, tiny_config):
        names = tk.model_tensor_names(tiny_config)
        assert names[0] == "embedding"
        assert "layers.0.wq" in names and "layers.1.w_down" in names
        assert names[-1] == "lm_head"
        assert len(names) == 3 + 2 * len(tk.LAYER_TENSOR_ORDER)

    def test_unknown_tensor_rejected(self, tiny_model):
        tensors = tk.model_to_tensors(tiny_model)
        tensors["layers.0.bias"] = np.zeros((1, 4), np.float32)
        with pytest.raises(InvalidInputError):
            tk.model_from_tensors(tiny_model.config, tensors)

    def test_missing_tensor_rejected(self, tiny_model):
        tensors = tk.model_to_tensors(tiny_model)
        del tensors["final_norm"]
        with pytest.raises(InvalidInputError):
            tk.model_from_tensors(tiny_model.config, tensors)
