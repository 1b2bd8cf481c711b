"""Model-block tests against loop oracles, plus structural invariants."""

import numpy as np
import pytest
from oracles import batchnorm_oracle, channel_attention_oracle, conv1d_oracle, nonlocal_attention_oracle

from eegattn.autodiff import Tensor, gradcheck, no_grad
from eegattn.model import (
    ModelConfig,
    channel_attention_forward,
    classify,
    hfe_forward,
    init_params,
    lfe_forward,
    load_model,
    model_forward,
    nta_forward,
    save_model,
)
from eegattn.train import cross_entropy


def _random_params(seed, config):
    """Init then perturb batchnorm/running stats so eval mode is non-trivial."""
    params = init_params(seed, config)
    rng = np.random.default_rng(seed + 1)
    for state in params.bn_states().values():
        state.gamma.data[:] = rng.uniform(0.5, 1.5, state.gamma.shape)
        state.beta.data[:] = rng.standard_normal(state.beta.shape) * 0.2
        state.running_mean = rng.standard_normal(state.running_mean.shape) * 0.1
        state.running_var = rng.uniform(0.5, 1.5, state.running_var.shape)
    return params


class TestLfe:
    def test_zero_input_zero_output(self):
        params = init_params(0, ModelConfig.tiny())
        x = Tensor(np.zeros((2, 14, 128)))
        y = lfe_forward(x, params.lfe, training=False)
        assert np.allclose(y.data, 0.0)

    def test_default_output_shape(self):
        params = init_params(0, ModelConfig.full())
        x = Tensor(np.zeros((3, 14, 128)))
        assert lfe_forward(x, params.lfe).shape == (3, 32, 128)

    def test_wrong_channel_count_rejected(self):
        params = init_params(0, ModelConfig.tiny())
        with pytest.raises(ValueError, match="14"):
            lfe_forward(Tensor(np.zeros((2, 13, 128))), params.lfe)

    def test_matches_conv_then_batchnorm_composition(self):
        cfg = ModelConfig.tiny()
        params = init_params(3, cfg)
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 14, 128))
        y = lfe_forward(Tensor(x), params.lfe, training=True)
        pad = (cfg.lfe_kernel - 1) // 2
        conv = np.stack([conv1d_oracle(x[b], params.lfe.kernel.data, pad=pad)
                         for b in range(2)])
        oracle = batchnorm_oracle(conv, params.lfe.bn.gamma.data,
                                  params.lfe.bn.beta.data, params.lfe.bn.epsilon)
        assert np.max(np.abs(y.data - oracle)) < 1e-10


class TestChannelAttention:
    def test_weights_strictly_in_unit_interval(self):
        params = init_params(5, ModelConfig.tiny())
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal((3, 8, 128)))
        _, w = channel_attention_forward(x, params.ca, return_weights=True)
        assert np.all(w.data > 0) and np.all(w.data < 1)

    def test_zero_input_zero_biases(self):
        cfg = ModelConfig.tiny()
        params = init_params(0, cfg)
        params.ca.b1.data[:] = 0
        params.ca.b2.data[:] = 0
        x = Tensor(np.zeros((2, cfg.lfe_filters, 16)))
        y, w = channel_attention_forward(x, params.ca, return_weights=True)
        assert np.allclose(w.data, 0.5)
        assert np.allclose(y.data, 0.0)

    def test_matches_loop_oracle(self):
        cfg = ModelConfig(lfe_filters=4, growth=8, block_layers=(2, 2, 2, 2))
        params = init_params(7, cfg)
        rng = np.random.default_rng(8)
        x = rng.standard_normal((2, 4, 16))
        y = channel_attention_forward(Tensor(x), params.ca)
        oracle = channel_attention_oracle(x, params.ca.w1.data, params.ca.b1.data,
                                          params.ca.w2.data, params.ca.b2.data)
        assert np.max(np.abs(y.data - oracle)) < 1e-10

    def test_oracle_equivalence_100_random_inputs(self):
        """Acceptance-grade sweep over random shapes and parameter draws."""
        rng = np.random.default_rng(99)
        for trial in range(100):
            cf = int(rng.integers(2, 5)) * 2
            cfg = ModelConfig(lfe_filters=cf, growth=8, block_layers=(1,),
                              ca_hidden=int(rng.integers(4, 64)))
            params = init_params(trial, cfg)
            b = int(rng.integers(1, 3))
            t = int(rng.integers(1, 17))
            x = rng.standard_normal((b, cf, t)) * rng.uniform(0.5, 3.0)
            got = channel_attention_forward(Tensor(x), params.ca).data
            want = channel_attention_oracle(x, params.ca.w1.data, params.ca.b1.data,
                                            params.ca.w2.data, params.ca.b2.data)
            assert np.max(np.abs(got - want)) < 1e-10

    def test_saturated_gate_recovers_input(self):
        params = init_params(9, ModelConfig.tiny())
        params.ca.b2.data[:] = 50.0  # large-bias surrogate for the +inf limit
        rng = np.random.default_rng(10)
        x = rng.standard_normal((2, 8, 32)) + 3.0
        y = channel_attention_forward(Tensor(x), params.ca)
        assert np.max(np.abs(y.data / x - 1.0)) < 1e-3


class TestNonLocalAttention:
    def _attention_matrix(self, x, p):
        """Recompute the softmax attention rows the block uses internally."""
        from eegattn.autodiff import conv1d, maxpool1d, softmax, swapaxes, matmul
        theta = conv1d(x, p.w_theta)
        phi = conv1d(x, p.w_phi)
        if x.shape[2] >= 2:
            phi = maxpool1d(phi, 2, 2)
        return softmax(matmul(swapaxes(theta, 1, 2), phi), axis=2).data

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(11)
        for trial in range(100):
            cfg = ModelConfig(lfe_filters=8, growth=8, block_layers=(1,))
            params = _random_params(trial, cfg)
            t = int(rng.integers(1, 33))
            x = Tensor(rng.standard_normal((2, 8, t)))
            attn = self._attention_matrix(x, params.nta)
            assert np.max(np.abs(attn.sum(axis=2) - 1.0)) < 1e-9

    def test_single_position_closed_form(self):
        """T=1: the only attention weight is 1, so the output is the
        projected g-path value plus the residual."""
        cfg = ModelConfig(lfe_filters=8, growth=8, block_layers=(1,))
        params = _random_params(21, cfg)
        rng = np.random.default_rng(22)
        x = rng.standard_normal((1, 8, 1))
        got = nta_forward(Tensor(x), params.nta, training=False).data
        p = params.nta
        g_val = p.w_g.data[:, :, 0] @ x[0, :, 0]
        projected = p.w_w.data[:, :, 0] @ g_val
        bn = p.bn
        normalized = ((projected - bn.running_mean) / np.sqrt(bn.running_var + bn.epsilon)
                      * bn.gamma.data + bn.beta.data)
        assert np.max(np.abs(got[0, :, 0] - (normalized + x[0, :, 0]))) < 1e-10

    def test_matches_double_loop_oracle(self):
        cfg = ModelConfig(lfe_filters=4, growth=8, block_layers=(1,))
        params = _random_params(31, cfg)
        rng = np.random.default_rng(32)
        x = rng.standard_normal((1, 4, 8))
        got, got_nl = nta_forward(Tensor(x), params.nta, training=False, return_nl=True)
        want, want_nl = nonlocal_attention_oracle(x, params.nta)
        assert np.max(np.abs(got.data - want)) < 1e-10
        assert np.max(np.abs(got_nl.data - want_nl)) < 1e-10

    def test_oracle_equivalence_100_random_inputs(self):
        rng = np.random.default_rng(41)
        for trial in range(100):
            cf = int(rng.integers(1, 5)) * 2
            cfg = ModelConfig(lfe_filters=cf, growth=8, block_layers=(1,))
            params = _random_params(1000 + trial, cfg)
            b = int(rng.integers(1, 3))
            t = int(rng.integers(1, 17))
            x = rng.standard_normal((b, cf, t))
            got = nta_forward(Tensor(x), params.nta, training=False).data
            want, _ = nonlocal_attention_oracle(x, params.nta)
            assert np.max(np.abs(got - want)) < 1e-10, f"trial {trial} (b={b}, t={t})"

    def test_zeroed_projection_is_identity(self):
        cfg = ModelConfig.tiny()
        params = init_params(51, cfg)  # fresh init: beta=0, running stats zeroed
        params.nta.w_w.data[:] = 0.0
        params.nta.bn.running_mean[:] = 0.0
        rng = np.random.default_rng(52)
        x = rng.standard_normal((2, 8, 16))
        y = nta_forward(Tensor(x), params.nta, training=False)
        assert np.array_equal(y.data, x)


class TestBackbone:
    def test_feature_width_is_1024_for_full_config(self):
        assert ModelConfig.full().feature_width() == 1024

    def test_output_width_independent_of_batch(self):
        params = _random_params(61, ModelConfig.full())
        with no_grad():
            for b in (1, 2):
                x = Tensor(np.random.default_rng(b).standard_normal((b, 32, 128)))
                assert hfe_forward(x, params.hfe).shape == (b, 1024)

    def test_dense_connectivity_channel_arithmetic(self):
        cfg = ModelConfig.full()
        params = init_params(0, cfg)
        ch = cfg.stem_channels
        for i, block in enumerate(params.hfe.blocks):
            for ell, layer in enumerate(block):
                assert layer.conv1.shape[1] == ch + ell * cfg.growth
            ch += len(block) * cfg.growth
            if i < len(params.hfe.blocks) - 1:
                assert params.hfe.transitions[i].kernel.shape == (int(ch * 0.5), ch, 1)
                ch = int(ch * 0.5)
        assert ch == 1024

    def test_block_layout_is_121(self):
        params = init_params(0, ModelConfig.full())
        assert [len(b) for b in params.hfe.blocks] == [6, 12, 24, 16]
        assert all(l.conv1.shape[0] == 128 for b in params.hfe.blocks for l in b)

    def test_stem_kernel_gradient_finite_difference(self):
        cfg = ModelConfig.tiny()
        params = init_params(71, cfg)
        rng = np.random.default_rng(72)
        x = Tensor(rng.standard_normal((1, 8, 32)))
        target = Tensor(rng.standard_normal((1, cfg.feature_width())))

        def fn():
            from eegattn.autodiff import mul
            return mul(hfe_forward(x, params.hfe, training=False), target).sum()

        ok, worst = gradcheck(fn, [params.hfe.stem_kernel], h=1e-6, max_per_tensor=24,
                              rng=np.random.default_rng(0))
        assert ok, f"max relative error {worst:.3e}"


class TestClassifier:
    def test_zero_weights_uniform_output(self):
        params = init_params(0, ModelConfig.tiny())
        params.classifier.weight.data[:] = 0
        params.classifier.bias.data[:] = 0
        x = Tensor(np.random.default_rng(0).standard_normal((4, params.config.feature_width())))
        probs = classify(x, params.classifier)
        assert np.allclose(probs.data, 0.2)

    def test_shift_invariance(self):
        params = init_params(81, ModelConfig.tiny())
        x = Tensor(np.random.default_rng(82).standard_normal((3, params.config.feature_width())))
        p1, l1 = classify(x, params.classifier, return_logits=True)
        params.classifier.bias.data += 7.3
        p2 = classify(x, params.classifier)
        assert np.max(np.abs(p1.data - p2.data)) < 1e-9

    def test_argmax_matches_logits(self):
        params = init_params(83, ModelConfig.tiny())
        x = Tensor(np.random.default_rng(84).standard_normal((6, params.config.feature_width())))
        probs, logits = classify(x, params.classifier, return_logits=True)
        assert np.array_equal(probs.data.argmax(axis=1), logits.data.argmax(axis=1))


class TestModelForward:
    def test_probabilities_sum_to_one(self):
        params = _random_params(91, ModelConfig.tiny())
        x = Tensor(np.random.default_rng(92).standard_normal((3, 14, 128)))
        with no_grad():
            cache = model_forward(x, params, training=False)
        assert np.max(np.abs(cache.probabilities.data.sum(axis=1) - 1.0)) < 1e-6

    def test_batch_permutation_equivariance(self):
        params = _random_params(93, ModelConfig.tiny())
        x = np.random.default_rng(94).standard_normal((4, 14, 128))
        perm = np.array([2, 0, 3, 1])
        with no_grad():
            base = model_forward(Tensor(x), params, training=False).probabilities.data
            permuted = model_forward(Tensor(x[perm]), params, training=False).probabilities.data
        assert np.allclose(base[perm], permuted)

    def test_eval_forward_deterministic(self):
        params = _random_params(95, ModelConfig.tiny())
        x = Tensor(np.random.default_rng(96).standard_normal((2, 14, 128)))
        with no_grad():
            a = model_forward(x, params, training=False).probabilities.data
            b = model_forward(x, params, training=False).probabilities.data
        assert np.array_equal(a, b)

    def test_shape_chain(self):
        params = _random_params(97, ModelConfig.tiny())
        x = Tensor(np.random.default_rng(98).standard_normal((2, 14, 128)))
        with no_grad():
            cache = model_forward(x, params, training=False)
        assert cache.x_lfe.shape == (2, 8, 128)
        assert cache.x_ca.shape == (2, 8, 128)
        assert cache.x_nl.shape == (2, 4, 128)
        assert cache.x_nta.shape == (2, 8, 128)
        assert cache.x_hfe.shape == (2, params.config.feature_width())
        assert cache.probabilities.shape == (2, 5)


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_params(123, ModelConfig.tiny())
        b = init_params(123, ModelConfig.tiny())
        for (na, ta), (nb, tb) in zip(a.named_parameters().items(),
                                      b.named_parameters().items()):
            assert na == nb
            assert np.array_equal(ta.data, tb.data)

    def test_different_seeds_differ(self):
        a = init_params(1, ModelConfig.tiny())
        b = init_params(2, ModelConfig.tiny())
        assert not np.array_equal(a.lfe.kernel.data, b.lfe.kernel.data)

    def test_fan_in_scale(self):
        params = init_params(7, ModelConfig.full())
        k = params.hfe.blocks[2][0].conv1.data  # 128 x 1024-ish, plenty of samples
        fan_in = k.shape[1] * k.shape[2]
        expected = (1.0 / np.sqrt(fan_in)) / np.sqrt(3.0)  # std of U(-a, a)
        assert abs(k.std() - expected) / expected < 0.10

    def test_batchnorm_init(self):
        params = init_params(0, ModelConfig.tiny())
        for state in params.bn_states().values():
            assert np.all(state.gamma.data == 1.0)
            assert np.all(state.beta.data == 0.0)
            assert np.all(state.running_var == 1.0)


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        params = _random_params(201, ModelConfig.tiny())
        path = tmp_path / "model.bin"
        save_model(params, path)
        loaded = load_model(path)
        assert loaded.config == params.config
        for name, tensor in params.named_parameters().items():
            assert np.array_equal(loaded.named_parameters()[name].data, tensor.data), name
        for name, buf in params.named_buffers().items():
            assert np.array_equal(loaded.named_buffers()[name], buf), name

    def test_round_trip_preserves_outputs(self, tmp_path):
        params = _random_params(202, ModelConfig.tiny())
        path = tmp_path / "model.bin"
        save_model(params, path)
        loaded = load_model(path)
        x = Tensor(np.random.default_rng(0).standard_normal((2, 14, 128)))
        with no_grad():
            a = model_forward(x, params, training=False).probabilities.data
            b = model_forward(x, loaded, training=False).probabilities.data
        assert np.array_equal(a, b)

    def test_float32_round_trip(self, tmp_path):
        params = _random_params(203, ModelConfig.tiny()).astype(np.float32)
        path = tmp_path / "model32.bin"
        save_model(params, path)
        loaded = load_model(path)
        for name, tensor in params.named_parameters().items():
            got = loaded.named_parameters()[name]
            assert got.data.dtype == np.float32
            assert np.array_equal(got.data, tensor.data)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTAMODEL")
        with pytest.raises(ValueError, match="magic"):
            load_model(path)


def test_copy_is_deep():
    params = _random_params(301, ModelConfig.tiny())
    clone = params.copy()
    clone.lfe.kernel.data[:] = 0
    clone.lfe.bn.running_mean[:] = 99.0
    assert not np.array_equal(params.lfe.kernel.data, clone.lfe.kernel.data)
    assert not np.array_equal(params.lfe.bn.running_mean, clone.lfe.bn.running_mean)


def test_end_to_end_gradcheck_sampled():
    """Sampled finite-difference check over one tensor per block (the full
    sweep over every tensor runs in the acceptance suite)."""
    cfg = ModelConfig.tiny()
    params = init_params(401, cfg)
    rng = np.random.default_rng(402)
    x = Tensor(rng.standard_normal((2, 14, 128)))
    labels = np.array([1, 4])

    def fn():
        cache = model_forward(x, params, training=True)
        return cross_entropy(cache.probabilities, labels)

    picks = [params.lfe.kernel, params.ca.w2, params.nta.w_theta,
             params.hfe.stem_kernel, params.classifier.weight]
    ok, worst = gradcheck(fn, picks, max_per_tensor=6, rng=np.random.default_rng(1))
    assert ok, f"max relative error {worst:.3e}"
