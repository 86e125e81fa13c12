import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diabnet.errors import BatchSizeError, ConfigError, ShapeError
from diabnet.model import (
    BN_EPSILON,
    Activation,
    BatchNorm,
    Dense,
    Model,
    ModelConfig,
    build,
    gradient_check,
    softmax_regression,
)
from diabnet.numerics import Rng


def _random_batch(seed, n=8, d=8):
    rng = Rng(seed)
    x = rng.uniform_range(-2, 2, (n, d))
    y = (rng.uniform(n) < 0.5).astype(np.int64)
    y[0], y[1] = 0, 1
    return x, y


def _two_by_two(weight, bias=(0.0, 0.0)):
    m = Model([Dense(2, 2), Activation("softmax")])
    m.layers[0].weight[...] = weight
    m.layers[0].bias[...] = bias
    return m


class TestBuild:
    def test_default_shapes(self):
        m = build(ModelConfig(8, (64, 32, 16), "sigmoid", seed=42))
        assert [l.weight.shape for l in m.dense_layers()] == [(8, 64), (64, 32), (32, 16), (16, 2)]
        kinds = [l.kind for l in m.layers]
        assert kinds == ["dense", "batch_norm", "activation"] * 3 + ["dense", "activation"]
        assert m.layers[-1].fn == "softmax"

    def test_initial_values(self):
        m = build(ModelConfig(8, (16, 8, 4), seed=1))
        for layer in m.dense_layers():
            bound = math.sqrt(6.0 / (layer.in_dim + layer.out_dim))
            assert np.all(np.abs(layer.weight) <= bound)
        assert np.all(m.dense_layers()[-1].bias == 0)
        for bn in m.batch_norms():
            assert np.all(bn.gamma == 1) and np.all(bn.beta == 0)
            assert np.all(bn.running_mean == 0) and np.all(bn.running_var == 1)

    def test_fresh_bn_is_affine_in_inference(self):
        m = build(ModelConfig(3, (4,), seed=2))
        x = Rng(0).uniform_range(-1, 1, (5, 3))
        z = x @ m.layers[0].weight
        bn = m.layers[1]
        expected = bn.gamma * (z / math.sqrt(1.0 + BN_EPSILON)) + bn.beta
        # feed BN output through the rest by hand
        h = 0.5 * (1 + np.tanh(0.5 * expected))
        logits = h @ m.layers[3].weight + m.layers[3].bias
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(m.forward(x, "infer")[0], p, atol=1e-14)

    def test_deterministic(self):
        a = build(ModelConfig(8, (64, 32, 16), seed=42))
        b = build(ModelConfig(8, (64, 32, 16), seed=42))
        assert np.array_equal(a.params, b.params)
        assert not np.array_equal(a.params, build(ModelConfig(8, (64, 32, 16), seed=43)).params)

    def test_zero_size_layer(self):
        with pytest.raises(ConfigError):
            build(ModelConfig(8, (16, 0, 4)))
        with pytest.raises(ConfigError):
            ModelConfig(0)

    def test_chain_mismatch(self):
        with pytest.raises(ConfigError):
            Model([Dense(2, 3), Dense(4, 2), Activation("softmax")])


class TestForward:
    def test_probabilities(self):
        m = build(ModelConfig(8, (16, 8, 4), seed=3))
        x = Rng(1).uniform_range(-3, 3, (20, 8))
        for mode in ("train", "infer"):
            p, _ = m.forward(x, mode)
            assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)
            assert np.all((p > 0) & (p < 1))

    def test_hand_softmax(self):
        m = _two_by_two(np.eye(2))
        p, _ = m.forward(np.array([[1.0, 0.0]]), "infer")
        e = math.e
        np.testing.assert_allclose(p[0], [e / (e + 1), 1 / (e + 1)], rtol=1e-15)

    @pytest.mark.parametrize("n", [2, 3, 16, 32])
    def test_train_bn_normalizes(self, n):
        m = build(ModelConfig(8, (16, 8, 4), seed=4))
        x = Rng(n).uniform_range(-5, 5, (n, 8))
        _, cache = m.forward(x, "train")
        for li, layer in enumerate(m.layers):
            if isinstance(layer, BatchNorm):
                xhat, inv_std = cache.extras[li]
                assert np.all(np.abs(xhat.mean(axis=0)) < 1e-9)
                # eps in the denominator shrinks the variance to s2 / (s2 + eps)
                s2 = 1.0 / inv_std**2 - layer.epsilon
                np.testing.assert_allclose(xhat.var(axis=0), s2 / (s2 + layer.epsilon), rtol=0, atol=1e-12)

    def test_single_row_train_rejected(self):
        m = build(ModelConfig(2, (3,)))
        with pytest.raises(BatchSizeError):
            m.forward(np.zeros((1, 2)), "train")

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            build(ModelConfig(3, (4,))).forward(np.zeros((2, 5)))

    def test_running_stats_update(self):
        m = build(ModelConfig(2, (3,), seed=5))
        x = Rng(5).uniform_range(-1, 1, (6, 2))
        z = x @ m.layers[0].weight
        m.forward(x, "train")
        bn = m.layers[1]
        np.testing.assert_allclose(bn.running_mean, 0.1 * z.mean(axis=0), atol=1e-15)
        np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * z.var(axis=0), atol=1e-15)

    def test_running_stats_converge(self):
        m = build(ModelConfig(4, (5, 3), seed=6))
        x = Rng(6).uniform_range(-1, 1, (10, 4))
        for _ in range(300):
            m.forward(x, "train")
        z = x @ m.layers[0].weight
        np.testing.assert_allclose(m.layers[1].running_mean, z.mean(axis=0), atol=1e-6)

    def test_inference_pure_and_batch_independent(self):
        m = build(ModelConfig(8, (64, 32, 16), seed=7))
        x = Rng(7).uniform_range(-2, 2, (40, 8))
        m.forward(x, "train")
        p1, _ = m.forward(x, "infer")
        p2, _ = m.forward(x, "infer")
        assert np.array_equal(p1, p2)
        rows = np.vstack([m.forward(x[i:i + 1], "infer")[0] for i in range(40)])
        assert np.array_equal(rows, p1)
        assert np.array_equal(m.forward(x[10:25], "infer")[0], p1[10:25])


class TestBackward:
    def test_finite_differences_every_parameter(self):
        m = build(ModelConfig(8, (16, 8, 4), seed=11))
        x, y = _random_batch(11)
        assert gradient_check(m, x, y, 1e-5) < 1e-4

    def test_relu_finite_differences(self):
        m = build(ModelConfig(5, (6, 4), activation="relu", seed=12))
        x, y = _random_batch(12, 8, 5)
        assert gradient_check(m, x, y, 1e-6) < 1e-4

    def test_perfect_predictions_zero_gradient(self):
        m = build(ModelConfig(4, (6, 5), seed=13))
        x, _ = _random_batch(13, 10, 4)
        m.dense_layers()[-1].weight[...] *= 1e4
        p, cache = m.forward(x, "train")
        y = (p[:, 1] > p[:, 0]).astype(int)
        g = m.backward(cache, y)
        for name, v in m.named(g).items():
            assert np.linalg.norm(v) < 1e-6, name

    def test_duplicated_rows(self):
        m = build(ModelConfig(8, (16, 8, 4), seed=14))
        x, y = _random_batch(14)
        _, c1 = m.copy().forward(x, "train")
        _, c2 = m.copy().forward(np.vstack([x, x]), "train")
        g1 = m.backward(c1, y)
        g2 = m.backward(c2, np.concatenate([y, y]))
        np.testing.assert_allclose(g1, g2, atol=1e-10, rtol=0)

    def test_label_mismatch(self):
        m = build(ModelConfig(2, (3,)))
        _, cache = m.forward(np.array([[0.0, 1.0], [1.0, 0.0]]), "train")
        with pytest.raises(ShapeError):
            m.backward(cache, [0, 1, 1])

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**32), st.integers(4, 12))
    def test_gradient_check_property(self, seed, n):
        m = build(ModelConfig(3, (4, 3), seed=seed))
        x, y = _random_batch(seed, n, 3)
        assert gradient_check(m, x, y, 1e-5) < 1e-4


class TestGradientCheck:
    def test_softmax_regression_near_exact(self):
        x, y = _random_batch(21)
        assert gradient_check(softmax_regression(8, Rng(21)), x, y, 1e-5) < 1e-7

    def test_full_network(self):
        x, y = _random_batch(22)
        assert gradient_check(build(ModelConfig(8, (64, 32, 16), seed=22)), x, y, 1e-5) < 1e-4

    def test_coarse_step_is_worse(self):
        m = build(ModelConfig(8, (16, 8, 4), seed=23))
        x, y = _random_batch(23)
        assert gradient_check(m, x, y, 1e-2) > gradient_check(m, x, y, 1e-5)

    def test_leaves_model_untouched(self):
        m = build(ModelConfig(4, (3,), seed=24))
        before = m.params.copy()
        gradient_check(m, *_random_batch(24, 6, 4))
        assert np.array_equal(m.params, before)
        assert np.all(m.layers[1].running_mean == 0)


class TestPredict:
    def test_argmax(self):
        m = _two_by_two(np.array([[math.log(0.7), math.log(0.3)], [0.0, 0.0]]))
        classes, probs = m.predict(np.array([[1.0, 0.0]]))
        np.testing.assert_allclose(probs[0], [0.7, 0.3], rtol=1e-12)
        assert classes.tolist() == [0]

    def test_tie_goes_to_zero(self):
        m = _two_by_two(np.zeros((2, 2)))
        classes, probs = m.predict(np.array([[1.0, 2.0]]))
        assert probs[0].tolist() == [0.5, 0.5] and classes.tolist() == [0]

    def test_batch_equals_rows(self):
        m = build(ModelConfig(8, (16, 8, 4), seed=31))
        x = Rng(31).uniform_range(-2, 2, (25, 8))
        c, p = m.predict(x)
        for i in range(25):
            ci, pi = m.predict(x[i:i + 1])
            assert ci[0] == c[i] and np.array_equal(pi[0], p[i])


class TestSerialization:
    def test_round_trip_bitwise(self, tmp_path):
        m = build(ModelConfig(8, (64, 32, 16), seed=41))
        for s in range(3):
            m.forward(Rng(s).uniform_range(-2, 2, (16, 8)), "train")
        path = tmp_path / "model.json"
        m.save(path)
        loaded = Model.load(path)
        x = Rng(99).uniform_range(-3, 3, (100, 8))
        assert np.array_equal(loaded.predict(x)[1], m.predict(x)[1])
        assert np.array_equal(loaded.params, m.params)

    def test_document_fields(self):
        import json

        doc = json.loads(build(ModelConfig(2, (3,), seed=1)).to_json())
        assert doc["format_version"] == 1
        assert doc["rng_algorithm"] == "philox4x64-10"
        assert [l["kind"] for l in doc["layers"]] == ["dense", "batch_norm", "activation", "dense", "activation"]
        assert "running_var" in doc["layers"][1]

    def test_floats_written_with_17_digits(self):
        text = build(ModelConfig(2, (3,), seed=1)).to_json()
        import re

        numbers = re.findall(r"-?\d\.\d{16}e[-+]\d+|-?0\.\d+", text)
        assert numbers

    def test_rejects_unknown_version(self):
        import json

        doc = json.loads(build(ModelConfig(2, (3,))).to_json())
        doc["format_version"] = 99
        with pytest.raises(ConfigError):
            Model.from_dict(doc)
