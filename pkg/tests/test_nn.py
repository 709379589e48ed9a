import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unseenfall import nn
from unseenfall.errors import ConfigError, InputError

NO_REG = nn.TrainConfig(sparsity_weight=0.0, l2_weight=0.0)


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def hand_model(w1, b1, w2, b2, activation=nn.SIGMOID):
    return nn.AEModel(
        [
            nn.Layer(np.array(w1, float), np.array(b1, float), activation),
            nn.Layer(np.array(w2, float), np.array(b2, float), activation),
        ],
        arch="ae",
    )


def identity_1x1(w=1.0):
    return nn.AEModel([nn.Layer(np.array([[w]]), np.zeros(1), nn.LINEAR)], arch="custom")


class TestInit:
    def test_deterministic(self):
        a = nn.init_model([(768, 31), (31, 768)], seed=7)
        b = nn.init_model([(768, 31), (31, 768)], seed=7)
        assert nn.dumps_model(a) == nn.dumps_model(b)

    def test_shape(self):
        m = nn.init_model([(128, 31), (31, 128)], seed=1)
        assert m.dims == [128, 31, 128]
        assert m.output_dim == m.input_dim == 128

    def test_chain_mismatch(self):
        with pytest.raises(ConfigError):
            nn.init_model([(768, 31), (31, 100)], seed=1)
        with pytest.raises(ConfigError):
            nn.init_model([(10, 4), (5, 10)], seed=1)

    def test_weight_range_and_zero_bias(self):
        m = nn.init_model([(100, 20), (20, 100)], seed=3)
        assert np.abs(m.layers[0].weights).max() <= 1 / math.sqrt(100)
        assert np.abs(m.layers[1].weights).max() <= 1 / math.sqrt(20)
        assert all(not l.bias.any() for l in m.layers)

    def test_sae_must_mirror(self):
        with pytest.raises(ConfigError):
            nn.init_model([(8, 4), (4, 2), (2, 3), (3, 8)], seed=0)

    @pytest.mark.parametrize(
        "n, arch, dims",
        [
            (768, "ae", [768, 31, 768]),
            (768, "sae", [768, 384, 31, 384, 768]),
            (128, "sae", [128, 64, 31, 64, 128]),
        ],
    )
    def test_layer_specs(self, n, arch, dims):
        assert nn.init_model(nn.layer_specs(n, arch), seed=0).dims == dims


class TestForward:
    def test_zero_weights_give_half(self):
        m = hand_model(np.zeros((3, 5)), np.zeros(3), np.zeros((5, 3)), np.zeros(5))
        hidden, y = nn.forward(m, np.arange(5.0))
        assert np.all(hidden[0] == 0.5)
        assert np.all(y == 0.5)

    def test_linear_identity(self):
        _, y = nn.forward(identity_1x1(), [0.3])
        assert y.tolist() == [0.3]

    def test_wrong_length(self):
        m = nn.init_model([(4, 2), (2, 4)], seed=0)
        with pytest.raises(InputError):
            nn.forward(m, np.zeros(5))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 6), st.integers(0, 10_000))
    def test_shape_roundtrip_and_sigmoid_range(self, d, h, seed):
        m = nn.init_model([(d, h), (h, d)], seed=seed)
        x = np.random.default_rng(seed).normal(0, 5, size=d)
        hidden, y = nn.forward(m, x)
        assert y.shape == x.shape
        for a in hidden + [y]:
            assert np.all((a > 0) & (a < 1))


class TestReconstructionError:
    def test_perfect(self):
        assert nn.reconstruction_error(identity_1x1(), [0.7]) == 0.0

    def test_unit(self):
        # zero output: linear layer with zero weights
        m = nn.AEModel([nn.Layer(np.zeros((2, 2)), np.zeros(2), nn.LINEAR)], arch="custom")
        assert nn.reconstruction_error(m, [1.0, 0.0]) == 1.0

    def test_hand_value(self):
        # zero weights, zero bias, sigmoid output -> y = [0.5, 0.5]
        m = hand_model(np.zeros((1, 2)), [0.0], np.zeros((2, 1)), [0.0, 0.0])
        assert nn.reconstruction_error(m, [0.2, 0.4]) == pytest.approx(0.3**2 + 0.1**2, abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            nn.reconstruction_error(identity_1x1(), [1.0, 2.0])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 1000))
    def test_nonnegative(self, d, seed):
        m = nn.init_model([(d, 3), (3, d)], seed=seed)
        X = np.random.default_rng(seed).uniform(-2, 2, size=(5, d))
        assert np.all(nn.reconstruction_errors(m, X) >= 0)


class TestLoss:
    def test_zero_when_perfect_and_unregularized(self):
        assert nn.batch_loss(identity_1x1(), [[0.1], [0.9]], NO_REG) == 0.0

    def test_kl_zero_at_target(self):
        # zero weights -> hidden activation exactly 0.5; choose target 0.5
        m = hand_model(np.zeros((1, 2)), [0.0], np.zeros((2, 1)), [0.0, 0.0])
        cfg = nn.TrainConfig(sparsity_target=0.5, sparsity_weight=3.0, l2_weight=0.0)
        assert nn.batch_loss(m, [[0.5, 0.5]], cfg) == pytest.approx(0.0, abs=1e-15)

    def test_hand_computed_2_1_2(self):
        m = hand_model([[0.5, -0.5]], [0.0], [[1.0], [-1.0]], [0.0, 0.0])
        x = [1.0, 0.0]
        h = sigmoid(0.5)
        y1, y2 = sigmoid(h), sigmoid(-h)
        recon = (1 - y1) ** 2 + (0 - y2) ** 2
        rho = 0.05
        kl = rho * math.log(rho / h) + (1 - rho) * math.log((1 - rho) / (1 - h))
        l2 = 0.25 + 0.25 + 1.0 + 1.0
        cfg = nn.TrainConfig(sparsity_target=rho, sparsity_weight=1.0, l2_weight=0.001)
        assert nn.batch_loss(m, [x], cfg) == pytest.approx(recon + kl + 0.001 * l2, rel=1e-13)
        assert nn.batch_loss(m, [x], NO_REG) == pytest.approx(recon, rel=1e-13)

    def test_empty_batch(self):
        with pytest.raises(InputError):
            nn.batch_loss(identity_1x1(), np.zeros((0, 1)))


class TestGradients:
    def test_matches_finite_differences_6_3_6(self):
        m = nn.init_model([(6, 3), (3, 6)], seed=2)
        X = np.random.default_rng(2).uniform(0, 1, size=(5, 6))
        assert nn.gradient_check(m, X, eps=1e-5) < 1e-5

    def test_sae_stack(self):
        m = nn.init_model([(8, 4), (4, 2), (2, 4), (4, 8)], seed=4)
        X = np.random.default_rng(4).uniform(0, 1, size=(6, 8))
        assert nn.gradient_check(m, X) < 1e-5

    def test_zero_signal(self):
        grads = nn.backprop_gradients(identity_1x1(), [[0.4], [0.2]], NO_REG)
        assert all(not dW.any() and not db.any() for dW, db in grads)

    def test_duplicated_batch(self):
        m = nn.init_model([(4, 2), (2, 4)], seed=9)
        x = np.random.default_rng(9).uniform(size=4)
        one = nn.backprop_gradients(m, [x])
        two = nn.backprop_gradients(m, [x, x])
        for (a, b), (c, d) in zip(one, two):
            np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-15)
            np.testing.assert_allclose(b, d, rtol=1e-12, atol=1e-15)

    def test_check_4_2_4(self):
        m = nn.init_model([(4, 2), (2, 4)], seed=21)
        X = np.random.default_rng(21).uniform(size=(3, 4))
        assert nn.gradient_check(m, X) < 1e-5

    def test_check_linear_identity(self):
        assert nn.gradient_check(identity_1x1(1.7), [[0.3], [0.8]]) < 1e-9

    def test_check_rejects_zero_eps(self):
        with pytest.raises(InputError):
            nn.gradient_check(identity_1x1(), [[0.3]], eps=0)

    def test_check_catches_wrong_sign(self):
        m = nn.init_model([(4, 2), (2, 4)], seed=1)
        X = np.random.default_rng(1).uniform(size=(3, 4))

        def flipped(model, batch, cfg):
            return [(-dW, -db) for dW, db in nn.backprop_gradients(model, batch, cfg)]

        assert nn.gradient_check(m, X, gradient_fn=flipped) > 0.5


class TestTrain:
    def test_deterministic(self):
        m = nn.init_model([(10, 4), (4, 10)], seed=0)
        X = np.random.default_rng(0).uniform(size=(50, 10))
        cfg = nn.TrainConfig(seed=5)
        assert nn.dumps_model(nn.train(m, X, cfg)) == nn.dumps_model(nn.train(m, X, cfg))

    def test_does_not_mutate_input(self):
        m = nn.init_model([(10, 4), (4, 10)], seed=0)
        before = nn.dumps_model(m)
        nn.train(m, np.random.default_rng(0).uniform(size=(20, 10)))
        assert nn.dumps_model(m) == before

    def test_zero_epochs_rejected(self):
        with pytest.raises(ConfigError):
            nn.TrainConfig(epochs=0)

    def test_reduces_error_on_constant_data(self):
        x = np.random.default_rng(1).uniform(0.2, 0.8, size=20)
        X = np.tile(x, (200, 1))
        m = nn.init_model([(20, 5), (5, 20)], seed=1)
        trained = nn.train(m, X, nn.TrainConfig(epochs=10))
        assert nn.reconstruction_errors(trained, X).mean() < nn.reconstruction_errors(m, X).mean()

    def test_loss_strictly_decreases_without_regularizers(self):
        X = np.tile(np.linspace(0.1, 0.9, 12), (64, 1))
        m = nn.init_model([(12, 4), (4, 12)], seed=3)
        losses = [nn.batch_loss(m, X, NO_REG)]
        nn.train(m, X, NO_REG.replace(epochs=10), callback=lambda e, mm: losses.append(nn.batch_loss(mm, X, NO_REG)))
        assert losses[-1] < losses[0]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            nn.train(nn.init_model([(3, 2), (2, 3)]), np.zeros((4, 5)))


class TestSerialization:
    def test_roundtrip_bit_exact(self, tmp_path):
        m = nn.train(nn.init_model([(9, 3), (3, 9)], seed=4), np.random.default_rng(4).uniform(size=(30, 9)))
        path = tmp_path / "m.json"
        nn.save_model(m, path)
        back = nn.load_model(path)
        for a, b in zip(m.layers, back.layers):
            assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
        assert back.train_config == m.train_config
        assert nn.dumps_model(back) == nn.dumps_model(m)

    def test_self_describing(self):
        import json

        d = json.loads(nn.dumps_model(nn.init_model(nn.layer_specs(128, "sae"), seed=0)))
        assert d["format_version"] == nn.FORMAT_VERSION
        assert d["arch"] == "sae"
        assert [(l["in_dim"], l["out_dim"]) for l in d["layers"]] == [(128, 64), (64, 31), (31, 64), (64, 128)]

    def test_version_check(self):
        d = nn.model_to_dict(identity_1x1())
        d["format_version"] = 99
        with pytest.raises(ConfigError):
            nn.model_from_dict(d)
