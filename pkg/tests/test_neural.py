import math

import numpy as np
import pytest

from amprul.errors import ShapeMismatch
from amprul.neural import (
    ACTIVATIONS,
    AdamState,
    AutoencoderParams,
    DenseParams,
    LstmParams,
    adam_init,
    adam_step,
    autoencoder_backward,
    autoencoder_forward,
    autoencoder_init,
    check_finite,
    dense_backward,
    dense_forward,
    dense_init,
    encode,
    grad_check,
    lstm_backward,
    lstm_forward,
    lstm_init,
    mse_grad,
    mse_loss,
    sigmoid,
)


def dense_loss_fn(x, target, activation):
    def loss(d):
        return mse_loss(dense_forward(DenseParams(d["w"], d["b"], activation), x), target)
    return loss


def lstm_loss_fn(seq, target):
    def loss(d):
        proto = lstm_init(np.random.default_rng(0), seq.shape[-1], target.shape[-1])
        fwd = lstm_forward(proto.with_arrays(d), seq)
        return mse_loss(fwd.hidden_seq, target)
    return loss


class TestDense:
    def test_identity(self):
        p = DenseParams(np.eye(3), np.zeros(3), "linear")
        x = np.array([[1.0, -2.0, 0.5]])
        assert np.array_equal(dense_forward(p, x), x)

    def test_zero_input_gives_activated_bias(self):
        b = np.array([0.3, -1.2])
        p = DenseParams(np.zeros((4, 2)), b, "tanh")
        y = dense_forward(p, np.zeros((1, 4)))
        assert np.allclose(y, np.tanh(b), atol=1e-15)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(11)
        for activation in ("linear", "tanh", "sigmoid", "relu"):
            p = dense_init(rng, 4, 3, activation)
            p.b[:] = rng.normal(0, 0.1, 3)
            x = rng.normal(0, 1, (5, 4))
            target = rng.normal(0, 1, (5, 3))
            y = dense_forward(p, x)
            grads, _ = dense_backward(p, x, mse_grad(y, target))
            err = grad_check(dense_loss_fn(x, target, activation), p.arrays(), grads)
            assert err < 1e-6, f"{activation}: {err}"

    def test_input_gradient(self):
        rng = np.random.default_rng(12)
        p = dense_init(rng, 3, 2, "tanh")
        x = rng.normal(0, 1, (4, 3))
        target = rng.normal(0, 1, (4, 2))
        _, dx = dense_backward(p, x, mse_grad(dense_forward(p, x), target))
        eps = 1e-6
        for k in range(x.size):
            xp, xm = x.copy(), x.copy()
            xp.reshape(-1)[k] += eps
            xm.reshape(-1)[k] -= eps
            fd = (mse_loss(dense_forward(p, xp), target)
                  - mse_loss(dense_forward(p, xm), target)) / (2 * eps)
            assert abs(fd - dx.reshape(-1)[k]) < 1e-7

    def test_shape_mismatch(self):
        p = DenseParams(np.zeros((3, 2)), np.zeros(2))
        with pytest.raises(ShapeMismatch):
            dense_forward(p, np.zeros((1, 4)))


class TestLstmForward:
    def test_zero_params_fixed_point(self):
        zeros = {k: np.zeros_like(v)
                 for k, v in lstm_init(np.random.default_rng(0), 3, 4).arrays().items()}
        p = lstm_init(np.random.default_rng(0), 3, 4).with_arrays(zeros)
        fwd = lstm_forward(p, np.random.default_rng(1).normal(0, 1, (6, 3)))
        assert np.all(fwd.hidden_seq == 0.0)
        assert np.all(fwd.final_c == 0.0)

    def test_single_step_hand_computed(self):
        p = LstmParams(
            w_i=np.array([[0.3]]), w_f=np.array([[-0.4]]),
            w_o=np.array([[0.6]]), w_g=np.array([[0.8]]),
            u_i=np.array([[0.2]]), u_f=np.array([[0.1]]),
            u_o=np.array([[-0.3]]), u_g=np.array([[0.5]]),
            b_i=np.array([0.1]), b_f=np.array([0.2]),
            b_o=np.array([-0.1]), b_g=np.array([0.05]),
        )
        x = 0.5
        fwd = lstm_forward(p, np.array([[x]]))

        def sig(a):
            return 1.0 / (1.0 + math.exp(-a))

        i = sig(0.3 * x + 0.1)
        f = sig(-0.4 * x + 0.2)
        o = sig(0.6 * x - 0.1)
        g = math.tanh(0.8 * x + 0.05)
        c = f * 0.0 + i * g
        h = o * math.tanh(c)
        assert abs(fwd.final_h[0] - h) < 1e-12
        assert abs(fwd.final_c[0] - c) < 1e-12

    def test_length_one_equals_single_step(self):
        rng = np.random.default_rng(5)
        p = lstm_init(rng, 3, 2)
        x = rng.normal(0, 1, (1, 3))
        a = lstm_forward(p, x)
        h0 = np.zeros(2)
        b = lstm_forward(p, x, h0=h0, c0=h0)
        assert np.array_equal(a.final_h, b.final_h)
        assert np.array_equal(a.hidden_seq[0], a.final_h)

    def test_hidden_bounded(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            p = lstm_init(rng, 4, 8)
            seq = rng.normal(0, 3, (20, 4))
            fwd = lstm_forward(p, seq)
            assert np.all(np.abs(fwd.hidden_seq) <= 1.0)

    def test_repeat_bit_identical(self):
        rng = np.random.default_rng(7)
        p = lstm_init(rng, 3, 5)
        seq = rng.normal(0, 1, (2, 10, 3))
        a = lstm_forward(p, seq)
        b = lstm_forward(p, seq)
        assert np.array_equal(a.hidden_seq, b.hidden_seq)

    def test_batched_matches_per_sequence(self):
        rng = np.random.default_rng(8)
        p = lstm_init(rng, 3, 4)
        seqs = rng.normal(0, 1, (3, 7, 3))
        batch = lstm_forward(p, seqs)
        for k in range(3):
            single = lstm_forward(p, seqs[k])
            assert np.allclose(batch.hidden_seq[k], single.hidden_seq, atol=1e-12)

    def test_shape_errors(self):
        p = lstm_init(np.random.default_rng(0), 3, 4)
        with pytest.raises(ShapeMismatch):
            lstm_forward(p, np.zeros((5, 2)))
        with pytest.raises(ShapeMismatch):
            lstm_forward(p, np.zeros((0, 3)).reshape(1, 0, 3))


class TestLstmBackward:
    def test_zero_upstream_zero_grads(self):
        rng = np.random.default_rng(9)
        p = lstm_init(rng, 3, 2)
        seq = rng.normal(0, 1, (5, 3))
        fwd = lstm_forward(p, seq)
        grads, dx = lstm_backward(p, seq, fwd, np.zeros_like(fwd.hidden_seq))
        assert all(np.all(g == 0.0) for g in grads.values())
        assert np.all(dx == 0.0)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(10)
        p = lstm_init(rng, 3, 2)
        seq = rng.normal(0, 1, (5, 3))
        target = rng.normal(0, 1, (5, 2))
        fwd = lstm_forward(p, seq)
        grads, _ = lstm_backward(p, seq, fwd, mse_grad(fwd.hidden_seq, target))
        err = grad_check(lstm_loss_fn(seq, target), p.arrays(), grads)
        assert err < 1e-6

    def test_input_gradients_match_finite_differences(self):
        rng = np.random.default_rng(13)
        p = lstm_init(rng, 2, 3)
        seq = rng.normal(0, 1, (4, 2))
        target = rng.normal(0, 1, (4, 3))
        fwd = lstm_forward(p, seq)
        _, dx = lstm_backward(p, seq, fwd, mse_grad(fwd.hidden_seq, target))
        eps = 1e-6
        for k in range(seq.size):
            sp, sm = seq.copy(), seq.copy()
            sp.reshape(-1)[k] += eps
            sm.reshape(-1)[k] -= eps
            fd = (mse_loss(lstm_forward(p, sp).hidden_seq, target)
                  - mse_loss(lstm_forward(p, sm).hidden_seq, target)) / (2 * eps)
            assert abs(fd - dx.reshape(-1)[k]) < 1e-7

    def test_upstream_linearity(self):
        rng = np.random.default_rng(14)
        p = lstm_init(rng, 3, 4)
        seq = rng.normal(0, 1, (6, 3))
        fwd = lstm_forward(p, seq)
        up = rng.normal(0, 1, fwd.hidden_seq.shape)
        g1, dx1 = lstm_backward(p, seq, fwd, up)
        g2, dx2 = lstm_backward(p, seq, fwd, 2.0 * up)
        for k in g1:
            assert np.array_equal(2.0 * g1[k], g2[k])
        assert np.array_equal(2.0 * dx1, dx2)

    def test_final_h_only_upstream(self):
        # the pipeline's use: loss depends on the last hidden state only
        rng = np.random.default_rng(15)
        p = lstm_init(rng, 2, 2)
        seq = rng.normal(0, 1, (6, 2))
        target = rng.normal(0, 1, (2,))
        fwd = lstm_forward(p, seq)
        up = np.zeros_like(fwd.hidden_seq)
        up[-1] = mse_grad(fwd.final_h, target)
        grads, _ = lstm_backward(p, seq, fwd, up)

        def loss(d):
            proto = lstm_init(np.random.default_rng(0), 2, 2)
            return mse_loss(lstm_forward(proto.with_arrays(d), seq).final_h, target)

        assert grad_check(loss, p.arrays(), grads) < 1e-6


class TestAutoencoder:
    def test_identity_linear(self):
        p = autoencoder_init(np.random.default_rng(0), [3, 3], activation="linear")
        arrays = p.arrays()
        arrays["enc0.w"] = np.eye(3)
        arrays["enc0.b"] = np.zeros(3)
        arrays["dec0.w"] = np.eye(3)
        arrays["dec0.b"] = np.zeros(3)
        p = p.with_arrays(arrays)
        x = np.random.default_rng(1).normal(0, 1, (4, 3))
        fwd = autoencoder_forward(p, x)
        assert np.allclose(fwd.reconstruction, x, atol=1e-15)
        assert mse_loss(fwd.reconstruction, x) < 1e-28

    def test_decoder_mirrors_encoder(self):
        p = autoencoder_init(np.random.default_rng(2), [6, 4, 2])
        enc_shapes = [layer.w.shape for layer in p.encoder]
        dec_shapes = [layer.w.shape for layer in p.decoder]
        assert enc_shapes == [(6, 4), (4, 2)]
        assert dec_shapes == [(2, 4), (4, 6)]
        assert p.decoder[-1].activation == "linear"
        assert p.encoder[0].activation == "tanh"

    def test_loss_of_perfect_reconstruction_is_zero(self):
        x = np.random.default_rng(3).normal(0, 1, (5, 4))
        assert mse_loss(x, x) == 0.0

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(4)
        p = autoencoder_init(rng, [5, 3, 2])
        x = rng.normal(0, 1, (6, 5))
        grads = autoencoder_backward(p, x, autoencoder_forward(p, x))

        def loss(d):
            return mse_loss(autoencoder_forward(p.with_arrays(d), x).reconstruction, x)

        assert grad_check(loss, p.arrays(), grads) < 1e-6

    def test_encode_matches_forward_latent(self):
        rng = np.random.default_rng(5)
        p = autoencoder_init(rng, [4, 2])
        x = rng.normal(0, 1, (3, 4))
        assert np.array_equal(encode(p, x), autoencoder_forward(p, x).latent)


class TestAdam:
    def test_zero_gradient_no_move(self):
        params = {"w": np.array([1.0, -2.0])}
        state = adam_init(params, lr=0.1)
        new_p, new_s = adam_step(state, params, {"w": np.zeros(2)})
        assert np.array_equal(new_p["w"], params["w"])
        assert new_s.step == 1

    def test_first_step_magnitude_is_lr(self):
        params = {"w": np.array([5.0, -3.0, 0.2])}
        g = np.array([0.7, -2.0, 0.01])
        state = adam_init(params, lr=0.05)
        new_p, _ = adam_step(state, params, {"w": g})
        move = params["w"] - new_p["w"]
        assert np.allclose(np.abs(move), 0.05, rtol=1e-6)
        assert np.all(np.sign(move) == np.sign(g))

    def test_purity(self):
        rng = np.random.default_rng(6)
        params = {"a": rng.normal(0, 1, (3, 2)), "b": rng.normal(0, 1, 4)}
        grads = {"a": rng.normal(0, 1, (3, 2)), "b": rng.normal(0, 1, 4)}
        state = adam_init(params)
        p1, s1 = adam_step(state, params, grads)
        p2, s2 = adam_step(state, params, grads)
        for k in params:
            assert np.array_equal(p1[k], p2[k])
            assert np.array_equal(s1.m[k], s2.m[k])
        assert state.step == 0  # original untouched

    def test_shape_mismatch(self):
        params = {"w": np.zeros(3)}
        state = adam_init(params)
        with pytest.raises(ShapeMismatch):
            adam_step(state, params, {"w": np.zeros(4)})
        with pytest.raises(ShapeMismatch):
            adam_step(state, params, {"v": np.zeros(3)})

    def test_descends_quadratic(self):
        params = {"w": np.array([4.0, -3.0])}
        state = adam_init(params, lr=0.1)
        for _ in range(400):
            grads = {"w": 2.0 * params["w"]}
            params, state = adam_step(state, params, grads)
        assert np.all(np.abs(params["w"]) < 1e-2)


class TestGradCheck:
    def test_fresh_models_pass_across_seeds(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            p = lstm_init(rng, 3, 2)
            seq = rng.normal(0, 1, (5, 3))
            target = rng.normal(0, 1, (5, 2))
            fwd = lstm_forward(p, seq)
            grads, _ = lstm_backward(p, seq, fwd, mse_grad(fwd.hidden_seq, target))
            assert grad_check(lstm_loss_fn(seq, target), p.arrays(), grads) < 1e-4

    def test_corrupted_backward_detected(self):
        rng = np.random.default_rng(21)
        p = lstm_init(rng, 3, 2)
        seq = rng.normal(0, 1, (5, 3))
        target = rng.normal(0, 1, (5, 2))
        fwd = lstm_forward(p, seq)
        grads, _ = lstm_backward(p, seq, fwd, mse_grad(fwd.hidden_seq, target))
        grads["w_f"] = -grads["w_f"]  # sign flip on one block
        assert grad_check(lstm_loss_fn(seq, target), p.arrays(), grads) > 0.1

    def test_empty_params(self):
        assert grad_check(lambda d: 0.0, {}, {}) == 0.0

    def test_subsample_above_limit(self):
        rng = np.random.default_rng(22)
        p = lstm_init(rng, 30, 48)  # ~15k coordinates
        n_coords = sum(a.size for a in p.arrays().values())
        assert n_coords > 10_000
        seq = rng.normal(0, 1, (3, 30))
        target = rng.normal(0, 1, (3, 48))
        fwd = lstm_forward(p, seq)
        grads, _ = lstm_backward(p, seq, fwd, mse_grad(fwd.hidden_seq, target))

        def loss(d):
            return mse_loss(lstm_forward(p.with_arrays(d), seq).hidden_seq, target)

        assert grad_check(loss, p.arrays(), grads, max_coords=500) < 1e-4


class TestPlumbing:
    def test_init_reproducible_from_seed(self):
        a = lstm_init(np.random.default_rng(42), 3, 4)
        b = lstm_init(np.random.default_rng(42), 3, 4)
        for k, v in a.arrays().items():
            assert np.array_equal(v, b.arrays()[k])

    def test_forget_bias_starts_at_one(self):
        p = lstm_init(np.random.default_rng(0), 3, 4)
        assert np.all(p.b_f == 1.0)
        assert np.all(p.b_i == 0.0)

    def test_float32_mode(self):
        p = lstm_init(np.random.default_rng(0), 3, 4, dtype=np.float32)
        seq = np.random.default_rng(1).normal(0, 1, (5, 3)).astype(np.float32)
        fwd = lstm_forward(p, seq)
        assert fwd.hidden_seq.dtype == np.float32

    def test_check_finite(self):
        check_finite(np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            check_finite(np.array([1.0, np.nan]))

    def test_sigmoid_stable_at_extremes(self):
        x = np.array([-1000.0, -20.0, 0.0, 20.0, 1000.0])
        y = sigmoid(x)
        assert np.all(np.isfinite(y))
        assert y[0] == 0.0 and y[-1] == 1.0
        assert y[2] == 0.5

    def test_activation_registry(self):
        x = np.linspace(-2, 2, 9)
        for name, (f, df) in ACTIVATIONS.items():
            y = f(x)
            assert y.shape == x.shape
            assert df(y).shape == x.shape
