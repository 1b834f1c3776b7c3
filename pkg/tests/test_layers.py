"""ConvLSTM cell, pixel shuffle, and their invariants."""

import numpy as np
import pytest

from surgecast import autodiff as ad
from surgecast.autodiff import Tensor
from surgecast.errors import ConfigError, ShapeError
from surgecast.layers import (
    ConvLSTMParams,
    ConvLSTMState,
    LayerSpec,
    convlstm_gates,
    convlstm_step,
    pixel_shuffle,
    pixel_unshuffle,
)


def zero_params(c_in, c_hidden, k):
    shape = (c_hidden, c_in + c_hidden, k, k)
    return ConvLSTMParams(
        *(Tensor(np.zeros(shape)) for _ in range(4)),
        *(Tensor(np.zeros(c_hidden)) for _ in range(4)),
    )


def random_state(rng, n, c, h, w, scale=1.0):
    return ConvLSTMState(
        Tensor(rng.uniform(-scale, scale, size=(n, c, h, w))),
        Tensor(rng.uniform(-scale, scale, size=(n, c, h, w))),
    )


class TestConvLSTMStep:
    def test_all_zero_parameters_and_state(self):
        params = zero_params(1, 1, 3)
        state = ConvLSTMState.zeros(1, 1, 2, 2)
        out = convlstm_step(Tensor(np.random.default_rng(0).uniform(-1, 1, (1, 1, 2, 2))),
                            state, params)
        gates = convlstm_gates(Tensor(np.zeros((1, 1, 2, 2))), state, params)
        for g in gates:
            assert np.all(g.data == 0.5)
        assert np.all(out.c.data == 0.0)
        assert np.all(out.h.data == 0.0)

    def test_zero_parameters_nonzero_cell(self):
        # forced by the update equations: c' = 0.5 c, h' = 0.5 tanh(0.5 c)
        c0 = 0.8
        params = zero_params(1, 1, 1)
        state = ConvLSTMState(Tensor(np.zeros((1, 1, 1, 1))), Tensor(np.full((1, 1, 1, 1), c0)))
        out = convlstm_step(Tensor(np.zeros((1, 1, 1, 1))), state, params)
        assert np.allclose(out.c.data, 0.5 * c0, atol=1e-15)
        assert np.allclose(out.h.data, 0.5 * np.tanh(0.5 * c0), atol=1e-15)

    def test_scalar_case_matches_plain_lstm(self):
        # 1x1 spatial with 1x1 kernels reduces to the fully-connected cell
        rng = np.random.default_rng(42)
        params = ConvLSTMParams.init(1, 1, 1, rng)
        for w in params.kernels():
            w.data = rng.uniform(-1, 1, size=w.shape)
        for b in params.biases():
            b.data = rng.uniform(-0.5, 0.5, size=b.shape)
        x_v, h_v, c_v = rng.uniform(-1, 1, size=3)

        state = ConvLSTMState(Tensor(np.full((1, 1, 1, 1), h_v)), Tensor(np.full((1, 1, 1, 1), c_v)))
        out = convlstm_step(Tensor(np.full((1, 1, 1, 1), x_v)), state, params)

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        def gate(w, b):
            wx, wh = w.data[0, 0, 0, 0], w.data[0, 1, 0, 0]
            return wx * x_v + wh * h_v + b.data[0]

        i = sig(gate(params.w_i, params.b_i))
        f = sig(gate(params.w_f, params.b_f))
        c_cand = np.tanh(gate(params.w_c, params.b_c))
        o = sig(gate(params.w_o, params.b_o))
        c_new = f * c_v + i * c_cand
        h_new = o * np.tanh(c_new)
        assert abs(out.c.data[0, 0, 0, 0] - c_new) <= 1e-12
        assert abs(out.h.data[0, 0, 0, 0] - h_new) <= 1e-12

    def test_shape_preserved_at_latent_scale(self):
        rng = np.random.default_rng(0)
        params = ConvLSTMParams.init(64, 64, 5, rng)
        state = ConvLSTMState.zeros(2, 64, 15, 5)
        out = convlstm_step(Tensor(rng.uniform(-1, 1, (2, 64, 15, 5))), state, params)
        assert out.h.shape == (2, 64, 15, 5)
        assert out.c.shape == (2, 64, 15, 5)

    def test_channel_mismatch(self):
        params = ConvLSTMParams.init(2, 3, 3, np.random.default_rng(0))
        state = ConvLSTMState.zeros(1, 3, 4, 4)
        with pytest.raises(ShapeError):
            convlstm_step(Tensor(np.zeros((1, 5, 4, 4))), state, params)

    def test_state_shape_mismatch(self):
        params = ConvLSTMParams.init(2, 3, 3, np.random.default_rng(0))
        state = ConvLSTMState.zeros(1, 3, 5, 5)
        with pytest.raises(ShapeError):
            convlstm_step(Tensor(np.zeros((1, 2, 4, 4))), state, params)

    def test_gate_ranges_over_random_draws(self):
        # strict (0,1) gates and (-1,1) hidden values, zero violations
        violations = 0
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            c_in, c_hid = int(rng.integers(1, 3)), int(rng.integers(1, 3))
            h, w = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            params = ConvLSTMParams.init(c_in, c_hid, 3, rng)
            for t in params.kernels():
                t.data = rng.uniform(-2, 2, size=t.shape)
            for t in params.biases():
                t.data = rng.uniform(-1, 1, size=t.shape)
            state = random_state(rng, 1, c_hid, h, w, scale=2.0)
            x = Tensor(rng.uniform(-2, 2, size=(1, c_in, h, w)))
            gates = convlstm_gates(x, state, params)
            new = convlstm_step(x, state, params)
            for g in gates:
                if not np.all((g.data > 0) & (g.data < 1)):
                    violations += 1
            if not np.all((new.h.data > -1) & (new.h.data < 1)):
                violations += 1
        assert violations == 0

    def test_gradients_match_finite_differences(self):
        from surgecast.gradcheck import check_primitives

        results = {r.name: r for r in check_primitives(n_seeds=3)}
        assert results["convlstm_step"].ok


class TestConvLSTMParams:
    def test_mismatched_gate_shapes(self):
        good = np.zeros((2, 4, 3, 3))
        bad = np.zeros((2, 4, 5, 5))
        with pytest.raises(ShapeError):
            ConvLSTMParams(
                Tensor(good), Tensor(bad), Tensor(good), Tensor(good),
                *(Tensor(np.zeros(2)) for _ in range(4)),
            )

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            ConvLSTMParams.init(2, 2, 4, np.random.default_rng(0))

    def test_seeded_init_is_reproducible(self):
        a = ConvLSTMParams.init(2, 3, 5, np.random.default_rng(9))
        b = ConvLSTMParams.init(2, 3, 5, np.random.default_rng(9))
        for ta, tb in zip(a.kernels(), b.kernels()):
            assert np.array_equal(ta.data, tb.data)
        bound = 1.0 / np.sqrt((2 + 3) * 25)
        for t in a.kernels():
            assert np.abs(t.data).max() <= bound


class TestPixelShuffle:
    def test_r1_identity(self):
        x = np.random.default_rng(0).uniform(-1, 1, (2, 3, 4, 5))
        assert np.array_equal(pixel_shuffle(Tensor(x), 1).data, x)
        assert np.array_equal(pixel_unshuffle(Tensor(x), 1).data, x)

    def test_index_formula_by_hand(self):
        x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1))
        out = pixel_shuffle(x, 2)
        assert out.shape == (1, 1, 2, 2)
        assert np.array_equal(out.data[0, 0], [[1.0, 2.0], [3.0, 4.0]])
        back = pixel_unshuffle(out, 2)
        assert np.array_equal(back.data, x.data)

    def test_decoder_scale_shapes(self):
        x = Tensor(np.zeros((100, 64, 15, 5)))
        assert pixel_shuffle(x, 8).shape == (100, 1, 120, 40)

    def test_round_trips_bit_exact(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-3, 3, size=(2, 16, 3, 5))
        assert np.array_equal(pixel_unshuffle(pixel_shuffle(Tensor(x), 4), 4).data, x)
        y = rng.uniform(-3, 3, size=(2, 2, 6, 9))
        assert np.array_equal(pixel_shuffle(pixel_unshuffle(Tensor(y), 3), 3).data, y)

    def test_preserves_values_and_count(self):
        x = np.random.default_rng(2).uniform(-1, 1, (3, 8, 2, 4))
        out = pixel_shuffle(Tensor(x), 2)
        assert out.size == x.size
        assert np.array_equal(np.sort(out.data.reshape(-1)), np.sort(x.reshape(-1)))

    def test_divisibility_errors(self):
        with pytest.raises(ShapeError):
            pixel_shuffle(Tensor(np.zeros((1, 6, 2, 2))), 2)
        with pytest.raises(ShapeError):
            pixel_unshuffle(Tensor(np.zeros((1, 1, 5, 4))), 2)

    def test_gradient_is_inverse_rearrangement(self):
        x = Tensor(np.random.default_rng(3).uniform(-1, 1, (1, 4, 2, 2)), requires_grad=True)
        out = pixel_shuffle(x, 2)
        w = np.random.default_rng(4).uniform(-1, 1, out.shape)
        ad.sum_all(ad.mul(out, Tensor(w))).backward()
        assert np.array_equal(x.grad, pixel_unshuffle(Tensor(w), 2).data)


class TestLayerSpec:
    def test_pixel_shuffle_divisibility_validation(self):
        spec = LayerSpec(kind="pixel_shuffle", upscale=4)
        spec.check_input_channels(16)
        with pytest.raises(ConfigError):
            spec.check_input_channels(8)

    def test_unknown_kind_and_activation(self):
        with pytest.raises(ConfigError):
            LayerSpec(kind="pooling")
        with pytest.raises(ConfigError):
            LayerSpec(kind="dense", activation="gelu")
