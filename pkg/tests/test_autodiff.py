"""Tensor engine: forward values, gradient rules, and the conv reference."""

import numpy as np
import pytest

from surgecast import autodiff as ad
from surgecast.autodiff import Tensor
from surgecast.errors import ContractError, ShapeError


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_tanh_and_relu_definitions(self):
        assert ad.tanh(Tensor([0.0])).data[0] == 0.0
        assert ad.relu(Tensor([-3.0])).data[0] == 0.0

    def test_hadamard_by_hand(self):
        out = ad.mul(Tensor([1.0, 2.0, 3.0]), Tensor([4.0, 5.0, 6.0]))
        assert np.array_equal(out.data, [4.0, 10.0, 18.0])

    def test_sigmoid_tanh_ranges(self):
        # +-15 keeps the open intervals resolvable in float64
        x = Tensor(np.random.default_rng(0).uniform(-15, 15, size=100))
        s = ad.sigmoid(x).data
        t = ad.tanh(x).data
        assert np.all((s > 0) & (s < 1))
        assert np.all((t > -1) & (t < 1))
        assert np.all(ad.relu(x).data >= 0)

    def test_binary_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError) as err:
            ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
        assert "(2, 3)" in str(err.value) and "(3, 2)" in str(err.value)

    def test_elementwise_dispatcher(self):
        a = Tensor([1.0, -1.0])
        assert np.array_equal(ad.elementwise("relu", a).data, [1.0, 0.0])
        assert np.array_equal(
            ad.elementwise("add", a, Tensor([1.0, 1.0])).data, [2.0, 0.0]
        )
        assert np.array_equal(ad.elementwise("scale", a, c=2.0).data, [2.0, -2.0])
        with pytest.raises(ContractError):
            ad.elementwise("pow", a)
        with pytest.raises(ContractError):
            ad.elementwise("mul", a)


class TestDense:
    def test_identity_map(self):
        out = ad.dense(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
        assert np.array_equal(out.data, [[1.0, 2.0]])

    def test_hand_matrix_product(self):
        out = ad.dense(
            Tensor([[1.0, 1.0]]), Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([1.0, 1.0])
        )
        assert np.array_equal(out.data, [[5.0, 7.0]])

    def test_table_shape_100_1_4_to_40(self):
        x = Tensor(np.zeros((100, 1, 4)))
        out = ad.dense(x, Tensor(np.zeros((4, 40))), Tensor(np.zeros(40)))
        assert out.shape == (100, 1, 40)

    def test_inner_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            ad.dense(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), Tensor(np.zeros(5)))
        with pytest.raises(ShapeError):
            ad.dense(Tensor(np.zeros((2, 4))), Tensor(np.zeros((4, 5))), Tensor(np.zeros(4)))


class TestConv2d:
    def test_unit_kernel_is_identity(self):
        x = np.random.default_rng(1).uniform(-2, 2, size=(3, 2, 5, 4))
        out = ad.conv2d(Tensor(x), Tensor(np.ones((2, 2, 1, 1)) * np.eye(2)[:, :, None, None]),
                        Tensor(np.zeros(2)))
        assert np.array_equal(out.data, x)

    def test_hand_cross_correlation(self):
        x = Tensor(np.arange(1.0, 10.0).reshape(1, 1, 3, 3))
        k = Tensor(np.ones((1, 1, 2, 2)))
        out = ad.conv2d(x, k, Tensor([0.0]))
        assert np.array_equal(out.data[0, 0], [[12.0, 16.0], [24.0, 28.0]])

    def test_table_shape_stride_two(self):
        x = Tensor(np.zeros((100, 16, 60, 20)))
        out = ad.conv2d(x, Tensor(np.zeros((32, 16, 4, 4))), Tensor(np.zeros(32)),
                        stride=(2, 2), padding=(1, 1))
        assert out.shape == (100, 32, 30, 10)

    def test_encoder_shape_walk(self):
        # three stride-2 halvings of the 120x40 grid
        hw = (120, 40)
        seen = []
        for _ in range(3):
            hw = ad.conv_output_shape(hw, (4, 4), (2, 2), (1, 1))
            seen.append(hw)
        assert seen == [(60, 20), (30, 10), (15, 5)]

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(ShapeError):
            ad.conv2d(Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros((1, 1, 6, 6))),
                      Tensor(np.zeros(1)))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            ad.conv2d(Tensor(np.zeros((1, 3, 5, 5))), Tensor(np.zeros((2, 4, 3, 3))),
                      Tensor(np.zeros(2)))

    def test_matches_reference_on_random_cases(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            n, c_in, c_out = rng.integers(1, 4, size=3)
            h, w = rng.integers(3, 9, size=2)
            kh, kw = rng.integers(1, 4, size=2)
            sh, sw = rng.integers(1, 3, size=2)
            ph, pw = rng.integers(0, 3, size=2)
            x = rng.uniform(-2, 2, size=(n, c_in, h, w))
            k = rng.uniform(-1, 1, size=(c_out, c_in, kh, kw))
            b = rng.uniform(-1, 1, size=c_out)
            fast = ad.conv2d(Tensor(x), Tensor(k), Tensor(b), (sh, sw), (ph, pw)).data
            ref = ad.conv2d_reference(x, k, b, (sh, sw), (ph, pw))
            assert np.abs(fast - ref).max() <= 1e-12


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.random.default_rng(0).uniform(-2, 2, size=(3, 4)), requires_grad=True)
        ad.sum_all(x).backward()
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_square_gradient(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        ad.sum_all(ad.mul(x, x)).backward()
        assert np.allclose(x.grad, [2.0, 4.0, 6.0], atol=1e-14)

    def test_scalar_contract(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ContractError):
            ad.mul(x, x).backward()

    def test_gradient_accumulation_two_consumers(self):
        # y = sum(x*x) built as two consumers of x must match the single-path 2x
        x = Tensor([1.5, -0.5, 2.0], requires_grad=True)
        a = ad.mul(x, x)
        b = ad.add(ad.sum_all(a), ad.sum_all(ad.mul(x, Tensor([1.0, 1.0, 1.0]))))
        b.backward()
        assert np.allclose(x.grad, 2.0 * x.data + 1.0, atol=1e-14)

    def test_backward_map_and_unreachable_params(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        unused = Tensor([5.0], requires_grad=True)
        loss = ad.sum_all(ad.mul(x, x))
        grads = ad.backward(loss, [x, unused])
        assert np.allclose(grads[id(x)].data, [2.0, 4.0])
        assert np.array_equal(grads[id(unused)].data, [0.0])

    def test_composite_matches_finite_difference(self):
        rng = np.random.default_rng(3)
        for seed in range(10):
            rng = np.random.default_rng(seed)
            x = Tensor(rng.uniform(-2, 2, size=(2, 3)), requires_grad=True)
            w = Tensor(rng.uniform(-1, 1, size=(3, 2)), requires_grad=True)

            def f(t: Tensor) -> Tensor:
                return ad.sum_all(ad.tanh(ad.dense(t, w, Tensor(np.zeros(2)))))

            loss = f(x)
            x.grad = None
            loss.backward()
            fd = ad.finite_difference_gradient(f, x, h=1e-5)
            rel = np.abs(x.grad - fd.data).max() / max(np.abs(fd.data).max(), 1e-12)
            assert rel <= 1e-4

    def test_grads_replaced_not_accumulated_by_backward_map(self):
        x = Tensor([1.0], requires_grad=True)
        loss = ad.mul(x, x)
        g1 = ad.backward(ad.sum_all(loss), [x])[id(x)].data
        loss2 = ad.mul(x, x)
        g2 = ad.backward(ad.sum_all(loss2), [x])[id(x)].data
        assert np.array_equal(g1, g2)


class TestFiniteDifference:
    def test_sum_of_squares(self):
        fd = ad.finite_difference_gradient(
            lambda t: ad.sum_all(ad.mul(t, t)), Tensor([3.0]), h=1e-5
        )
        assert abs(fd.data[0] - 6.0) <= 1e-8

    def test_constant_function(self):
        fd = ad.finite_difference_gradient(lambda t: Tensor(7.0), Tensor([1.0, 2.0]), h=1e-5)
        assert np.array_equal(fd.data, [0.0, 0.0])

    def test_linear_function_exact(self):
        fd = ad.finite_difference_gradient(
            lambda t: ad.sum_all(ad.scale(t, 2.0)), Tensor([1.0, -4.0, 0.5]), h=1e-5
        )
        assert np.allclose(fd.data, 2.0, atol=1e-9)

    def test_step_must_be_positive(self):
        with pytest.raises(ContractError):
            ad.finite_difference_gradient(lambda t: ad.sum_all(t), Tensor([1.0]), h=0.0)


class TestRearrangements:
    def test_reshape_round_trip_and_grad(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        y = ad.reshape(x, (3, 2))
        assert y.shape == (3, 2)
        ad.sum_all(ad.mul(y, y)).backward()
        assert np.allclose(x.grad, 2.0 * x.data)
        with pytest.raises(ShapeError):
            ad.reshape(x, (4, 2))

    def test_concat_channels_and_grads(self):
        a = Tensor(np.ones((1, 2, 2, 2)), requires_grad=True)
        b = Tensor(np.full((1, 1, 2, 2), 2.0), requires_grad=True)
        out = ad.concat_channels(a, b)
        assert out.shape == (1, 3, 2, 2)
        ad.sum_all(ad.mul(out, Tensor(np.arange(12.0).reshape(1, 3, 2, 2)))).backward()
        assert np.array_equal(a.grad, np.arange(8.0).reshape(1, 2, 2, 2))
        assert np.array_equal(b.grad, np.arange(8.0, 12.0).reshape(1, 1, 2, 2))

    def test_concat_parts_and_slice_channels(self):
        parts = [Tensor(np.full((2, 1), float(i)), requires_grad=True) for i in range(3)]
        stacked = ad.concat_parts(parts, axis=1)
        assert stacked.shape == (2, 3)
        mid = ad.slice_channels(stacked, 1, 2)
        ad.sum_all(mid).backward()
        assert np.array_equal(parts[0].grad, np.zeros((2, 1)))
        assert np.array_equal(parts[1].grad, np.ones((2, 1)))

    def test_stack_steps(self):
        steps = [Tensor(np.full((2, 3), float(t)), requires_grad=(t == 1)) for t in range(4)]
        out = ad.stack_steps(steps)
        assert out.shape == (2, 4, 3)
        assert np.array_equal(out.data[:, 2], np.full((2, 3), 2.0))
        ad.sum_all(ad.mul(out, out)).backward()
        assert np.allclose(steps[1].grad, 2.0)


class TestTensorBasics:
    def test_order_limit(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_item_contract(self):
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()
        assert Tensor(3.5).item() == 3.5

    def test_operator_sugar(self):
        a, b = Tensor([2.0]), Tensor([3.0])
        assert (a + b).data[0] == 5.0
        assert (a - b).data[0] == -1.0
        assert (a * b).data[0] == 6.0
