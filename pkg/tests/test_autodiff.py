"""Tensor kernel: forward semantics, brute-force parity, gradient checks."""

import numpy as np
import pytest

import focusfuse.autodiff as ad
from focusfuse.autodiff import Tape, Tensor
from focusfuse.errors import NonFiniteError, ShapeError

from reference import conv2d_naive, fd_max_rel_error


class TestTensor:
    def test_rank_enforced(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((3, 3)))

    def test_default_dtype_is_float32(self):
        t = Tensor(np.zeros((1, 1, 2, 2), dtype=np.float64))
        assert t.data.dtype == np.float32

    def test_float64_opt_in(self):
        t = Tensor(np.zeros((1, 1, 2, 2)), dtype=np.float64)
        assert t.data.dtype == np.float64

    def test_immutable(self):
        t = Tensor(np.zeros((1, 1, 2, 2)))
        with pytest.raises(ValueError):
            t.data[0, 0, 0, 0] = 1.0

    def test_item_requires_scalar(self):
        assert Tensor.scalar(2.5).item() == pytest.approx(2.5)
        with pytest.raises(ShapeError):
            Tensor(np.zeros((1, 1, 2, 2))).item()


class TestConv2d:
    def test_zero_input_gives_bias(self, rng):
        kernel = Tensor(rng.standard_normal((3, 2, 3, 3)))
        bias = Tensor(np.array([1.0, -2.0, 0.5]).reshape(1, 3, 1, 1))
        out = ad.conv2d(Tensor(np.zeros((1, 2, 3, 3))), kernel, bias)
        for o, b in enumerate([1.0, -2.0, 0.5]):
            assert np.allclose(out.data[0, o], b)

    def test_identity_kernel(self, rng):
        x = rng.random((1, 1, 6, 5)).astype(np.float32)
        kernel = np.zeros((1, 1, 3, 3), dtype=np.float32)
        kernel[0, 0, 1, 1] = 1.0
        out = ad.conv2d(Tensor(x), Tensor(kernel))
        assert np.array_equal(out.data, x)

    def test_matches_naive_reference(self, rng):
        x = rng.uniform(-1, 1, (1, 2, 5, 5)).astype(np.float32)
        k = rng.uniform(-1, 1, (4, 2, 3, 3)).astype(np.float32)
        b = rng.uniform(-1, 1, 4).astype(np.float32)
        out = ad.conv2d(Tensor(x), Tensor(k), Tensor(b.reshape(1, 4, 1, 1)))
        expected = conv2d_naive(x, k, b)
        assert np.abs(out.data - expected).max() < 1e-5

    def test_naive_parity_all_small_shapes(self, rng):
        for h in range(1, 9):
            for w in range(1, 9):
                x = rng.uniform(-1, 1, (2, 3, h, w)).astype(np.float32)
                k = rng.uniform(-1, 1, (2, 3, 3, 3)).astype(np.float32)
                out = ad.conv2d(Tensor(x), Tensor(k))
                assert np.abs(out.data - conv2d_naive(x, k)).max() < 1e-5

    def test_valid_padding(self, rng):
        x = rng.random((1, 1, 5, 7)).astype(np.float32)
        k = rng.random((2, 1, 3, 3)).astype(np.float32)
        out = ad.conv2d(Tensor(x), Tensor(k), padding="valid")
        assert out.shape == (1, 2, 3, 5)
        assert np.abs(out.data - conv2d_naive(x, k, padding="valid")).max() < 1e-5

    def test_linearity(self, rng):
        x = Tensor(rng.uniform(-1, 1, (1, 2, 4, 4)).astype(np.float32))
        y = Tensor(rng.uniform(-1, 1, (1, 2, 4, 4)).astype(np.float32))
        k = Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)).astype(np.float32))
        alpha, beta = 0.7, -1.3
        combo = Tensor(alpha * x.data + beta * y.data)
        lhs = ad.conv2d(combo, k).data
        rhs = alpha * ad.conv2d(x, k).data + beta * ad.conv2d(y, k).data
        assert np.abs(lhs - rhs).max() < 1e-5

    def test_determinism(self, rng):
        x = Tensor(rng.random((2, 4, 8, 8)).astype(np.float32))
        k = Tensor(rng.random((4, 4, 3, 3)).astype(np.float32))
        a = ad.conv2d(x, k).data
        b = ad.conv2d(x, k).data
        assert np.array_equal(a, b)

    def test_shape_mismatch_rejected(self, rng):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        with pytest.raises(ShapeError):
            ad.conv2d(x, Tensor(np.zeros((4, 3, 3, 3))))
        with pytest.raises(ShapeError):
            ad.conv2d(x, Tensor(np.zeros((4, 2, 5, 5))))

    def test_non_finite_rejected(self):
        bad = np.zeros((1, 1, 3, 3), dtype=np.float32)
        bad[0, 0, 0, 0] = np.nan
        with pytest.raises(NonFiniteError):
            ad.conv2d(Tensor(bad), Tensor(np.zeros((1, 1, 3, 3))))

    def test_gradients_match_finite_differences(self, rng):
        x = rng.uniform(-1, 1, (1, 2, 4, 4))
        k = rng.uniform(-1, 1, (3, 2, 3, 3))
        b = rng.uniform(-1, 1, (1, 3, 1, 1))
        proj = rng.uniform(-1, 1, (1, 3, 4, 4))

        def loss(t, tape):
            out = ad.conv2d(t["x"], t["k"], t["b"], tape=tape)
            return ad.reduce_sum(ad.mul(out, Tensor(proj, dtype=np.float64),
                                        tape=tape), tape=tape)

        err = fd_max_rel_error(loss, {"x": x, "k": k, "b": b})
        assert err < 1e-3


class TestActivations:
    def test_relu_values(self):
        out = ad.relu(Tensor(np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3)))
        assert np.array_equal(out.data.ravel(), [0.0, 0.0, 2.0])

    def test_relu_positive_unchanged(self, rng):
        x = rng.random((1, 2, 3, 3)).astype(np.float32) + 0.1
        assert np.array_equal(ad.relu(Tensor(x)).data, x)

    def test_relu_subgradient(self):
        x = Tensor(np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3))
        tape = Tape()
        ad.reduce_sum(ad.relu(x, tape=tape), tape=tape)
        tape.backward()
        assert np.array_equal(tape.grad(x).data.ravel(), [0.0, 0.0, 1.0])

    def test_sigmoid_zero(self):
        assert ad.sigmoid(Tensor.scalar(0.0)).item() == pytest.approx(0.5)

    def test_sigmoid_saturates_without_overflow(self):
        with np.errstate(over="raise"):
            out = ad.sigmoid(Tensor(np.array([40.0, -40.0, 200.0, -200.0])
                                    .reshape(1, 1, 1, 4)))
        vals = out.data.ravel()
        assert vals[0] == pytest.approx(1.0, abs=1e-6)
        assert vals[1] == pytest.approx(0.0, abs=1e-6)
        assert np.isfinite(vals).all()

    def test_sigmoid_gradient(self, rng):
        x = rng.uniform(-3, 3, (1, 1, 4, 4))

        def loss(t, tape):
            return ad.reduce_sum(ad.sigmoid(t["x"], tape=tape), tape=tape)

        assert fd_max_rel_error(loss, {"x": x}, step=1e-4) < 1e-4


class TestStructuralOps:
    def test_global_avg_pool_constant(self):
        x = Tensor(np.full((1, 2, 3, 3), 0.7, dtype=np.float32))
        assert np.allclose(ad.global_avg_pool(x).data, 0.7)

    def test_global_avg_pool_mean(self):
        x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2))
        assert ad.global_avg_pool(x).item() == pytest.approx(2.5)

    def test_global_avg_pool_backward(self, rng):
        x = rng.uniform(-1, 1, (1, 3, 4, 4))

        def loss(t, tape):
            pooled = ad.global_avg_pool(t["x"], tape=tape)
            return ad.reduce_sum(pooled, tape=tape)

        assert fd_max_rel_error(loss, {"x": x}) < 1e-3

    def test_concat_with_empty(self, rng):
        x = rng.random((1, 3, 2, 2)).astype(np.float32)
        empty = Tensor(np.zeros((1, 0, 2, 2)))
        out = ad.channel_concat(Tensor(x), empty)
        assert np.array_equal(out.data, x)

    def test_concat_shapes(self):
        a = Tensor(np.zeros((1, 16, 8, 8)))
        b = Tensor(np.zeros((1, 16, 8, 8)))
        assert ad.channel_concat(a, b).shape == (1, 32, 8, 8)
        with pytest.raises(ShapeError):
            ad.channel_concat(a, Tensor(np.zeros((1, 16, 4, 8))))

    def test_concat_backward_splits(self, rng):
        a = rng.uniform(-1, 1, (1, 2, 3, 3))
        b = rng.uniform(-1, 1, (1, 3, 3, 3))
        proj = rng.uniform(-1, 1, (1, 5, 3, 3))

        def loss(t, tape):
            cat = ad.channel_concat(t["a"], t["b"], tape=tape)
            return ad.reduce_sum(ad.mul(cat, Tensor(proj, dtype=np.float64),
                                        tape=tape), tape=tape)

        assert fd_max_rel_error(loss, {"a": a, "b": b}) < 1e-3

    def test_channel_scale_identity_and_zero(self, rng):
        x = rng.random((1, 4, 3, 3)).astype(np.float32)
        ones = Tensor(np.ones((1, 4, 1, 1)))
        zeros = Tensor(np.zeros((1, 4, 1, 1)))
        assert np.array_equal(ad.channel_scale(Tensor(x), ones).data, x)
        assert np.array_equal(ad.channel_scale(Tensor(x), zeros).data,
                              np.zeros_like(x))

    def test_channel_scale_gradients(self, rng):
        x = rng.uniform(-1, 1, (2, 3, 3, 3))
        s = rng.uniform(0.2, 1.0, (2, 3, 1, 1))
        proj = rng.uniform(-1, 1, (2, 3, 3, 3))

        def loss(t, tape):
            out = ad.channel_scale(t["x"], t["s"], tape=tape)
            return ad.reduce_sum(ad.mul(out, Tensor(proj, dtype=np.float64),
                                        tape=tape), tape=tape)

        assert fd_max_rel_error(loss, {"x": x, "s": s}, step=1e-4) < 1e-4


class TestElementwiseAndReductions:
    @pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul, ad.div])
    def test_binary_gradients(self, op, rng):
        a = rng.uniform(-1, 1, (1, 2, 3, 3))
        b = rng.uniform(0.5, 1.5, (1, 2, 3, 3))  # bounded away from 0 for div

        def loss(t, tape):
            return ad.reduce_mean(op(t["a"], t["b"], tape=tape), tape=tape)

        assert fd_max_rel_error(loss, {"a": a, "b": b}) < 1e-3

    def test_affine_and_sqrt(self, rng):
        x = rng.uniform(0.5, 2.0, (1, 1, 3, 3))

        def loss(t, tape):
            return ad.reduce_sum(ad.sqrt(ad.affine(t["x"], 2.0, 1.0, tape=tape),
                                         tape=tape), tape=tape)

        assert fd_max_rel_error(loss, {"x": x}) < 1e-3

    def test_filter2d_valid_and_gradient(self, rng):
        x = rng.uniform(-1, 1, (1, 1, 6, 6))
        kern = rng.uniform(-1, 1, (3, 3))
        out = ad.filter2d(Tensor(x), kern)
        assert out.shape == (1, 1, 4, 4)
        # forward parity against direct window sums
        expected = np.zeros((4, 4))
        for y in range(4):
            for xx in range(4):
                expected[y, xx] = (x[0, 0, y:y + 3, xx:xx + 3] * kern).sum()
        assert np.abs(out.data[0, 0] - expected).max() < 1e-5

        def loss(t, tape):
            return ad.reduce_sum(ad.filter2d(t["x"], kern, tape=tape), tape=tape)

        assert fd_max_rel_error(loss, {"x": x}) < 1e-3

    def test_mul_shared_operand(self, rng):
        x = rng.uniform(-1, 1, (1, 1, 3, 3))

        def loss(t, tape):
            return ad.reduce_sum(ad.mul(t["x"], t["x"], tape=tape), tape=tape)

        assert fd_max_rel_error(loss, {"x": x}) < 1e-3


class TestBackward:
    def test_sum_gradient_is_ones(self, rng):
        x = Tensor(rng.random((1, 2, 3, 3)).astype(np.float32))
        tape = Tape()
        ad.reduce_sum(x, tape=tape)
        grads = tape.backward()
        assert len(grads) == 0  # unnamed leaf: reachable via tape.grad only
        assert np.array_equal(tape.grad(x).data, np.ones((1, 2, 3, 3), np.float32))

    def test_named_leaves_reported(self, rng):
        x = Tensor(rng.random((1, 1, 3, 3)).astype(np.float32), name="x")
        tape = Tape()
        ad.reduce_sum(ad.relu(x, tape=tape), tape=tape)
        grads = tape.backward()
        assert set(grads) == {"x"}
        assert grads["x"].shape == x.shape

    def test_composite_conv_relu_sum_fd(self, rng):
        x = rng.uniform(-1, 1, (1, 1, 4, 4))
        k = rng.uniform(-1, 1, (2, 1, 3, 3))
        b = rng.uniform(-0.5, 0.5, (1, 2, 1, 1))

        def loss(t, tape):
            out = ad.relu(ad.conv2d(t["x"], t["k"], t["b"], tape=tape), tape=tape)
            return ad.reduce_sum(out, tape=tape)

        err = fd_max_rel_error(loss, {"x": x, "k": k, "b": b}, step=1e-3)
        assert err < 1e-3

    def test_two_backwards_bit_identical(self, rng):
        x = Tensor(rng.random((1, 1, 4, 4)).astype(np.float32), name="x")
        k = Tensor(rng.random((2, 1, 3, 3)).astype(np.float32), name="k")
        tape = Tape()
        ad.reduce_sum(ad.relu(ad.conv2d(x, k, tape=tape), tape=tape), tape=tape)
        g1 = tape.backward()
        g2 = tape.backward()
        for name in g1:
            assert np.array_equal(g1[name].data, g2[name].data)

    def test_non_scalar_terminal_rejected(self, rng):
        x = Tensor(rng.random((1, 1, 3, 3)).astype(np.float32))
        tape = Tape()
        ad.relu(x, tape=tape)
        with pytest.raises(ShapeError):
            tape.backward()

    def test_empty_tape_rejected(self):
        with pytest.raises(ShapeError):
            Tape().backward()

    def test_loss_grad_seed_scales(self, rng):
        x = Tensor(rng.random((1, 1, 3, 3)).astype(np.float32), name="x")
        tape = Tape()
        ad.reduce_sum(x, tape=tape)
        g1 = tape.backward(1.0)["x"].data
        g3 = tape.backward(3.0)["x"].data
        assert np.allclose(g3, 3.0 * g1)


class TestRandomizedGradientProperty:
    """Every differentiable op on random [-1, 1] inputs: rel error < 1e-3."""

    def test_all_ops_fd_sweep(self):
        rng = np.random.default_rng(99)
        proj = rng.uniform(-1, 1, (1, 4, 5, 5))

        cases = {
            "conv": lambda t, tape: ad.conv2d(t["x"], t["k"], t["b"], tape=tape),
            "relu": lambda t, tape: ad.relu(t["x"], tape=tape),
            "sigmoid": lambda t, tape: ad.sigmoid(t["x"], tape=tape),
            "scale": lambda t, tape: ad.channel_scale(t["x"], t["s"], tape=tape),
        }
        for name, build in cases.items():
            leaves = {"x": rng.uniform(-1, 1, (1, 4, 5, 5)),
                      "k": rng.uniform(-1, 1, (4, 4, 3, 3)),
                      "b": rng.uniform(-1, 1, (1, 4, 1, 1)),
                      "s": rng.uniform(-1, 1, (1, 4, 1, 1))}

            def loss(t, tape, build=build):
                out = build(t, tape)
                return ad.reduce_sum(
                    ad.mul(out, Tensor(proj, dtype=np.float64), tape=tape), tape=tape)

            err = fd_max_rel_error(loss, leaves, samples_per_leaf=20, rng=rng)
            assert err < 1e-3, f"{name}: rel error {err}"
