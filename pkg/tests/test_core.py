"""Tensor engine: recording semantics, op forwards against plain numpy, gradients."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lpgdepth.core import ComputationRecord, Function, Tensor, backward, ops
from lpgdepth.core.gradcheck import CASES, check_op, gradcheck, run_suite


def conv2d_loops(x, w, b, stride, dilation, padding):
    """Direct nested-loop cross-correlation in float64."""
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    Ho = (H + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    Wo = (W + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for y in range(Ho):
                for x_ in range(Wo):
                    acc = 0.0 if b is None else float(b[o])
                    for c in range(C):
                        for i in range(kh):
                            for j in range(kw):
                                r = y * stride + i * dilation - padding
                                s = x_ * stride + j * dilation - padding
                                if 0 <= r < H and 0 <= s < W:
                                    acc += float(x[n, c, r, s]) * float(w[o, c, i, j])
                    out[n, o, y, x_] = acc
    return out


class TestRecording:
    def test_no_record_means_no_graph(self):
        a = Tensor(np.ones(3), requires_grad=True)
        y = ops.sum(ops.mul(a, a))
        with ComputationRecord() as rec:
            pass
        with pytest.raises(ValueError):
            rec.backward(y)

    def test_backward_populates_leaf_grads(self):
        a = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        b = Tensor([4.0, 5.0, 6.0], requires_grad=True)
        with ComputationRecord() as rec:
            loss = ops.sum(ops.mul(a, b))
        backward(loss, rec)
        np.testing.assert_allclose(a.grad, [4, 5, 6])
        np.testing.assert_allclose(b.grad, [1, 2, 3])

    def test_grads_accumulate_across_passes(self):
        a = Tensor([2.0], requires_grad=True)
        for _ in range(2):
            with ComputationRecord() as rec:
                loss = ops.sum(ops.mul_scalar(a, 3.0))
            rec.backward(loss)
        np.testing.assert_allclose(a.grad, [6.0])
        a.zero_grad()
        np.testing.assert_allclose(a.grad, [0.0])

    def test_shared_input_sums_both_paths(self):
        a = Tensor([3.0], requires_grad=True)
        with ComputationRecord() as rec:
            loss = ops.sum(ops.add(ops.mul(a, a), a))
        rec.backward(loss)
        np.testing.assert_allclose(a.grad, [7.0])

    def test_non_scalar_loss_rejected(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with ComputationRecord() as rec:
            y = ops.mul_scalar(a, 2.0)
        with pytest.raises(ValueError, match="scalar"):
            rec.backward(y)

    def test_constants_get_no_grad(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        c = Tensor([5.0, 5.0])
        with ComputationRecord() as rec:
            loss = ops.sum(ops.mul(a, c))
        rec.backward(loss)
        assert c.grad is None

    def test_operator_sugar(self):
        a = Tensor([1.0, 2.0])
        np.testing.assert_allclose((a * 2 + 1 - a / 2).numpy(), [2.5, 4.0])
        np.testing.assert_allclose((-a).numpy(), [-1.0, -2.0])


class TestForwards:
    def test_elementwise_match_numpy(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0.5, 2.0, size=(3, 4)).astype(np.float32)
        t = Tensor(x)
        np.testing.assert_allclose(ops.exp(t).numpy(), np.exp(x), rtol=1e-6)
        np.testing.assert_allclose(ops.log(t).numpy(), np.log(x), rtol=1e-6)
        np.testing.assert_allclose(ops.sigmoid(t).numpy(), 1 / (1 + np.exp(-x)), rtol=1e-6)
        np.testing.assert_allclose(ops.pow_scalar(t, 2.5).numpy(), x**2.5, rtol=1e-5)

    def test_sigmoid_extremes_are_finite(self):
        out = ops.sigmoid(Tensor([-1000.0, 0.0, 1000.0])).numpy()
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0])

    def test_elu(self):
        out = ops.elu(Tensor([-1.0, 0.0, 2.0])).numpy()
        np.testing.assert_allclose(out, [np.expm1(-1.0), 0.0, 2.0], rtol=1e-6)

    def test_concat_and_narrow(self):
        a, b = Tensor(np.zeros((1, 2, 2))), Tensor(np.ones((1, 3, 2)))
        cat = ops.concat([a, b], axis=1)
        assert cat.shape == (1, 5, 2)
        np.testing.assert_array_equal(ops.narrow(cat, 1, 2, 3).numpy(), np.ones((1, 3, 2)))
        with pytest.raises(ValueError):
            ops.concat([a, Tensor(np.ones((2, 3, 2)))], axis=1)

    def test_nearest_upsample_and_downsample_roundtrip(self):
        x = np.arange(8, dtype=np.float32).reshape(1, 2, 2, 2)
        up = ops.nearest_upsample(Tensor(x), 4).numpy()
        assert up.shape == (1, 2, 8, 8)
        np.testing.assert_array_equal(up[0, 0, :4, :4], np.zeros((4, 4)))
        np.testing.assert_array_equal(ops.downsample_nearest(Tensor(up), 4).numpy(), x)

    def test_downsample_rejects_non_divisor(self):
        with pytest.raises(ValueError):
            ops.downsample_nearest(Tensor(np.zeros((1, 1, 6, 6))), 4)

    @pytest.mark.parametrize(
        "stride,dilation,padding,k",
        [(1, 1, 0, 3), (1, 1, 1, 3), (2, 1, 1, 3), (1, 2, 2, 3), (2, 3, 1, 3), (1, 1, 0, 1), (1, 1, 2, 5)],
    )
    def test_conv2d_matches_loop_oracle(self, stride, dilation, padding, k):
        rng = np.random.default_rng(stride * 100 + dilation * 10 + padding)
        x = rng.standard_normal((2, 3, 7, 6)).astype(np.float32)
        w = rng.standard_normal((4, 3, k, k)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, dilation=dilation, padding=padding).numpy()
        want = conv2d_loops(x, w, b, stride, dilation, padding)
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)

    def test_conv2d_without_bias(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
        w = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        got = ops.conv2d(Tensor(x), Tensor(w), padding=1).numpy()
        np.testing.assert_allclose(got, conv2d_loops(x, w, None, 1, 1, 1), rtol=1e-5, atol=1e-5)

    def test_conv2d_validation(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        with pytest.raises(ValueError, match="channels"):
            ops.conv2d(x, Tensor(np.zeros((1, 3, 3, 3))))
        with pytest.raises(ValueError, match="odd"):
            ops.conv2d(x, Tensor(np.zeros((1, 2, 2, 2))))
        with pytest.raises(ValueError, match="extent"):
            ops.conv2d(x, Tensor(np.zeros((1, 2, 3, 3))), dilation=3)

    def test_upconv_equals_upsample_then_conv(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((2, 3, 5, 4)), requires_grad=True)
        w = Tensor(rng.standard_normal((2, 3, 3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal(2), requires_grad=True)
        g = rng.standard_normal((2, 2, 10, 8))
        grads = []
        for fused in (True, False):
            for p in (x, w, b):
                p.zero_grad()
            with ComputationRecord() as rec:
                y = ops.upconv2d(x, w, b) if fused else ops.conv2d(ops.nearest_upsample(x, 2), w, b, padding=1)
                loss = ops.sum(ops.mul(y, Tensor(g)))
            rec.backward(loss)
            grads.append((y.numpy(), x.grad.copy(), w.grad.copy(), b.grad.copy()))
        for fused, composed in zip(*grads):
            np.testing.assert_allclose(fused, composed, rtol=1e-4, atol=1e-4)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(1, 2), st.integers(1, 3), st.integers(3, 7), st.integers(1, 2), st.integers(1, 2), st.integers(0, 2)
)
def test_conv2d_output_extent_property(b, c, h, stride, dilation, padding):
    x = Tensor(np.ones((b, c, h, h)))
    w = Tensor(np.ones((2, c, 3, 3)))
    expected = (h + 2 * padding - 2 * dilation - 1) // stride + 1
    if expected < 1:
        with pytest.raises(ValueError):
            ops.conv2d(x, w, stride=stride, dilation=dilation, padding=padding)
        return
    out = ops.conv2d(x, w, stride=stride, dilation=dilation, padding=padding)
    assert out.shape == (b, 2, expected, expected)


class TestGradcheck:
    def test_every_registered_op_has_a_case(self):
        run_suite(points=1)  # raises if a case is missing
        assert set(Function.registry) <= set(CASES)

    @pytest.mark.parametrize("name", sorted(CASES))
    def test_op_gradients(self, name):
        result = check_op(name, points=5, tol=1e-3, seed=7)
        assert result.passed, f"{name}: {result.max_error}"

    def test_linear_function_is_exact(self):
        a = Tensor(np.linspace(-1, 1, 5), requires_grad=True)
        err = gradcheck(lambda t: ops.mul_scalar(t, 2.0), [a], rng=np.random.default_rng(0))
        assert err < 1e-4

    def test_corrupted_backward_is_caught(self):
        class BrokenSquare(Function):
            name = "broken_square_fixture"

            def forward(self, a):
                self.a = a
                return a * a

            def backward(self, g):
                return (g * self.a,)  # missing factor 2

        try:
            a = Tensor(np.array([0.5, -1.0, 1.5]), requires_grad=True)
            err = gradcheck(lambda t: BrokenSquare.apply(t), [a], rng=np.random.default_rng(0))
            assert err > 1e-1
        finally:
            Function.registry.pop("broken_square_fixture", None)
