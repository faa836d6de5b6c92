import numpy as np
import pytest

from fsta_snn import numerics as nx
from fsta_snn.numerics import ShapeError, Tensor

from fdcheck import grad_rel_error


def naive_conv(x, w, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for b in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(cin):
                        for p in range(kh):
                            for q in range(kw):
                                acc += xp[b, c, i * stride + p, j * stride + q] * w[o, c, p, q]
                    out[b, o, i, j] = acc
    return out


class TestConv2d:
    def test_scaling_kernel(self):
        y = nx.conv2d(np.ones((1, 1, 3, 3)), np.full((1, 1, 1, 1), 2.0))
        np.testing.assert_array_equal(y.data, np.full((1, 1, 3, 3), 2.0))

    def test_direct_sum(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        assert nx.conv2d(x, np.ones((1, 1, 2, 2))).data.tolist() == [[[[10.0]]]]

    @pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (1, 0), (2, 2)])
    def test_matches_loop_oracle(self, rng, stride, pad):
        x = rng.normal(size=(2, 3, 8, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        got = nx.conv2d(x, w, stride, pad).data
        want = naive_conv(x, w, stride, pad)
        assert np.max(np.abs(got - want)) / np.max(np.abs(want)) <= 1e-12

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError, match="Cin=2"):
            nx.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))

    def test_oversized_kernel(self):
        with pytest.raises(ShapeError, match="larger"):
            nx.conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 5, 5)))

    def test_gradients(self, rng):
        x = Tensor(rng.normal(size=(2, 2, 5, 5)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        c = rng.normal(size=(2, 3, 3, 3))
        assert grad_rel_error(lambda: (nx.conv2d(x, w, 2, 1) * c).sum(), [x, w]) <= 1e-4


class TestLinear:
    def test_identity(self, rng):
        x = rng.normal(size=(4, 5))
        np.testing.assert_array_equal(nx.linear(x, np.eye(5), np.zeros(5)).data, x)

    def test_summation_row(self):
        assert nx.linear(np.array([1.0, 2.0]), np.array([[1.0, 1.0]]), np.array([0.0])).data.tolist() == [3.0]

    def test_loop_oracle(self, rng):
        x = rng.normal(size=(6, 7))
        w = rng.normal(size=(3, 7))
        b = rng.normal(size=3)
        want = np.array([[sum(x[i, k] * w[j, k] for k in range(7)) + b[j] for j in range(3)] for i in range(6)])
        got = nx.linear(x, w, b).data
        assert np.max(np.abs(got - want)) / np.max(np.abs(want)) <= 1e-12

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            nx.linear(np.zeros((2, 3)), np.zeros((4, 5)))
        with pytest.raises(ShapeError):
            nx.linear(np.zeros((2, 3)), np.zeros((4, 3)), np.zeros(5))

    def test_gradients(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)
        c = rng.normal(size=(3, 2))
        assert grad_rel_error(lambda: (nx.linear(x, w, b) * c).sum(), [x, w, b]) <= 1e-4


class TestElementwise:
    def test_sigmoid_zero(self):
        assert nx.sigmoid(np.array(0.0)).item() == 0.5

    def test_sigmoid_extremes_are_finite(self):
        y = nx.sigmoid(np.array([-1000.0, 1000.0])).data
        assert np.all(np.isfinite(y)) and y[0] == 0.0 and y[1] == 1.0

    def test_add_zero(self, rng):
        x = rng.normal(size=(2, 3))
        np.testing.assert_array_equal(nx.elementwise("add", x, np.zeros((2, 3))).data, x)

    def test_broadcast_mul(self, rng):
        x = rng.normal(size=(2, 3, 4, 5))
        w = rng.normal(size=(4, 5))
        got = nx.elementwise("mul", x, w).data
        for t in range(2):
            for c in range(3):
                for i in range(4):
                    for j in range(5):
                        assert got[t, c, i, j] == x[t, c, i, j] * w[i, j]

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            nx.elementwise("pow", 1.0, 2.0)

    def test_incompatible_shapes(self):
        with pytest.raises(ShapeError):
            nx.add(np.zeros((2, 3)), np.zeros((4,)))

    @pytest.mark.parametrize("kind", ["add", "sub", "mul", "div"])
    def test_binary_gradients(self, rng, kind):
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.uniform(0.5, 2.0, size=(4,)), requires_grad=True)
        c = rng.normal(size=(3, 4))
        assert grad_rel_error(lambda: (nx.elementwise(kind, a, b) * c).sum(), [a, b]) <= 1e-4

    @pytest.mark.parametrize("fn", [nx.sigmoid, nx.exp, nx.sqrt, nx.log])
    def test_unary_gradients(self, rng, fn):
        a = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
        c = rng.normal(size=(3, 4))
        assert grad_rel_error(lambda: (fn(a) * c).sum(), [a]) <= 1e-4


class TestReduce:
    def test_mean_all(self):
        assert nx.reduce("mean", np.array([[1.0, 2.0], [3.0, 4.0]])).item() == 2.5

    def test_max_last(self):
        assert nx.reduce("max", np.array([1.0, 5.0, 3.0]), axes=-1).item() == 5.0

    def test_temporal_mean_loop(self, rng):
        x = rng.normal(size=(4, 2, 3, 3))
        got = nx.reduce("mean", x, axes=0).data
        want = np.zeros((2, 3, 3))
        for t in range(4):
            want += x[t]
        np.testing.assert_allclose(got, want / 4, rtol=0, atol=1e-15)

    def test_empty_axes_is_identity(self, rng):
        x = rng.normal(size=(2, 3))
        np.testing.assert_array_equal(nx.reduce("sum", x, axes=()).data, x)

    def test_bad_axis(self):
        with pytest.raises(ShapeError):
            nx.reduce("sum", np.zeros((2, 3)), axes=2)

    def test_max_gradient_goes_to_first_argmax(self):
        x = Tensor(np.array([3.0, 1.0, 3.0]), requires_grad=True)
        nx.backward(nx.reduce("max", x))
        np.testing.assert_array_equal(x.grad, [1.0, 0.0, 0.0])

    @pytest.mark.parametrize("kind", ["sum", "mean", "max"])
    @pytest.mark.parametrize("axes", [None, 0, (1, 2), -1])
    def test_gradients(self, rng, kind, axes):
        x = Tensor(rng.normal(size=(3, 4, 5)), requires_grad=True)
        out_shape = nx.reduce(kind, x, axes).shape
        c = rng.normal(size=out_shape)
        assert grad_rel_error(lambda: (nx.reduce(kind, x, axes) * c).sum(), [x]) <= 1e-4


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        nx.backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((3, 2)))

    def test_sigmoid_slope(self):
        w = Tensor(np.array(0.0), requires_grad=True)
        nx.backward(nx.sigmoid(w * 1.0))
        assert w.grad == 0.25

    def test_non_scalar_root(self):
        with pytest.raises(ShapeError):
            nx.backward(Tensor(np.zeros(3), requires_grad=True) * 2.0)

    def test_gradients_accumulate(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        nx.backward((x * 3.0).sum())
        nx.backward((x * 3.0).sum())
        np.testing.assert_array_equal(x.grad, [6.0, 6.0])

    def test_shared_subexpression(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        y = x * x
        nx.backward(y * y)  # x^4
        assert x.grad == pytest.approx(32.0)

    def test_tape_is_topological(self, rng):
        x = Tensor(rng.normal(size=3), requires_grad=True)
        root = nx.sigmoid(x * 2.0 + 1.0).sum()
        tape = nx.Tape.from_root(root)
        assert [r.op for r in tape.records][-1] == "sum"
        assert len(tape) == 4

    def test_no_grad_inputs_make_no_record(self):
        y = Tensor(np.ones(2)) * 2.0
        assert y._record is None and not y.requires_grad


class TestShapes:
    def test_getitem_gradient(self, rng):
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        idx = (np.array([0, 2, 2]), np.array([1, 0, 1]))
        assert grad_rel_error(lambda: (x[idx] * np.array([1.0, 2.0, 3.0])).sum(), [x]) <= 1e-4

    def test_stack_concat_transpose(self, rng):
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        c = rng.normal(size=(3, 4, 2))

        def f():
            s = nx.stack([a, b], axis=1).reshape(2, 6)
            return (nx.concat([s, s * 2.0], axis=0).reshape(4, 3, 2).transpose(1, 0, 2) * c).sum()

        assert grad_rel_error(f, [a, b]) <= 1e-4

    def test_log_softmax(self, rng):
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        np.testing.assert_allclose(np.exp(nx.log_softmax(x).data).sum(axis=-1), 1.0, rtol=1e-12)
        c = rng.normal(size=(3, 5))
        assert grad_rel_error(lambda: (nx.log_softmax(x) * c).sum(), [x]) <= 1e-4

    def test_float32_mode(self):
        nx.set_default_dtype(np.float32)
        assert Tensor([1, 2]).dtype == np.float32
        with pytest.raises(ValueError):
            nx.set_default_dtype(np.int32)
