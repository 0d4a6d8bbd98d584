"""Tensor engine: forward values, backward rules, graph mechanics."""

import numpy as np
import pytest

from waveop import tensor as T


def central_diff(fn, x, h=1e-4):
    """Gradient of scalar fn at x by central differences, entry by entry."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = fn(x)
        x[idx] = orig - h
        fm = fn(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
        it.iternext()
    return g


def check_grad(op, x0, tol=1e-6, h=1e-4):
    """Compare analytic and FD gradients of sum(R * op(x)) at x0."""
    rng = np.random.default_rng(99)
    xt = T.Tensor(x0.copy(), requires_grad=True)
    out = op(xt)
    r = rng.standard_normal(out.shape)
    loss = T.tsum(out * T.Tensor(r))
    loss.backward()

    def scalar(x):
        with T.no_grad():
            return float((op(T.Tensor(x)).data * r).sum())

    fd = central_diff(scalar, x0.copy(), h=h)
    denom = max(np.abs(fd).max(), np.abs(xt.grad).max(), 1e-8)
    rel = np.abs(fd - xt.grad).max() / denom
    assert rel < tol, f"gradient mismatch rel={rel:.3e}"


class TestMish:
    def test_zero_fixed_point(self):
        assert T.mish(T.Tensor(np.array([0.0]))).data[0] == 0.0

    def test_frozen_values(self):
        # oracle: high-precision evaluation of x * tanh(log(1 + exp(x)))
        x = T.Tensor(np.array([10.0, -10.0, 1.0, -1.0], dtype=np.float64))
        y = T.mish(x).data
        assert abs(y[0] - 10.0) < 1e-4
        assert abs(y[0] - 9.9999999587806704) < 1e-12
        assert abs(y[1] - (-4.5398899185674694e-4)) < 1e-6
        assert abs(y[2] - 0.86509838826731035) < 1e-12
        assert abs(y[3] - (-0.30340146137410892)) < 1e-12

    def test_overflow_safe(self):
        big = T.Tensor(np.array([700.0, -700.0, 1e30, -1e30], dtype=np.float64))
        y = T.mish(big).data
        assert np.all(np.isfinite(y))
        assert abs(y[0] - 700.0) < 1e-9
        assert abs(y[1]) < 1e-200

    def test_gradient(self):
        rng = np.random.default_rng(0)
        check_grad(T.mish, rng.standard_normal((5, 7)))


class TestSoftmax:
    def test_uniform_logits(self):
        y = T.softmax(T.Tensor(np.zeros(3)), axis=0).data
        assert np.allclose(y, 1 / 3, atol=1e-12)

    def test_hand_values(self):
        y = T.softmax(T.Tensor(np.array([0.0, np.log(2.0)])), axis=0).data
        assert np.allclose(y, [1 / 3, 2 / 3], atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 6))
        a = T.softmax(T.Tensor(x), axis=1).data
        b = T.softmax(T.Tensor(x + 123.456), axis=1).data
        assert np.allclose(a, b, atol=1e-12)

    def test_slices_sum_to_one(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 5, 2)).astype(np.float32) * 30
        y = T.softmax(T.Tensor(x), axis=1).data
        assert np.allclose(y.sum(axis=1), 1.0, atol=1e-6)

    def test_axis_out_of_range(self):
        with pytest.raises(IndexError):
            T.softmax(T.Tensor(np.zeros((2, 2))), axis=5)

    def test_gradient(self):
        rng = np.random.default_rng(3)
        check_grad(lambda t: T.softmax(t, axis=1), rng.standard_normal((3, 4)))


class TestChannelMix:
    def test_identity(self):
        rng = np.random.default_rng(4)
        v = rng.standard_normal((2, 8, 3))
        w = T.Tensor(np.eye(3))
        b = T.Tensor(np.zeros(3))
        out = T.channel_mix(T.Tensor(v), w, b)
        assert np.allclose(out.data, v, atol=1e-14)

    def test_constant_in_space_stays_constant(self):
        rng = np.random.default_rng(5)
        v = np.broadcast_to(rng.standard_normal(3), (1, 16, 3)).copy()
        w = T.Tensor(rng.standard_normal((3, 5)))
        b = T.Tensor(rng.standard_normal(5))
        out = T.channel_mix(T.Tensor(v), w, b).data
        assert np.allclose(out, out[:, :1, :], atol=1e-12)

    def test_matches_per_point_loop(self):
        rng = np.random.default_rng(6)
        v = rng.standard_normal((1, 4, 2))
        w = rng.standard_normal((2, 3))
        b = rng.standard_normal(3)
        out = T.channel_mix(T.Tensor(v), T.Tensor(w), T.Tensor(b)).data
        for p in range(4):
            expect = w.T @ v[0, p] + b
            assert np.allclose(out[0, p], expect, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            T.channel_mix(T.Tensor(np.zeros((1, 4, 2))), T.Tensor(np.zeros((3, 3))),
                          T.Tensor(np.zeros(3)))

    def test_gradients_all_args(self):
        rng = np.random.default_rng(7)
        v0 = rng.standard_normal((2, 6, 3))
        w0 = rng.standard_normal((3, 4))
        b0 = rng.standard_normal(4)
        for pick in range(3):
            args = [T.Tensor(v0.copy()), T.Tensor(w0.copy()), T.Tensor(b0.copy())]

            def op(x, pick=pick, args=args):
                a = list(args)
                a[pick] = x
                return T.channel_mix(*a)

            check_grad(op, [v0, w0, b0][pick].copy())


class TestBackward:
    def test_quadratic(self):
        x = T.Tensor(np.array([1.0, 2.0]), requires_grad=True)
        loss = T.tsum(x * x)
        loss.backward()
        assert np.allclose(x.grad, [2.0, 4.0], atol=1e-14)

    def test_independent_leaf_gets_no_grad(self):
        x = T.Tensor(np.array([1.0]), requires_grad=True)
        y = T.Tensor(np.array([5.0]), requires_grad=True)
        loss = T.tsum(x * x)
        loss.backward()
        assert y.grad is None

    def test_accumulation_over_paths(self):
        x = T.Tensor(np.array([3.0]), requires_grad=True)
        loss = T.tsum(x * x + x * x)  # two paths
        loss.backward()
        assert np.allclose(x.grad, [12.0])

    def test_non_scalar_loss_rejected(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        y = x * x
        with pytest.raises(T.GraphError):
            T.backward(T.build_graph(y), y)

    def test_cycle_detected(self):
        x = T.Tensor(np.ones(1), requires_grad=True)
        y = x * x
        y._parents = (y,)  # malformed by construction
        with pytest.raises(T.GraphError):
            T.build_graph(y)

    def test_graph_topological_and_leaves(self):
        x = T.Tensor(np.ones(2), requires_grad=True)
        y = T.Tensor(np.ones(2), requires_grad=True)
        z = T.tsum(x * y + x)
        g = T.build_graph(z)
        seen = set()
        for node in g.nodes:
            for p in node._parents:
                assert id(p) in seen, "parent visited after child"
            seen.add(id(node))
        assert {id(l) for l in g.leaves} == {id(x), id(y)}

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(42)
            x = T.Tensor(rng.standard_normal((4, 4)), requires_grad=True)
            out = T.tsum(T.mish(T.channel_mix(x, T.Tensor(rng.standard_normal((4, 4))),
                                              T.Tensor(rng.standard_normal(4)))))
            out.backward()
            return out.data.tobytes(), x.grad.tobytes()

        assert run() == run()


class TestCompositeGradients:
    """Every remaining op passes central-difference checks (float64, h=1e-4)."""

    @pytest.mark.parametrize("op,shape", [
        (lambda t: T.tsum(t, axis=1), (3, 4)),
        (lambda t: T.tsum(t, axis=(1, 2)), (2, 3, 4)),
        (lambda t: T.tmean(t, axis=-1), (3, 5)),
        (lambda t: T.reshape(t, (6, 2)), (3, 4)),
        (lambda t: T.sqrt(t * t + 1.0), (4, 4)),
        (lambda t: t * 2.5 - 1.0, (3, 3)),
        (lambda t: -t + t * t, (5,)),
        (lambda t: t / 4.0, (3, 2)),
        (lambda t: T.power(t, 3.0), (4,)),
        (lambda t: T.expand_last(T.reshape(t, (3, 4, 1)), 5), (3, 4)),
        (lambda t: T.index_axis(t, 1, 2), (3, 4, 2)),
    ])
    def test_op(self, op, shape):
        rng = np.random.default_rng(hash(shape) % 2 ** 31)
        check_grad(op, rng.standard_normal(shape) + 2.0)

    def test_concat(self):
        rng = np.random.default_rng(11)
        other = T.Tensor(rng.standard_normal((3, 2)))
        check_grad(lambda t: T.concat([t, other], axis=1), rng.standard_normal((3, 4)))

    def test_scale_channels(self):
        rng = np.random.default_rng(12)
        y0 = rng.standard_normal((2, 8, 3))
        s0 = rng.standard_normal((2, 3))
        sc = T.Tensor(s0.copy())
        check_grad(lambda t: T.scale_channels(t, sc), y0.copy())
        yc = T.Tensor(y0.copy())
        check_grad(lambda t: T.scale_channels(yc, t), s0.copy())

    def test_conv2d(self):
        rng = np.random.default_rng(13)
        x0 = rng.standard_normal((2, 9, 9, 2))
        w0 = rng.standard_normal((3, 3, 2, 4))
        b0 = rng.standard_normal(4)
        wc, bc = T.Tensor(w0.copy()), T.Tensor(b0.copy())
        check_grad(lambda t: T.conv2d(t, wc, bc, 2), x0.copy())
        xc = T.Tensor(x0.copy())
        check_grad(lambda t: T.conv2d(xc, t, bc, 2), w0.copy())
        check_grad(lambda t: T.conv2d(xc, wc, t, 2), b0.copy())

    def test_avgpool2d(self):
        rng = np.random.default_rng(14)
        check_grad(lambda t: T.avgpool2d(t, (2, 2)), rng.standard_normal((2, 8, 8, 3)))

    def test_div_by_tensor(self):
        rng = np.random.default_rng(15)
        d = T.Tensor(rng.standard_normal(6) + 3.0)
        check_grad(lambda t: t / d, rng.standard_normal(6))


class TestNoGrad:
    def test_no_graph_built(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            y = x * x
        assert not y.requires_grad and y._parents == ()

    def test_finite_guard(self):
        bad = T.Tensor(np.array([1.0, np.nan]))
        with pytest.raises(FloatingPointError):
            bad.assert_finite()
