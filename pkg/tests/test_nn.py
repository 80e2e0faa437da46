import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctkit.archs import DenoiserArch
from ctkit.nn import (
    ELU,
    AdamState,
    Concat,
    Conv2D,
    Dense,
    LeakyReLU,
    Network,
    ReLU,
    Reshape,
    adam_step,
    load_network,
    mse_loss,
    save_network,
    sgd_step,
)
from ctkit.nn.checkpoint import CheckpointError, network_bytes
from ctkit.nn.gradcheck import check_gradients, check_input_gradient


def direct_conv(x, w, b, dilation):
    """Six nested loops over batch, out, in, rows, cols and taps."""
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    p = dilation * (k // 2)
    out = np.zeros((B, O, H, W))
    for n in range(B):
        for o in range(O):
            for c in range(C):
                for i in range(H):
                    for j in range(W):
                        for ky in range(k):
                            for kx in range(k):
                                yy, xx = i + ky * dilation - p, j + kx * dilation - p
                                if 0 <= yy < H and 0 <= xx < W:
                                    out[n, o, i, j] += w[o, c, ky, kx] * x[n, c, yy, xx]
            out[n, o] += b[o]
    return out


class TestConv2D:
    def test_identity_1x1(self):
        conv = Conv2D(1, 1, kernel=1, dtype=np.float64)
        conv.params[0][...] = 1.0
        x = np.random.default_rng(0).standard_normal((2, 1, 5, 7))
        np.testing.assert_array_equal(conv.forward(x), x)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_dilated_impulse(self, d):
        conv = Conv2D(1, 1, kernel=3, dilation=d, dtype=np.float64)
        conv.params[0][0, 0] = np.arange(1, 10).reshape(3, 3)
        x = np.zeros((1, 1, 11, 11))
        x[0, 0, 5, 5] = 1.0
        out = conv.forward(x)[0, 0]
        for ky in range(3):
            for kx in range(3):
                # correlation places the kernel flipped around the impulse
                assert out[5 - (ky - 1) * d, 5 - (kx - 1) * d] == ky * 3 + kx + 1
        assert np.count_nonzero(out) == 9

    @pytest.mark.parametrize("k,d", [(1, 1), (3, 1), (3, 2), (3, 4)])
    def test_matches_direct_loops(self, k, d):
        rng = np.random.default_rng(k * 10 + d)
        conv = Conv2D(3, 2, kernel=k, dilation=d, dtype=np.float64)
        conv.params[0][...] = rng.standard_normal(conv.params[0].shape)
        conv.params[1][...] = rng.standard_normal(2)
        x = rng.standard_normal((2, 3, 6, 7))
        np.testing.assert_allclose(conv.forward(x), direct_conv(x, *conv.params, d), atol=1e-6)

    def test_channel_mismatch_names_layer(self):
        conv = Conv2D(2, 4)
        with pytest.raises(ValueError, match=r"Conv2D\(2->4"):
            conv.forward(np.zeros((1, 3, 4, 4), np.float32))

    def test_bad_kernel(self):
        with pytest.raises(ValueError):
            Conv2D(1, 1, kernel=5)
        with pytest.raises(ValueError):
            Conv2D(1, 1, dilation=0)


class TestActivations:
    def test_relu(self):
        y = ReLU().forward(np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(y, [0.0, 0.0, 2.0])

    def test_relu_derivative_at_zero(self):
        r = ReLU()
        r.forward(np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(r.backward(np.ones(3)), [0.0, 0.0, 1.0])

    def test_leaky(self):
        layer = LeakyReLU()
        np.testing.assert_allclose(layer.forward(np.array([-2.0, 3.0])), [-0.02, 3.0])
        np.testing.assert_allclose(layer.backward(np.ones(2)), [0.01, 1.0])

    def test_elu(self):
        layer = ELU()
        np.testing.assert_allclose(layer.forward(np.array([-1.0, 0.0, 1.5])), [math.expm1(-1), 0.0, 1.5])
        np.testing.assert_allclose(layer.backward(np.ones(3)), [math.exp(-1), 1.0, 1.0])

    def test_backward_without_forward(self):
        with pytest.raises(RuntimeError):
            ReLU().backward(np.ones(3))


class TestLoss:
    def test_example(self):
        loss, grad = mse_loss(np.array([1.0, 2.0]), np.array([0.0, 4.0]))
        assert loss == pytest.approx(2.5)
        np.testing.assert_allclose(grad, [1.0, -2.0])

    def test_zero_when_equal(self):
        x = np.random.default_rng(1).random((2, 1, 3, 3))
        loss, grad = mse_loss(x, x)
        assert loss == 0 and not grad.any()

    @settings(max_examples=20, deadline=None)
    @given(c=st.floats(-10, 10), seed=st.integers(0, 1000))
    def test_degree_two_homogeneous(self, c, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((2, 3, 4))
        assert mse_loss(c * a, c * b)[0] == pytest.approx(c * c * mse_loss(a, b)[0], rel=1e-9, abs=1e-12)

    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(2)
        out, tgt = rng.standard_normal((2, 2, 1, 3, 3))
        _, grad = mse_loss(out, tgt)
        h = 1e-6
        for i in np.ndindex(out.shape):
            e = np.zeros_like(out)
            e[i] = h
            fd = (mse_loss(out + e, tgt)[0] - mse_loss(out - e, tgt)[0]) / (2 * h)
            assert abs(fd - grad[i]) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(np.zeros(3), np.zeros(4))


class TestNetwork:
    def test_dense_hand_gradient(self):
        layer = Dense(2, 1, dtype=np.float64)
        layer.params[0][...] = [[2.0, -1.0]]
        layer.params[1][...] = 0.5
        net = Network([layer])
        x = np.array([[1.0, 3.0]])
        out = net.forward(x)  # 2 - 3 + 0.5 = -0.5
        assert out[0, 0] == -0.5
        _, g = mse_loss(out, np.array([[1.5]]))  # g = 2 * (-2) = -4
        dx = net.backward(g)
        np.testing.assert_allclose(layer.grads[0], [[-4.0, -12.0]])
        np.testing.assert_allclose(layer.grads[1], [-4.0])
        np.testing.assert_allclose(dx, [[-8.0, 4.0]])

    def test_concat_sources_must_be_earlier(self):
        with pytest.raises(ValueError, match="not earlier"):
            Network([Conv2D(1, 1), Concat([-1, 1])])

    def test_shape_error_names_layer_index(self):
        net = Network([Conv2D(1, 2), ReLU(), Conv2D(3, 1)])
        with pytest.raises(ValueError, match=r"layer 2: Conv2D\(3->1"):
            net.forward(np.zeros((1, 1, 4, 4)))

    def test_backward_before_forward(self):
        with pytest.raises(RuntimeError):
            Network([Dense(2, 2)]).backward(np.zeros((1, 2)))

    def test_zero_loss_gradient_gives_zero_grads(self):
        net = DenoiserArch(depth=3).build().initialize(np.random.default_rng(0))
        out = net.forward(np.random.default_rng(1).random((2, 1, 8, 8)))
        net.zero_grad()
        net.backward(np.zeros_like(out))
        assert all(not g.any() for g in net.grads)

    def test_debug_flags_nonfinite(self):
        layer = Dense(1, 1, dtype=np.float64)
        layer.params[0][...] = np.inf
        with pytest.raises(FloatingPointError, match="layer 0"):
            Network([layer], debug=True).forward(np.array([[1.0]]))

    def test_initialization_deterministic(self):
        a = DenoiserArch(depth=4).build().initialize(np.random.default_rng(3))
        b = DenoiserArch(depth=4).build().initialize(np.random.default_rng(3))
        assert network_bytes(a) == network_bytes(b)

    def test_he_limit_before_relu(self):
        net = Network([Dense(600, 50), ReLU(), Dense(50, 1)]).initialize(np.random.default_rng(0))
        w0, w1 = net.layers[0].params[0], net.layers[2].params[0]
        assert np.abs(w0).max() <= math.sqrt(6 / 600) and np.abs(w0).max() > 0.95 * math.sqrt(6 / 600)
        assert np.abs(w1).max() <= math.sqrt(6 / 51)


def mixed_network():
    # covers every layer kind, including a Concat that reaches back to the input
    return Network([
        Conv2D(1, 2, 3, 1),
        ELU(),
        Conv2D(2, 2, 3, 2),
        LeakyReLU(),
        Concat([-1, 1, 3]),
        Conv2D(5, 1, 1),
        ReLU(),
        Reshape((16,)),
        Dense(16, 4),
        Reshape((1, 2, 2)),
    ])


@pytest.mark.parametrize("factory", [
    mixed_network,
    lambda: DenoiserArch(depth=4).build(),
    lambda: Network([Dense(6, 5), ReLU(), Dense(5, 3)]),
])
def test_gradients_match_finite_differences(factory):
    rng = np.random.default_rng(7)
    net = factory().initialize(rng)
    for layer in net.layers:
        for b in layer.params[1:]:
            b[...] = rng.uniform(-0.1, 0.1, b.shape)
    x = rng.standard_normal((2, 1, 4, 4)) if isinstance(net.layers[0], Conv2D) else rng.standard_normal((2, 6))
    out = net.forward(x)
    target = rng.standard_normal(out.shape)
    checks = check_gradients(net, x, target, step=1e-5)
    assert checks and all(c.checked > 0 for c in checks)
    worst = max(c.rel_error for c in checks)
    assert worst < 1e-4, worst
    assert check_input_gradient(net, x, target, step=1e-5) < 1e-4


class TestOptimizers:
    def test_adam_first_step(self):
        p = [np.array([1.0])]
        state = AdamState(lr=0.001)
        adam_step(state, p, [np.array([2.0])])
        assert state.m[0][0] == pytest.approx(0.2, rel=1e-12)
        assert state.v[0][0] == pytest.approx(0.004, rel=1e-12)
        assert p[0][0] == pytest.approx(1 - 0.001 * 2 / math.sqrt(4 + 1e-8), abs=1e-9)

    def test_adam_defaults(self):
        s = AdamState()
        assert (s.lr, s.beta1, s.beta2, s.eps) == (1e-3, 0.9, 0.999, 1e-8)

    def test_adam_zero_gradient(self):
        p = [np.array([0.3, -1.0])]
        adam_step(AdamState(), p, [np.zeros(2)])
        np.testing.assert_array_equal(p[0], [0.3, -1.0])

    def test_adam_sign_equivariance(self):
        g = np.array([0.5, -2.0, 3.0])
        a, b = [np.zeros(3)], [np.zeros(3)]
        sa, sb = AdamState(), AdamState()
        for _ in range(3):
            adam_step(sa, a, [g])
            adam_step(sb, b, [-g])
        np.testing.assert_allclose(a[0], -b[0], rtol=1e-14)

    def test_adam_without_momentum_is_normalized_sgd(self):
        p = [np.array([1.0])]
        state = AdamState(lr=0.1, beta1=0.0, beta2=0.0)
        adam_step(state, p, [np.array([3.0])])
        assert p[0][0] == pytest.approx(1 - 0.1 * 3 / math.sqrt(9 + 1e-8), rel=1e-12)

    def test_fixed_bias_agrees_on_first_step_only(self):
        g = [np.array([0.7])]
        a, b = [np.array([0.0])], [np.array([0.0])]
        sa, sb = AdamState(), AdamState(fixed_bias=True)
        adam_step(sa, a, g)
        adam_step(sb, b, g)
        assert a[0][0] == b[0][0]
        adam_step(sa, a, g)
        adam_step(sb, b, g)
        assert a[0][0] != b[0][0]

    def test_adam_state_shape_mismatch(self):
        state = AdamState()
        adam_step(state, [np.zeros(2)], [np.ones(2)])
        with pytest.raises(ValueError):
            adam_step(state, [np.zeros(3)], [np.ones(3)])

    def test_sgd(self):
        p = [np.array([1.0, 2.0])]
        sgd_step(p, [np.array([0.5, -1.0])], 0.1)
        np.testing.assert_allclose(p[0], [0.95, 2.1])
        sgd_step(p, [np.array([9.0, 9.0])], 0.0)
        np.testing.assert_allclose(p[0], [0.95, 2.1])


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = mixed_network().initialize(np.random.default_rng(0))
        path = tmp_path / "net.ctn"
        save_network(path, net)
        loaded = load_network(path)
        assert [l.describe() for l in loaded.layers] == [l.describe() for l in net.layers]
        x = np.random.default_rng(1).standard_normal((2, 1, 4, 4))
        np.testing.assert_array_equal(loaded.forward(x), net.forward(x))
        assert network_bytes(loaded) == path.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ctn"
        path.write_bytes(b"XXXX" + bytes(12))
        with pytest.raises(CheckpointError):
            load_network(path)

    def test_truncated(self, tmp_path):
        raw = network_bytes(Network([Dense(3, 2)]))
        path = tmp_path / "short.ctn"
        path.write_bytes(raw[:-5])
        with pytest.raises(CheckpointError):
            load_network(path)


def test_denoiser_parameter_count():
    arch = DenoiserArch()
    net = arch.build()
    assert net.n_params() == arch.total_params() == 4818
    assert [l.dilation for l in net.layers if isinstance(l, Conv2D)][:12] == [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 1, 2]
