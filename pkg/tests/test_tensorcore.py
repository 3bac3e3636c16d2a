import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smallvoice import tensorcore as tc


def conv_loop_oracle(x, w, b, padding):
    """Triple-nested-loop convolution, the reference for conv1d."""
    c_out, c_in, k = w.shape
    pad = 1 if (padding == "same" and k == 3) else 0
    xp = np.pad(x, ((0, 0), (pad, pad)))
    t_out = x.shape[1] + 2 * pad - k + 1
    out = np.zeros((c_out, t_out))
    for c in range(c_out):
        for t in range(t_out):
            acc = b[c]
            for i in range(c_in):
                for j in range(k):
                    acc += w[c, i, j] * xp[i, t + j]
            out[c, t] = acc
    return out


def fd_gradient(f, x, h=1e-5):
    """Central finite differences of scalar f at array x."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


class TestConv1d:
    def test_identity_1x1(self, rng):
        x = tc.Node(rng.normal(size=(2, 6)))
        w = tc.Node(np.eye(2).reshape(2, 2, 1))
        b = tc.Node(np.zeros(2))
        out = tc.conv1d(x, w, b)
        assert np.array_equal(out.values, x.values)

    def test_delta_kernel(self, rng):
        x = tc.Node(rng.normal(size=(1, 7)))
        w = tc.Node(np.array([0.0, 1.0, 0.0]).reshape(1, 1, 3))
        b = tc.Node(np.zeros(1))
        out = tc.conv1d(x, w, b, padding="same")
        assert np.allclose(out.values, x.values, atol=0)

    def test_matches_loop_oracle(self, rng):
        x = tc.Node(rng.normal(size=(3, 8)))
        w = tc.Node(rng.normal(size=(4, 3, 3)))
        b = tc.Node(rng.normal(size=4))
        out = tc.conv1d(x, w, b, padding="same")
        ref = conv_loop_oracle(x.values, w.values, b.values, "same")
        assert np.abs(out.values - ref).max() < 1e-12

    @pytest.mark.parametrize("seed", range(8))
    @pytest.mark.parametrize("padding", ["same", "none"])
    def test_random_shapes_vs_oracle(self, seed, padding):
        rng = np.random.default_rng(seed)
        c_in = int(rng.integers(1, 9))
        c_out = int(rng.integers(1, 9))
        k = int(rng.choice([1, 3]))
        t = int(rng.integers(max(k, 2), 9))
        x = tc.Node(rng.normal(size=(c_in, t)))
        w = tc.Node(rng.normal(size=(c_out, c_in, k)))
        b = tc.Node(rng.normal(size=c_out))
        out = tc.conv1d(x, w, b, padding=padding)
        ref = conv_loop_oracle(x.values, w.values, b.values, padding)
        assert np.abs(out.values - ref).max() < 1e-12

    def test_shape_mismatch(self, rng):
        x = tc.Node(rng.normal(size=(3, 8)))
        with pytest.raises(tc.ShapeMismatch):
            tc.conv1d(x, tc.Node(rng.normal(size=(4, 2, 3))), tc.Node(np.zeros(4)))
        with pytest.raises(tc.ShapeMismatch):
            tc.conv1d(x, tc.Node(rng.normal(size=(4, 3, 5))), tc.Node(np.zeros(4)))
        with pytest.raises(tc.ShapeMismatch):
            tc.conv1d(x, tc.Node(rng.normal(size=(4, 3, 3))), tc.Node(np.zeros(2)))


class TestElu:
    def test_closed_forms(self):
        x = tc.Node(np.array([0.0, 2.0, -1.0]))
        out = tc.elu(x)
        assert out.values[0] == 0.0
        assert out.values[1] == 2.0
        assert abs(out.values[2] - (np.exp(-1.0) - 1.0)) < 1e-15

    def test_gradient(self, rng):
        x = tc.Node(rng.normal(size=(2, 5)))
        coeff = rng.normal(size=(2, 5))
        node = tc.elu(x)
        proxy = tc.Node(np.float64((node.values * coeff).sum()), (node,),
                        lambda d: (d * coeff,))
        tc.backward(proxy)
        fd = fd_gradient(lambda: (tc.elu(tc.Node(x.values)).values * coeff).sum(),
                         x.values)
        assert np.abs(x.grad - fd).max() < 1e-6


class TestDropout:
    def test_rate_zero_identity(self, rng):
        x = tc.Node(rng.normal(size=(3, 4)))
        out = tc.dropout(x, 0.0, True, np.random.default_rng(0))
        assert np.array_equal(out.values, x.values)

    def test_eval_identity(self, rng):
        x = tc.Node(rng.normal(size=(3, 4)))
        out = tc.dropout(x, 0.9, False, np.random.default_rng(0))
        assert np.array_equal(out.values, x.values)

    def test_monte_carlo(self):
        x = tc.Node(np.ones(10_000))
        out = tc.dropout(x, 0.5, True, np.random.default_rng(42))
        zero_fraction = float((out.values == 0).mean())
        assert abs(out.values.mean() - 1.0) < 0.05
        assert abs(zero_fraction - 0.5) < 0.02

    def test_invalid_rate(self, rng):
        x = tc.Node(np.ones(3))
        for rate in (-0.1, 1.0, 1.5):
            with pytest.raises(tc.InvalidRate):
                tc.dropout(x, rate, True, np.random.default_rng(0))


class TestAvgpool2:
    def test_hand_arithmetic(self):
        x = tc.Node(np.array([[1.0, 2.0, 3.0, 4.0]]))
        out, mask = tc.avgpool2(x, tc.FrameMask.full(4))
        assert np.array_equal(out.values, [[1.5, 3.5]])
        assert mask.count == 2

    def test_odd_length_drops_tail(self):
        x = tc.Node(np.array([[1.0, 2.0, 3.0]]))
        out, mask = tc.avgpool2(x, tc.FrameMask.full(3))
        assert np.array_equal(out.values, [[1.5]])
        assert len(mask) == 1

    def test_mask_pooling(self):
        x = tc.Node(np.zeros((1, 6)))
        _, mask = tc.avgpool2(x, tc.FrameMask.prefix(3, 6))
        # pairs (0,1) true, (2,3) half-real, (4,5) padding
        assert list(mask.flags) == [True, False, False]

    def test_gradient_fd(self, rng):
        x = tc.Node(rng.normal(size=(2, 7)))
        coeff = rng.normal(size=(2, 3))
        mask = tc.FrameMask.full(7)
        out, _ = tc.avgpool2(x, mask)
        proxy = tc.Node(np.float64((out.values * coeff).sum()), (out,),
                        lambda d: (d * coeff,))
        tc.backward(proxy)
        fd = fd_gradient(
            lambda: (tc.avgpool2(tc.Node(x.values), mask)[0].values * coeff).sum(),
            x.values,
        )
        assert np.abs(x.grad - fd).max() < 1e-6

    def test_too_short(self):
        with pytest.raises(tc.InputTooShort):
            tc.avgpool2(tc.Node(np.zeros((1, 1))), tc.FrameMask.full(1))

    @given(st.integers(min_value=2, max_value=64))
    def test_output_length(self, t):
        x = tc.Node(np.zeros((1, t)))
        out, _ = tc.avgpool2(x, tc.FrameMask.full(t))
        assert out.values.shape[1] == t // 2


class TestTemporalMaxpool:
    def test_basic(self):
        x = tc.Node(np.array([[1.0, 5.0, 2.0]]))
        out = tc.temporal_maxpool(x, tc.FrameMask.full(3))
        assert np.array_equal(out.values, [5.0])

    def test_tie_routes_to_first_frame(self):
        x = tc.Node(np.array([[3.0, 3.0, 3.0]]))
        out = tc.temporal_maxpool(x, tc.FrameMask.full(3))
        tc.backward(tc.pick(out, 0))
        assert np.array_equal(out.values, [3.0])
        assert np.array_equal(x.grad, [[1.0, 0.0, 0.0]])

    def test_masked_tail_excluded(self):
        x = tc.Node(np.array([[1.0, 9.0]]))
        out = tc.temporal_maxpool(x, tc.FrameMask.prefix(1, 2))
        assert np.array_equal(out.values, [1.0])

    def test_empty_mask(self):
        x = tc.Node(np.zeros((1, 2)))
        with pytest.raises(tc.EmptySequence):
            tc.temporal_maxpool(x, tc.FrameMask.prefix(0, 2))


class TestLinear:
    def test_identity(self, rng):
        x = tc.Node(rng.normal(size=5))
        out = tc.linear(x, tc.Node(np.eye(5)), tc.Node(np.zeros(5)))
        assert np.array_equal(out.values, x.values)

    def test_zero_weight_gives_bias(self, rng):
        b = rng.normal(size=3)
        out = tc.linear(tc.Node(rng.normal(size=4)),
                        tc.Node(np.zeros((3, 4))), tc.Node(b))
        assert np.array_equal(out.values, b)

    def test_matches_dot_oracle(self, rng):
        x = tc.Node(rng.normal(size=9))
        w = tc.Node(rng.normal(size=(5, 9)))
        b = tc.Node(rng.normal(size=5))
        out = tc.linear(x, w, b)
        ref = np.array([
            b.values[i] + sum(w.values[i, j] * x.values[j] for j in range(9))
            for i in range(5)
        ])
        assert np.abs(out.values - ref).max() < 1e-12

    def test_shape_mismatch(self, rng):
        with pytest.raises(tc.ShapeMismatch):
            tc.linear(tc.Node(np.zeros(4)), tc.Node(np.zeros((3, 5))),
                      tc.Node(np.zeros(3)))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss = tc.softmax_cross_entropy(tc.Node(np.zeros(3)), 1)
        assert abs(loss.values - np.log(3.0)) < 1e-12

    def test_saturated(self):
        loss = tc.softmax_cross_entropy(tc.Node(np.array([100.0, 0.0, 0.0])), 0)
        assert loss.values < 1e-6

    def test_gradient_fd(self, rng):
        logits = tc.Node(rng.normal(size=6))
        loss = tc.softmax_cross_entropy(logits, 2)
        tc.backward(loss)
        fd = fd_gradient(
            lambda: float(tc.softmax_cross_entropy(tc.Node(logits.values), 2).values),
            logits.values,
        )
        rel = np.abs(logits.grad - fd) / np.maximum(np.abs(fd), 1e-8)
        assert rel.max() < 1e-6

    def test_batch_mode_is_mean(self, rng):
        logits = rng.normal(size=(4, 5))
        targets = [0, 2, 4, 1]
        batched = tc.softmax_cross_entropy(tc.Node(logits), targets)
        singles = [
            float(tc.softmax_cross_entropy(tc.Node(logits[i]), targets[i]).values)
            for i in range(4)
        ]
        assert abs(batched.values - np.mean(singles)) < 1e-12

    def test_bad_target(self):
        with pytest.raises(tc.BadTarget):
            tc.softmax_cross_entropy(tc.Node(np.zeros(3)), 3)
        with pytest.raises(tc.BadTarget):
            tc.softmax_cross_entropy(tc.Node(np.zeros(3)), -1)

    @given(st.lists(st.floats(min_value=-30, max_value=30), min_size=2, max_size=10))
    @settings(max_examples=100)
    def test_softmax_simplex_and_nonneg_loss(self, logits):
        probs = tc.softmax(np.array(logits))
        assert abs(probs.sum() - 1.0) < 1e-12
        loss = tc.softmax_cross_entropy(tc.Node(np.array(logits)), 0)
        assert loss.values >= 0.0


class TestBackward:
    def test_identity_chain(self):
        x = tc.Node(np.float64(3.0))
        tc.backward(x)
        assert x.grad == 1.0

    def test_fanout_sums(self, rng):
        x = tc.Node(rng.normal(size=4))
        w1 = tc.Node(rng.normal(size=(1, 4)))
        w2 = tc.Node(rng.normal(size=(1, 4)))
        b = tc.Node(np.zeros(1))
        both = tc.concat([tc.linear(x, w1, b), tc.linear(x, w2, b)])
        total = tc.Node(np.float64(both.values.sum()), (both,),
                        lambda d: (np.full(2, d),))
        tc.backward(total)
        assert np.allclose(x.grad, (w1.values + w2.values).ravel(), atol=1e-14)

    def test_repeated_backward_accumulates(self):
        x = tc.Node(np.float64(2.0))
        y = tc.elu(x)
        tc.backward(y)
        tc.backward(y)
        assert x.grad == 2.0
        x.zero_grad()
        assert x.grad == 0.0

    def test_non_scalar_loss(self, rng):
        with pytest.raises(tc.NonScalarLoss):
            tc.backward(tc.Node(rng.normal(size=3)))


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        w = tc.Node(np.array([1.0, -2.0]))
        group = tc.ParameterGroup("g", w)
        state = tc.AdamState()
        tc.adam_step([group], state)
        assert np.array_equal(w.values, [1.0, -2.0])
        assert state.t == 1

    def test_first_step_is_lr_times_sign(self):
        w = tc.Node(np.array([0.5, -0.5]))
        w.grad[...] = np.array([0.3, -0.7])
        state = tc.AdamState(lr=1e-3)
        tc.adam_step([tc.ParameterGroup("g", w)], state)
        delta = w.values - np.array([0.5, -0.5])
        assert np.abs(delta - np.array([-1e-3, 1e-3])).max() < 1e-7
        assert np.array_equal(w.grad, np.zeros(2))

    def test_two_steps_match_scalar_oracle(self):
        g = 0.37
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        theta, m, v = 1.0, 0.0, 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            theta -= lr * mhat / (np.sqrt(vhat) + eps)

        w = tc.Node(np.array(1.0).reshape(()))
        state = tc.AdamState(lr=lr)
        for _ in range(2):
            w.grad[...] = g
            tc.adam_step([tc.ParameterGroup("g", w)], state)
        assert float(w.values) == theta
