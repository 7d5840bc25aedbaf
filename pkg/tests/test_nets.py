import numpy as np
import pytest

from cilab.exceptions import NumericError, ProtocolError, UsageError
from cilab.gradcheck import finite_diff_grads, max_rel_error
from cilab.nets import (IDENTITY, RELU, AdamState, DenseNet, Layer, adam_step,
                        glorot_net, load_dense_net, masked_cross_entropy,
                        masked_cross_entropy_batch, net_backward, net_forward,
                        save_dense_net)
from cilab.rng import Rng


def linear_net(W, b):
    return DenseNet([Layer(np.asarray(W, float), np.asarray(b, float), IDENTITY)])


class TestForward:
    def test_zero_net_outputs_zero(self):
        net = DenseNet([Layer(np.zeros((3, 4)), np.zeros(4), RELU),
                        Layer(np.zeros((4, 2)), np.zeros(2), IDENTITY)])
        out, _ = net_forward(net, np.array([1.0, -2.0, 3.0]))
        assert np.array_equal(out, np.zeros(2))

    def test_identity_layer(self):
        net = linear_net(np.eye(3), np.zeros(3))
        x = np.array([0.5, -1.5, 2.0])
        out, _ = net_forward(net, x)
        assert np.array_equal(out, x)

    def test_two_layer_composition_oracle(self):
        rng = Rng(1)
        net = glorot_net([4, 6, 3], rng)
        x = rng.standard_normal(4)
        h = np.maximum(x @ net.layers[0].W + net.layers[0].b, 0.0)
        ref = h @ net.layers[1].W + net.layers[1].b
        out, _ = net_forward(net, x)
        np.testing.assert_array_equal(out, ref)

    def test_batch_matches_rows(self):
        rng = Rng(2)
        net = glorot_net([5, 7, 2], rng)
        X = rng.standard_normal((4, 5))
        batch_out, _ = net_forward(net, X)
        for i in range(4):
            row_out, _ = net_forward(net, X[i])
            np.testing.assert_array_equal(batch_out[i], row_out)


class TestBackward:
    def test_zero_grad_out(self):
        net = glorot_net([3, 4, 2], Rng(3))
        _, cache = net_forward(net, np.ones(3))
        grads, gin = net_backward(net, cache, np.zeros(2))
        for dW, db in grads:
            assert not dW.any() and not db.any()
        assert not gin.any()

    def test_linear_scalar_case(self):
        # L = output of a 1-unit linear layer: dL/dW = x, dL/db = 1
        net = linear_net([[2.0], [3.0]], [0.1])
        x = np.array([0.4, -0.7])
        _, cache = net_forward(net, x)
        grads, _ = net_backward(net, cache, np.array([1.0]))
        np.testing.assert_allclose(grads[0][0][:, 0], x)
        assert grads[0][1][0] == 1.0

    def test_stale_cache_rejected(self):
        net_a = glorot_net([3, 2], Rng(4))
        net_b = glorot_net([3, 2], Rng(5))
        _, cache = net_forward(net_a, np.ones(3))
        with pytest.raises(UsageError):
            net_backward(net_b, cache, np.ones(2))

    @pytest.mark.parametrize("seed", range(4))
    def test_finite_difference_oracle(self, seed):
        rng = Rng(100 + seed)
        dims = [int(d) for d in rng.integers(2, 16, size=int(rng.integers(2, 4)) + 1)]
        net = glorot_net(dims, rng)
        X = rng.standard_normal((3, dims[0]))
        active = list(range(dims[-1]))
        ys = np.asarray(rng.integers(0, dims[-1], 3))

        def loss_fn():
            out, _ = net_forward(net, X)
            return masked_cross_entropy_batch(out, ys, active)[0]

        out, cache = net_forward(net, X)
        _, g_out = masked_cross_entropy_batch(out, ys, active)
        analytic, _ = net_backward(net, cache, g_out)
        numeric = finite_diff_grads(loss_fn, net)
        assert max_rel_error(analytic, numeric) < 1e-4

    def test_relu_subgradient_at_zero_is_zero(self):
        net = DenseNet([Layer(np.array([[1.0]]), np.array([0.0]), RELU)])
        _, cache = net_forward(net, np.array([0.0]))   # pre-activation exactly 0
        grads, gin = net_backward(net, cache, np.array([1.0]))
        assert gin[0] == 0.0 and grads[0][0][0, 0] == 0.0


class TestMaskedCrossEntropy:
    def test_two_equal_logits(self):
        loss, grad = masked_cross_entropy(np.zeros(2), 0, [0, 1])
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)
        np.testing.assert_allclose(grad, [-0.5, 0.5], atol=1e-12)

    def test_inactive_logits_ignored(self):
        logits = np.array([1.0, -2.0, 99.0, -99.0, 7.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        loss_a, grad_a = masked_cross_entropy(logits, 0, [0, 1])
        logits2 = logits.copy()
        logits2[2:] = -123.0
        loss_b, grad_b = masked_cross_entropy(logits2, 0, [0, 1])
        assert loss_a == loss_b
        np.testing.assert_array_equal(grad_a, grad_b)
        assert not grad_a[2:].any()

    def test_against_direct_softmax_oracle(self):
        rng = Rng(6)
        logits = rng.standard_normal(7)
        active = [0, 2, 3, 6]
        y = 3
        exps = np.exp(logits[active])
        ref = -np.log(exps[2] / exps.sum())
        loss, _ = masked_cross_entropy(logits, y, active)
        assert loss == pytest.approx(ref, abs=1e-12)

    def test_softmax_sums_to_one(self):
        rng = Rng(9)
        logits = rng.standard_normal((5, 8))
        ys = np.array([1, 3, 1, 5, 3])
        active = [1, 3, 5, 7]
        _, grad = masked_cross_entropy_batch(logits, ys, active)
        # grad rows are (p - onehot)/B over active entries: summing adds to 0
        np.testing.assert_allclose(grad.sum(axis=1), np.zeros(5), atol=1e-12)

    def test_label_outside_active(self):
        with pytest.raises(ProtocolError):
            masked_cross_entropy(np.zeros(4), 2, [0, 1])


class TestAdam:
    def test_first_step_is_signed_lr(self):
        net = linear_net([[1.0]], [0.0])
        adam = AdamState(net, lr=0.01)
        adam_step(adam, net, [(np.array([[0.37]]), np.array([0.0]))])
        assert net.layers[0].W[0, 0] == pytest.approx(1.0 - 0.01, abs=1e-6)

    def test_zero_grads_keep_params(self):
        net = glorot_net([3, 2], Rng(10))
        ref = [l.W.copy() for l in net.layers]
        adam = AdamState(net)
        for _ in range(5):
            adam_step(adam, net, [(np.zeros_like(l.W), np.zeros_like(l.b))
                                  for l in net.layers])
        for l, W in zip(net.layers, ref):
            np.testing.assert_array_equal(l.W, W)

    def test_three_step_trace_vs_recurrence(self):
        net = linear_net([[1.0]], [0.0])
        adam = AdamState(net, lr=0.1)
        m = v = 0.0
        theta = 1.0
        for t, g in enumerate([0.3, -0.2, 0.05], start=1):
            adam_step(adam, net, [(np.array([[g]]), np.array([0.0]))])
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            theta -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            assert net.layers[0].W[0, 0] == pytest.approx(theta, abs=1e-12)

    def test_nonfinite_grads_abort(self):
        net = linear_net([[1.0]], [0.0])
        adam = AdamState(net)
        with pytest.raises(NumericError):
            adam_step(adam, net, [(np.array([[np.nan]]), np.array([0.0]))])
        assert net.layers[0].W[0, 0] == 1.0   # untouched
        assert adam.t == 0

    def test_deterministic_trajectories(self):
        def train():
            rng = Rng(55)
            net = glorot_net([4, 6, 3], rng)
            adam = AdamState(net)
            X = rng.standard_normal((8, 4))
            ys = np.asarray(rng.integers(0, 3, 8))
            for _ in range(20):
                out, cache = net_forward(net, X)
                _, g = masked_cross_entropy_batch(out, ys, [0, 1, 2])
                grads, _ = net_backward(net, cache, g)
                adam_step(adam, net, grads)
            return [l.W.copy() for l in net.layers]

        a, b = train(), train()
        for wa, wb in zip(a, b):
            np.testing.assert_array_equal(wa, wb)


class TestSnapshots:
    def test_roundtrip(self, tmp_path):
        net = glorot_net([5, 8, 3], Rng(20))
        path = tmp_path / "net.bin"
        save_dense_net(path, net)
        back = load_dense_net(path)
        assert len(back.layers) == 2
        assert back.layers[0].activation == RELU
        assert back.layers[1].activation == IDENTITY
        for la, lb in zip(net.layers, back.layers):
            np.testing.assert_array_equal(la.W, lb.W)
            np.testing.assert_array_equal(la.b, lb.b)

    def test_truncated_file_rejected(self, tmp_path):
        net = glorot_net([4, 2], Rng(21))
        path = tmp_path / "net.bin"
        save_dense_net(path, net)
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        from cilab.exceptions import FormatError
        with pytest.raises(FormatError):
            load_dense_net(path)
