import numpy as np
import pytest

from cilab import baselines
from cilab.baselines import (CWR, CWR_PLUS, CwrHead, DgrState, EwcState, SiState,
                             SoftmaxClassifier, cwr_task_end, cwr_task_start,
                             dgr_step, dgr_task_boundary, estimate_fisher_diag,
                             ewc_penalty, si_accumulate, si_consolidate, si_penalty,
                             snapshot_params, zeros_like_params)
from cilab.gradcheck import finite_diff_grads, max_rel_error
from cilab.nets import (IDENTITY, DenseNet, Layer, glorot_net,
                        masked_cross_entropy_batch, net_backward, net_forward)
from cilab.rng import Rng
from cilab.stream import make_synthetic_gaussian, split_benchmark


def params_equal(a, b):
    return all(np.array_equal(x[0], y[0]) and np.array_equal(x[1], y[1])
               for x, y in zip(a, b))


class TestFisher:
    def test_zero_inputs_zero_weight_fisher(self):
        net = glorot_net([3, 4, 2], Rng(1))
        fisher = estimate_fisher_diag(net, np.zeros((5, 3)), [0, 1])
        assert not fisher[0][0].any()   # first-layer weight entries see x^2 = 0

    def test_nonnegative(self):
        rng = Rng(2)
        net = glorot_net([4, 6, 3], rng)
        fisher = estimate_fisher_diag(net, rng.standard_normal((20, 4)), [0, 1, 2])
        for FW, Fb in fisher:
            assert (FW >= 0).all() and (Fb >= 0).all()

    def test_logistic_closed_form(self):
        # two-class linear scores w_c x + b_c: every fisher entry reduces to
        # E[p(1-p) x^2] for weights and E[p(1-p)] for biases
        W = np.array([[0.0, 0.7]])
        b = np.array([0.0, -0.2])
        net = DenseNet([Layer(W.copy(), b.copy(), IDENTITY)])
        X = np.array([[0.5], [-1.0], [2.0], [0.1]])
        fisher = estimate_fisher_diag(net, X, [0, 1])
        logits = X @ W + b
        p1 = 1.0 / (1.0 + np.exp(-(logits[:, 1] - logits[:, 0])))
        pq = p1 * (1 - p1)
        expected_w = float(np.mean(pq * X[:, 0] ** 2))
        expected_b = float(np.mean(pq))
        np.testing.assert_allclose(fisher[0][0], [[expected_w, expected_w]], atol=1e-10)
        np.testing.assert_allclose(fisher[0][1], [expected_b, expected_b], atol=1e-10)

    def test_against_per_sample_loop_oracle(self):
        rng = Rng(3)
        net = glorot_net([3, 5, 4], rng)
        X = rng.standard_normal((6, 3))
        active = [0, 2, 3]
        fisher = estimate_fisher_diag(net, X, active)
        ref = zeros_like_params(net)
        for x in X:
            out, cache = net_forward(net, x)
            sub = out[active]
            probs = np.exp(sub - sub.max())
            probs /= probs.sum()
            for ci, c in enumerate(active):
                g = np.zeros_like(out)
                g[active] = -probs
                g[c] += 1.0
                grads, _ = net_backward(net, cache, g)
                for (rW, rb), (dW, db) in zip(ref, grads):
                    rW += probs[ci] * dW ** 2
                    rb += probs[ci] * db ** 2
        for (rW, rb), (FW, Fb) in zip(ref, fisher):
            np.testing.assert_allclose(FW, rW / len(X), atol=1e-10)
            np.testing.assert_allclose(Fb, rb / len(X), atol=1e-10)

    def test_cap_subsamples(self):
        rng = Rng(4)
        net = glorot_net([3, 2], rng)
        X = rng.standard_normal((50, 3))
        full = estimate_fisher_diag(net, X, [0, 1])
        capped = estimate_fisher_diag(net, X, [0, 1], cap=10, rng=rng.derive("cap"))
        assert not params_equal(full, capped)


class TestEwcPenalty:
    def test_zero_at_anchor(self):
        net = glorot_net([3, 4, 2], Rng(5))
        ewc = EwcState(lam=1.0)
        fisher = [(np.ones_like(l.W), np.ones_like(l.b)) for l in net.layers]
        ewc.anchors.append((snapshot_params(net), fisher))
        loss, grads = ewc_penalty(ewc, net)
        assert loss == 0.0
        for gW, gb in grads:
            assert not gW.any() and not gb.any()

    def test_scalar_case(self):
        net = DenseNet([Layer(np.array([[3.0]]), np.array([0.0]), IDENTITY)])
        ewc = EwcState(lam=1.0)
        anchor = [(np.array([[1.0]]), np.array([0.0]))]
        fisher = [(np.array([[1.0]]), np.array([0.0]))]
        ewc.anchors.append((anchor, fisher))
        loss, grads = ewc_penalty(ewc, net)   # deviation 2, F = 1
        assert loss == pytest.approx(2.0)
        assert grads[0][0][0, 0] == pytest.approx(2.0)

    def test_sums_over_anchors(self):
        net = DenseNet([Layer(np.array([[2.0]]), np.array([0.0]), IDENTITY)])
        ewc = EwcState(lam=1.0)
        for anchor_val in (0.0, 1.0):
            ewc.anchors.append(([(np.array([[anchor_val]]), np.array([0.0]))],
                                [(np.array([[1.0]]), np.array([0.0]))]))
        loss, _ = ewc_penalty(ewc, net)
        assert loss == pytest.approx(0.5 * 4.0 + 0.5 * 1.0)


class TestSi:
    def scalar_net(self, w=1.0):
        return DenseNet([Layer(np.array([[w]]), np.array([0.0]), IDENTITY)])

    def test_zero_gradient_step_no_change(self):
        net = self.scalar_net()
        si = SiState(net, lam=1.0)
        before = snapshot_params(net)
        si_accumulate(si, before, snapshot_params(net),
                      [(np.zeros((1, 1)), np.zeros(1))])
        assert si.omega[0][0][0, 0] == 0.0

    def test_sign_convention(self):
        # parameter moved downhill by 0.001 against gradient +1: omega += 0.001
        net = self.scalar_net()
        si = SiState(net, lam=1.0)
        before = [(np.array([[1.0]]), np.array([0.0]))]
        after = [(np.array([[0.999]]), np.array([0.0]))]
        si_accumulate(si, before, after, [(np.array([[1.0]]), np.array([0.0]))])
        assert si.omega[0][0][0, 0] == pytest.approx(0.001)

    def test_five_step_trace(self):
        net = self.scalar_net()
        si = SiState(net, lam=1.0)
        thetas = [1.0, 0.8, 0.9, 0.7, 0.75, 0.6]
        grads = [0.5, -0.3, 0.8, -0.1, 0.4]
        acc = 0.0
        for t in range(5):
            si_accumulate(si, [(np.array([[thetas[t]]]), np.array([0.0]))],
                          [(np.array([[thetas[t + 1]]]), np.array([0.0]))],
                          [(np.array([[grads[t]]]), np.array([0.0]))])
            acc += (thetas[t + 1] - thetas[t]) * (-grads[t])
        assert si.omega[0][0][0, 0] == pytest.approx(acc, abs=1e-15)

    def test_consolidation_formula(self):
        net = self.scalar_net(w=2.0)   # task start snapshot at 2.0
        si = SiState(net, lam=1.0, xi=0.1)
        si.omega[0][0][0, 0] = 0.2
        net.layers[0].W[0, 0] = 3.0    # task ends with delta = 1
        si_consolidate(si, net)
        assert si.Omega[0][0][0, 0] == pytest.approx(0.2 / 1.1)
        assert si.omega[0][0][0, 0] == 0.0
        assert si.theta_prev_task[0][0][0, 0] == 3.0

    def test_zero_omega_keeps_Omega(self):
        net = self.scalar_net()
        si = SiState(net, lam=1.0)
        si.Omega[0][0][0, 0] = 5.0
        si_consolidate(si, net)
        assert si.Omega[0][0][0, 0] == 5.0

    def test_negative_omega_clamped(self):
        net = self.scalar_net(w=2.0)
        si = SiState(net, lam=1.0)
        si.omega[0][0][0, 0] = -4.0
        net.layers[0].W[0, 0] = 2.5
        si_consolidate(si, net)
        assert si.Omega[0][0][0, 0] == 0.0

    def test_penalty_scalar_case(self):
        net = self.scalar_net(w=1.5)   # drift 0.5 from anchor 1.0, Omega 2
        si = SiState(net, lam=1.0)
        si.theta_prev_task = [(np.array([[1.0]]), np.array([0.0]))]
        si.Omega[0][0][0, 0] = 2.0
        loss, grads = si_penalty(si, net)
        assert loss == pytest.approx(0.5)
        assert grads[0][0][0, 0] == pytest.approx(2.0)

    def test_penalty_zero_at_anchor(self):
        net = self.scalar_net()
        si = SiState(net, lam=1.0)
        si.theta_prev_task = snapshot_params(net)
        si.Omega[0][0][0, 0] = 3.0
        loss, _ = si_penalty(si, net)
        assert loss == 0.0

    def test_penalty_gradcheck(self):
        rng = Rng(16)
        net = glorot_net([3, 4, 2], rng)
        si = SiState(net, lam=1.0)
        si.theta_prev_task = [(l.W + 0.3, l.b - 0.2) for l in net.layers]
        for OW, Ob in si.Omega:
            OW += 0.7
            Ob += 1.3
        _, analytic = si_penalty(si, net)
        numeric = finite_diff_grads(lambda: si_penalty(si, net)[0], net)
        assert max_rel_error(analytic, numeric) < 1e-4

    def test_cap_modes(self):
        net = self.scalar_net(w=2.0)
        for mode, expected in (("min", 0.01), ("max", 5.0)):
            si = SiState(net, lam=1.0, omega_max=0.01, cap_mode=mode)
            si.Omega[0][0][0, 0] = 5.0
            OW, _ = si.effective_Omega(0)
            assert OW[0, 0] == expected

    def test_hidden_only_skips_head(self):
        net = glorot_net([3, 4, 2], Rng(17))
        si = SiState(net, lam=1.0, hidden_only=True)
        si.theta_prev_task = [(l.W + 1.0, l.b + 1.0) for l in net.layers]
        for OW, Ob in si.Omega:
            OW += 1.0
            Ob += 1.0
        _, grads = si_penalty(si, net)
        assert grads[0][0].any()          # hidden layer regularized
        assert not grads[-1][0].any()     # head untouched
        assert not grads[-1][1].any()


class TestCwrOps:
    def make(self, variant):
        net = glorot_net([4, 6, 5], Rng(30))
        head = CwrHead(net, variant)
        return net, head

    def test_plus_zeroes_live_head(self):
        net, head = self.make(CWR_PLUS)
        cwr_task_start(net, head, Rng(31))
        assert not net.layers[-1].W.any() and not net.layers[-1].b.any()

    def test_reinit_changes_live_head(self):
        net, head = self.make(CWR)
        before = net.layers[-1].W.copy()
        cw_before = head.cw_W.copy()
        cwr_task_start(net, head, Rng(32))
        assert not np.array_equal(net.layers[-1].W, before)
        np.testing.assert_array_equal(head.cw_W, cw_before)   # cw untouched

    def test_consolidation_isolation(self):
        net, head = self.make(CWR)
        net.layers[-1].W[...] = 1.0
        cwr_task_end(net, head, [0, 1], [0, 1])
        saved = head.cw_W[:, [0, 1]].copy()
        net.layers[-1].W[...] = 9.0
        cwr_task_end(net, head, [4], [0, 1, 4])   # a later task's classes
        np.testing.assert_array_equal(head.cw_W[:, [0, 1]], saved)
        assert (head.cw_W[:, 4] == 9.0).all()

    def test_plus_standardization_zeroes_equal_rows(self):
        net, head = self.make(CWR_PLUS)
        net.layers[-1].W[...] = 0.37    # identical columns for every class
        net.layers[-1].b[...] = -0.8
        cwr_task_end(net, head, [2, 3], [0, 1, 2, 3])
        assert np.abs(head.cw_W[:, [2, 3]]).max() == 0.0
        assert np.abs(head.cw_b[[2, 3]]).max() == 0.0

    def test_plus_separate_means_for_weights_and_biases(self):
        net, head = self.make(CWR_PLUS)
        net.layers[-1].W[...] = 0.0
        net.layers[-1].W[:, 0] = 1.0
        net.layers[-1].b[...] = np.array([4.0, 0.0, 0.0, 0.0, 0.0])
        cwr_task_end(net, head, [0], [0, 1])
        np.testing.assert_allclose(head.cw_W[:, 0], 1.0 - 0.5)
        assert head.cw_b[0] == pytest.approx(4.0 - 2.0)


class TestDgr:
    def small_dgr(self, seed=40):
        rng = Rng(seed)
        clf = SoftmaxClassifier(5, 4, hidden=(6,), lr=0.01, rng=rng)
        from cilab.vae import new_vae
        gen = new_vae(5, 2, (6,), rng.derive("gen"))
        return DgrState(clf, gen, lr=0.01)

    def test_first_task_is_pure_current_training(self):
        X = Rng(41).uniform(0, 1, (8, 5))
        y = np.asarray(Rng(42).integers(0, 2, 8))
        dgr = self.small_dgr()
        ref = self.small_dgr()
        dgr_step(dgr, X, y, [0, 1], [], Rng(43), Rng(44).derive("g"))
        # manual plain step on the reference classifier
        logits, cache = net_forward(ref.classifier.net, X)
        _, g_out = masked_cross_entropy_batch(logits, y, [0, 1])
        grads, _ = net_backward(ref.classifier.net, cache, g_out)
        from cilab.nets import adam_step
        adam_step(ref.classifier.adam, ref.classifier.net, grads)
        assert params_equal(snapshot_params(dgr.classifier.net),
                            snapshot_params(ref.classifier.net))

    def test_replay_weights_sum_to_one(self):
        for n_tasks in range(1, 6):
            w_cur = 1.0 / n_tasks
            assert w_cur + (1.0 - w_cur) == pytest.approx(1.0)

    def test_third_task_mixing(self):
        dgr = self.small_dgr()
        # two boundaries passed: current task is the third
        dgr_task_boundary(dgr)
        dgr_task_boundary(dgr)
        assert dgr.tasks_seen == 2
        X = Rng(45).uniform(0, 1, (6, 5))
        y = np.asarray(Rng(46).integers(0, 2, 6))
        ref = self.small_dgr()
        dgr_task_boundary(ref)
        dgr_task_boundary(ref)
        replay_rng, gen_rng = Rng(47), Rng(48).derive("g")
        # manual combined gradient with weights (1/3, 2/3)
        from cilab.vae import sample_batch, net_infer
        from cilab.nets import adam_step, as_active
        Xr = sample_batch(ref.frozen_generator, 6, Rng(47))
        prev = as_active([0, 1])
        yr = prev[np.argmax(net_infer(ref.frozen_classifier, Xr)[:, prev], axis=1)]
        logits, cache = net_forward(ref.classifier.net, X)
        _, g_cur = masked_cross_entropy_batch(logits, y, [0, 1, 2])
        g1, _ = net_backward(ref.classifier.net, cache, g_cur)
        logits_r, cache_r = net_forward(ref.classifier.net, Xr)
        _, g_rep = masked_cross_entropy_batch(logits_r, yr, [0, 1, 2])
        g2, _ = net_backward(ref.classifier.net, cache_r, g_rep)
        w_cur = 1.0 / 3.0
        w_rep = 1.0 - w_cur
        combined = [((w_cur * gW1 + w_rep * gW2), (w_cur * gb1 + w_rep * gb2))
                    for (gW1, gb1), (gW2, gb2) in zip(g1, g2)]
        adam_step(ref.classifier.adam, ref.classifier.net, combined)
        dgr_step(dgr, X, y, [0, 1, 2], [0, 1], replay_rng, gen_rng)
        assert params_equal(snapshot_params(dgr.classifier.net),
                            snapshot_params(ref.classifier.net))

    def test_boundary_snapshots(self):
        dgr = self.small_dgr()
        dgr_task_boundary(dgr)
        assert params_equal(snapshot_params(dgr.frozen_classifier),
                            snapshot_params(dgr.classifier.net))
        frozen_before = snapshot_params(dgr.frozen_classifier)
        # later training must not touch the frozen copy
        X = Rng(49).uniform(0, 1, (8, 5))
        y = np.asarray(Rng(50).integers(0, 2, 8))
        dgr_step(dgr, X, y, [0, 1], [0, 1], Rng(51), Rng(52).derive("g"))
        assert params_equal(snapshot_params(dgr.frozen_classifier), frozen_before)
        assert not params_equal(snapshot_params(dgr.classifier.net), frozen_before)
        dgr_task_boundary(dgr)   # second boundary reflects the newest model
        assert params_equal(snapshot_params(dgr.frozen_classifier),
                            snapshot_params(dgr.classifier.net))
        assert dgr.tasks_seen == 2


class TestGenDisc:
    def test_class_sampling_uniform(self):
        draws = Rng(60).integers(0, 10, 100_000)
        counts = np.bincount(draws, minlength=10)
        sigma = np.sqrt(100_000 * 0.1 * 0.9)
        assert np.abs(counts - 10_000).max() < 3 * sigma

    def test_memorized_points_are_learned(self):
        # degenerate generator: each class decodes to one fixed point
        from cilab.genclass import GenerativeClassifier
        from cilab.nets import DenseNet, Layer, IDENTITY
        from cilab.vae import VaeModel
        gc = GenerativeClassifier(input_dim=3, num_classes=3, latent_dim=2)
        points = np.array([[0.1, 0.1, 0.9], [0.9, 0.1, 0.1], [0.5, 0.9, 0.5]])
        for y, pt in enumerate(points):
            dec = DenseNet([Layer(np.zeros((2, 3)), pt.copy(), IDENTITY)])
            enc = DenseNet([Layer(np.zeros((3, 4)), np.zeros(4), IDENTITY)])
            gc.models[y] = VaeModel(enc, dec)
            gc.class_counts[y] = 1
        train = make_synthetic_gaussian(3, 3, 2.0, 30, Rng(61))
        bench = split_benchmark("tiny", 3, 1, 60, 16)
        predict, _ = baselines.train_discriminative_on_generated(
            gc, train, bench, 0, {"hidden": (8,), "lr": 0.01})
        np.testing.assert_array_equal(predict(points), [0, 1, 2])


class TestRunners:
    def setup_method(self):
        self.train = make_synthetic_gaussian(8, 4, 5.0, 300, Rng(70), split="train")
        self.test = make_synthetic_gaussian(8, 4, 5.0, 100, Rng(71), split="test")
        self.bench = split_benchmark("synth", 4, 2, 40, 16)
        self.hp = {"lr": 0.001, "hidden": (24,)}

    def accuracy(self, predict):
        return float(np.mean(predict(self.test.inputs) == self.test.labels))

    def test_none_collapses_to_final_task(self):
        predict, _ = baselines.train_none(self.train, self.bench, 0, self.hp)
        preds = predict(self.test.inputs)
        assert np.isin(preds, [2, 3]).mean() >= 0.95

    def test_single_task_none_is_plain_training(self):
        bench1 = split_benchmark("one", 4, 4, 400, 16)
        predict, _ = baselines.train_none(self.train, bench1, 0, self.hp)
        assert self.accuracy(predict) > 0.9

    def test_joint_learns_all_classes(self):
        predict, _ = baselines.train_joint(
            self.train, split_benchmark("synth", 4, 2, 200, 16), 0, self.hp)
        assert self.accuracy(predict) > 0.9

    def test_joint_determinism(self):
        a, _ = baselines.train_joint(self.train, self.bench, 3, self.hp)
        b, _ = baselines.train_joint(self.train, self.bench, 3, self.hp)
        np.testing.assert_array_equal(a(self.test.inputs), b(self.test.inputs))

    def test_labels_trick_beats_none(self):
        none_p, _ = baselines.train_none(self.train, self.bench, 0, self.hp)
        lt_p, _ = baselines.train_labels_trick(self.train, self.bench, 0, self.hp)
        assert self.accuracy(lt_p) > self.accuracy(none_p)

    def test_cwr_consolidated_head_isolation(self):
        # training the second task must leave the first task's consolidated
        # columns exactly as a run that stopped after task one wrote them
        _, info2 = baselines.train_cwr_plus(self.train, self.bench, 0, self.hp)
        bench1 = split_benchmark("synth", 2, 2, 40, 16)   # task 0 only
        _, info1 = baselines.train_cwr_plus(self.train, bench1, 0, self.hp)
        np.testing.assert_array_equal(info2["head"].cw_W[:, [0, 1]],
                                      info1["head"].cw_W[:, [0, 1]])
        np.testing.assert_array_equal(info2["head"].cw_b[[0, 1]],
                                      info1["head"].cw_b[[0, 1]])
        # and the later tasks' columns did get written
        assert info2["head"].cw_W[:, [2, 3]].any()

    def test_ewc_anchors_per_task(self):
        _, info = baselines.train_ewc(self.train, self.bench, 0,
                                      {**self.hp, "lam": 1.0, "fisher_n": 50})
        assert len(info["ewc"].anchors) == self.bench.num_tasks

    def test_si_consolidations_per_task(self):
        _, info = baselines.train_si(self.train, self.bench, 0,
                                     {**self.hp, "lam": 1.0})
        assert info["si"].consolidations == self.bench.num_tasks
        for OW, Ob in info["si"].Omega:
            assert (OW >= -1e-9).all() and (Ob >= -1e-9).all()

    def test_dgr_runs_and_mixes(self):
        predict, info = baselines.train_dgr(self.train, self.bench, 0,
                                            {**self.hp, "dgr_latent": 4,
                                             "dgr_hidden": (16,)})
        assert info["dgr"].tasks_seen == 2
        assert 0.0 <= self.accuracy(predict) <= 1.0
