"""Built-in property and oracle checks, printed one PASS/FAIL line each.

These are the package's own verification routines, runnable anywhere the
package is installed (`cilab selftest`); they need no external data and
finish in a few minutes at the ci profile.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
import traceback

import numpy as np
from scipy.stats import multivariate_normal

from . import baselines, harness, nets, slda as slda_mod, stream, vae as vae_mod
from .exceptions import ProtocolError
from .gradcheck import finite_diff_grads, max_rel_error
from .genclass import GenerativeClassifier
from .numerics import gaussian_log_density, log_sum_exp, matmul
from .rng import Rng


def check_matmul_oracle():
    rng = Rng(11)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    ref = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                ref[i, j] += a[i, k] * b[k, j]
    assert np.allclose(matmul(a, b), ref, rtol=1e-12, atol=1e-12)


def check_log_sum_exp_bounds():
    rng = Rng(12)
    for trial in range(200):
        n = int(rng.integers(1, 12))
        v = rng.standard_normal(n) * float(rng.integers(1, 300))
        s = log_sum_exp(v)
        assert s >= np.max(v) - 1e-12
        assert s <= np.max(v) + np.log(n) + 1e-12
    assert abs(log_sum_exp(np.array([1000.0, 1000.0])) - (1000.0 + np.log(2.0))) < 1e-9


def check_density_normalization():
    xs = np.linspace(-8.0, 8.0, 20001)
    dens = np.exp([gaussian_log_density(np.array([x]), np.array([0.0]), 1.0) for x in xs])
    integral = np.trapezoid(dens, xs)
    assert abs(integral - 1.0) < 1e-6


def check_rng_streams():
    a = Rng(5, 9).standard_normal(64)
    b = Rng(5, 9).standard_normal(64)
    assert np.array_equal(a, b)
    c = Rng(5, 10).standard_normal(64)
    assert not np.array_equal(a, c)
    draws = Rng(5).derive("moments").standard_normal(100_000)
    assert abs(float(draws.mean())) < 0.02
    assert abs(float(draws.var()) - 1.0) < 0.03


def check_net_gradients():
    rng = Rng(13)
    net = nets.glorot_net([6, 9, 7, 5], rng.derive("net"))
    X = rng.standard_normal((4, 6))
    ys = np.array([0, 2, 1, 4])
    active = [0, 1, 2, 4]

    def loss_fn():
        out, _ = nets.net_forward(net, X)
        loss, _ = nets.masked_cross_entropy_batch(out, ys, active)
        return loss

    out, cache = nets.net_forward(net, X)
    _, g_out = nets.masked_cross_entropy_batch(out, ys, active)
    analytic, _ = nets.net_backward(net, cache, g_out)
    numeric = finite_diff_grads(loss_fn, net)
    assert max_rel_error(analytic, numeric) < 1e-4


def check_adam_recurrence():
    net = nets.DenseNet([nets.Layer(np.array([[1.0]]), np.array([0.0]), nets.IDENTITY)])
    adam = nets.AdamState(net, lr=0.1)
    gs = [0.3, -0.2, 0.05]
    m = v = 0.0
    theta = 1.0
    for t, g in enumerate(gs, start=1):
        nets.adam_step(adam, net, [(np.array([[g]]), np.array([0.0]))])
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert abs(net.layers[0].W[0, 0] - theta) < 1e-12


def check_elbo_gradients():
    rng = Rng(14)
    v = vae_mod.new_vae(4, 2, (3,), rng.derive("vae"))
    X = rng.uniform(0.0, 1.0, (3, 4))
    eps = rng.standard_normal((3, 2))

    _, enc_g, dec_g, _ = vae_mod.elbo_loss_and_grads(v, X, eps=eps)
    for net, analytic in ((v.encoder, enc_g), (v.decoder, dec_g)):
        numeric = finite_diff_grads(
            lambda: vae_mod.elbo_loss_and_grads(v, X, eps=eps)[0], net)
        assert max_rel_error(analytic, numeric) < 1e-4


def check_importance_estimator():
    # linear decoder mu(z) = Az + b has the closed-form marginal N(b, AA' + I)
    rng = Rng(15)
    A = np.array([[0.9, -0.3], [0.4, 0.8]])
    b = np.array([0.2, -0.1])
    dec = nets.DenseNet([nets.Layer(A.T.copy(), b.copy(), nets.IDENTITY)])
    enc = nets.DenseNet([nets.Layer(np.zeros((2, 4)), np.zeros(4), nets.IDENTITY)])
    v = vae_mod.VaeModel(enc, dec)
    x = np.array([0.5, 0.3])
    truth = multivariate_normal(mean=b, cov=A @ A.T + np.eye(2)).logpdf(x)
    est = vae_mod.importance_log_likelihood(v, x, 100_000, rng.derive("est"))
    assert abs(est - truth) < 0.05, f"estimator off by {abs(est - truth):.4f} nats"


def check_si_penalty_gradient():
    rng = Rng(16)
    net = nets.glorot_net([3, 4, 2], rng.derive("si-net"))
    si = baselines.SiState(net, lam=1.0)
    si.theta_prev_task = [(l.W + 0.3, l.b - 0.2) for l in net.layers]
    for (OW, Ob) in si.Omega:
        OW += 0.7
        Ob += 1.3
    _, analytic = baselines.si_penalty(si, net)
    numeric = finite_diff_grads(lambda: baselines.si_penalty(si, net)[0], net)
    assert max_rel_error(analytic, numeric) < 1e-4


def check_slda_against_scalar_oracle():
    rng = Rng(17)
    d, n = 5, 400
    X = rng.standard_normal((n, d))
    ys = np.asarray(rng.integers(0, 3, n))
    state = slda_mod.SldaState(d)
    state.phase = slda_mod.PHASE_STREAMING
    for k in range(0, n, 37):
        slda_mod.slda_observe_block(state, X[k:k + 37], ys[k:k + 37])
    # independent scalar recurrence
    mu = {}
    cnt = {}
    sigma = np.zeros((d, d))
    t = 0
    for x, y in zip(X, ys):
        y = int(y)
        if cnt.get(y, 0) == 0:
            mu[y] = x.copy()
            cnt[y] = 1
            sigma = sigma * (t / (t + 1.0))
            t += 1
            continue
        dev = x - mu[y]
        delta = (t / (t + 1.0)) * np.outer(dev, dev)
        sigma = (t * sigma + delta) / (t + 1.0)
        mu[y] = (cnt[y] * mu[y] + x) / (cnt[y] + 1)
        cnt[y] += 1
        t += 1
    assert max(float(np.max(np.abs(state.mu[y] - mu[y]))) for y in mu) < 1e-9
    assert float(np.max(np.abs(state.sigma - sigma))) < 1e-9


def check_slda_vs_batch_lda():
    rng = Rng(18)
    n = 500
    X0 = rng.derive("c0").standard_normal((n, 2)) + np.array([-2.0, 0.0])
    X1 = rng.derive("c1").standard_normal((n, 2)) + np.array([2.0, 1.0])
    state = slda_mod.SldaState(2)
    half = n // 2
    for x in X0[:half]:
        slda_mod.slda_observe(state, x, 0)
    for x in X1[:half]:
        slda_mod.slda_observe(state, x, 1)
    slda_mod.slda_init_covariance(
        state, (np.vstack([X0[:half], X1[:half]]),
                np.array([0] * half + [1] * half)))
    for x in X0[half:]:
        slda_mod.slda_observe(state, x, 0)
    for x in X1[half:]:
        slda_mod.slda_observe(state, x, 1)
    # closed-form LDA from batch means and pooled covariance
    m0, m1 = X0.mean(axis=0), X1.mean(axis=0)
    pooled = ((X0 - m0).T @ (X0 - m0) + (X1 - m1).T @ (X1 - m1)) / (2 * n)
    lam = np.linalg.inv(0.9999 * pooled + 1e-4 * np.eye(2))
    gx, gy = np.meshgrid(np.linspace(-5, 5, 40), np.linspace(-4, 5, 40))
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    ref_scores = np.column_stack([
        grid @ (lam @ m0) - 0.5 * m0 @ lam @ m0,
        grid @ (lam @ m1) - 0.5 * m1 @ lam @ m1])
    ref = np.argmax(ref_scores, axis=1)
    got = slda_mod.slda_predict(state, grid)
    agreement = float(np.mean(ref == got))
    assert agreement >= 0.99, f"grid agreement {agreement:.4f}"


def check_order_invariance():
    def run(order):
        rng = Rng(21)
        per_class = {0: rng.derive("data", 0).uniform(0, 1, (96, 6)),
                     1: rng.derive("data", 1).uniform(0, 1, (96, 6))}
        used = {0: 0, 1: 0}
        gc = GenerativeClassifier(input_dim=6, num_classes=2, latent_dim=2,
                                  hidden=(5,), sub_batch_size=16, rng=Rng(3))
        for y in order:
            gc.observe(stream.StreamEvent(x=per_class[y][used[y]], y=y))
            used[y] += 1
        return gc

    order_a = [0] * 96 + [1] * 96
    order_b = [0, 1] * 96
    gc_a = run(order_a)
    gc_b = run(order_b)
    for y in (0, 1):
        for la, lb in zip(gc_a.models[y].encoder.layers + gc_a.models[y].decoder.layers,
                          gc_b.models[y].encoder.layers + gc_b.models[y].decoder.layers):
            assert np.array_equal(la.W, lb.W) and np.array_equal(la.b, lb.b)


def check_protocol_rules():
    try:
        stream.check_compatible("ewc", stream.TASK_BASED_STREAMING)
    except ProtocolError:
        pass
    else:
        raise AssertionError("ewc must reject streaming protocols")
    ds = stream.make_synthetic_gaussian(4, 2, 3.0, 50, Rng(22))
    based = stream.split_benchmark("b", 2, 1, 5, 4, stream.TASK_BASED_BATCH)
    free = stream.split_benchmark("b", 2, 1, 5, 4, stream.TASK_FREE)
    ev_based = [e for e in stream.make_stream(ds, based, Rng(9)) if not e.boundary]
    ev_free = list(stream.make_stream(ds, free, Rng(9)))
    assert len(ev_based) == len(ev_free)
    for a, b in zip(ev_based, ev_free):
        assert np.array_equal(a.x, b.x) and a.y == b.y
        assert b.task_id is None and not b.boundary


def check_run_reproducibility():
    with tempfile.TemporaryDirectory() as tmp:
        csvs = []
        for attempt in range(2):
            cfg = harness.ExperimentConfig(
                method="slda", benchmark="synth", seeds=(0, 1), profile="ci",
                out_dir=os.path.join(tmp, f"try{attempt}"),
                bench={"iterations": 20, "n_per_class": 120})
            result = harness.run(cfg)
            rdir = harness._run_dir(cfg, result.config_hash)
            with open(os.path.join(rdir, "results.csv")) as f:
                rows = list(csv.reader(f))
            for row in rows[1:]:
                row[4] = "-"   # wall-clock column is the one allowed difference
            buf = io.StringIO()
            csv.writer(buf).writerows(rows)
            csvs.append(buf.getvalue())
        assert csvs[0] == csvs[1]


CHECKS = [
    ("matmul vs triple-loop oracle", check_matmul_oracle),
    ("log_sum_exp bounds and overflow", check_log_sum_exp_bounds),
    ("gaussian density integrates to 1", check_density_normalization),
    ("rng determinism and moments", check_rng_streams),
    ("classifier gradients vs finite differences", check_net_gradients),
    ("adam matches hand recurrence", check_adam_recurrence),
    ("vae loss gradients vs finite differences (frozen noise)", check_elbo_gradients),
    ("importance estimator vs analytic marginal", check_importance_estimator),
    ("quadratic penalty gradients vs finite differences", check_si_penalty_gradient),
    ("streaming lda vs scalar recurrence oracle", check_slda_against_scalar_oracle),
    ("streaming lda vs batch lda on a grid", check_slda_vs_batch_lda),
    ("per-class training is order invariant", check_order_invariance),
    ("protocol compatibility and stream projection", check_protocol_rules),
    ("run-to-run csv reproducibility", check_run_reproducibility),
]


def run_selftest(profile: str = "ci") -> int:
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
            print(f"PASS  {name}")
        except Exception:
            failures += 1
            print(f"FAIL  {name}")
            traceback.print_exc(limit=3)
    print(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return 1 if failures else 0
