"""Rehearsal-free baselines sharing one fully-connected base network.

Every gradient-based method trains the same softmax classifier over the
same task stream; they differ only in which classes the softmax runs
over, what extra penalty joins the loss, and what happens at task
boundaries.  Evaluation is always single-headed: all classes compete.
"""

from __future__ import annotations

import numpy as np

from . import nets, vae as vae_mod
from .exceptions import DomainError
from .genclass import GenerativeClassifier
from .nets import AdamState, DenseNet, adam_step, as_active, glorot_net, masked_cross_entropy_batch, net_backward, net_forward
from .rng import Rng
from .stream import Benchmark, Dataset, iter_batches
from .vae import VaeModel, elbo_loss_and_grads, net_infer, new_vae, sample_batch

BASE_HIDDEN = (400, 400)
DGR_HIDDEN = (400, 400)
DGR_LATENT = 100


class SoftmaxClassifier:
    """Base network (input -> relu hiddens -> linear head) plus Adam state."""

    def __init__(self, input_dim: int, num_classes: int, hidden=BASE_HIDDEN,
                 lr: float = 0.001, rng: Rng | None = None):
        rng = rng if rng is not None else Rng(0)
        self.net = glorot_net([input_dim, *hidden, num_classes], rng.derive("classifier-init"))
        self.adam = AdamState(self.net, lr=lr)
        self.num_classes = num_classes

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(net_infer(self.net, np.atleast_2d(X)), axis=1)


def snapshot_params(net: DenseNet):
    return [(l.W.copy(), l.b.copy()) for l in net.layers]


def zeros_like_params(net: DenseNet):
    return [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in net.layers]


def add_scaled(acc, grads, scale: float):
    for (aW, ab), (gW, gb) in zip(acc, grads):
        aW += scale * gW
        ab += scale * gb
    return acc


def adam_step_masked(state: AdamState, net: DenseNet, grads, layer_mask) -> None:
    """Adam step that skips layers whose mask entry is False entirely
    (a frozen layer must not drift on stale momentum)."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for keep, layer, (mW, mb), (vW, vb), (gW, gb) in zip(
            layer_mask, net.layers, state.m, state.v, grads):
        if not keep:
            continue
        mW *= b1; mW += (1 - b1) * gW
        mb *= b1; mb += (1 - b1) * gb
        vW *= b2; vW += (1 - b2) * gW * gW
        vb *= b2; vb += (1 - b2) * gb * gb
        layer.W -= state.lr * (mW / c1) / (np.sqrt(vW / c2) + state.eps)
        layer.b -= state.lr * (mb / c1) / (np.sqrt(vb / c2) + state.eps)


# --- EWC ---------------------------------------------------------------------

class EwcState:
    """Post-task parameter anchors with diagonal Fisher importances."""

    def __init__(self, lam: float):
        self.lam = lam
        self.anchors: list[tuple[list, list]] = []   # (theta_hat, fisher) per task


def estimate_fisher_diag(net: DenseNet, X: np.ndarray, active, cap: int | None = None,
                         rng: Rng | None = None, chunk: int = 256):
    """Diagonal Fisher information at the current parameters.

    F_ii = mean over inputs of sum_c p(c|x) (d log p(c|x) / d theta_i)^2,
    with the sum over the active classes and p the model's own softmax.
    Per-sample squared gradients of a dense layer factor as the outer
    product of squared activations and squared deltas, so each (class,
    layer) pair costs one matrix product instead of a per-sample loop.
    """
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        raise DomainError("fisher estimation needs at least one sample")
    active = as_active(active)
    if cap is not None and cap > 0 and len(X) > cap:
        if rng is None:
            raise DomainError("capping the fisher set requires an rng")
        X = X[rng.permutation(len(X))[:cap]]
    N = len(X)
    L = len(net.layers)
    fisher = zeros_like_params(net)
    for start in range(0, N, chunk):
        xb = X[start:start + chunk]
        out, cache = net_forward(net, xb)
        sub = out[:, active]
        sub = sub - sub.max(axis=1, keepdims=True)
        probs = np.exp(sub)
        probs /= probs.sum(axis=1, keepdims=True)
        for ci in range(len(active)):
            g = np.zeros_like(out)
            g[:, active] = -probs
            g[:, active[ci]] += 1.0
            w = probs[:, ci]
            delta = g
            for l in range(L - 1, -1, -1):
                layer = net.layers[l]
                if layer.activation == nets.RELU:
                    delta = delta * (cache["preacts"][l] > 0.0)
                a = cache["inputs"][l]
                d2 = delta * delta
                fisher[l][0][...] += (a * a * w[:, None]).T @ d2
                fisher[l][1][...] += (d2 * w[:, None]).sum(axis=0)
                delta = delta @ layer.W.T
    for FW, Fb in fisher:
        FW /= N
        Fb /= N
    return fisher


def ewc_penalty(state: EwcState, net: DenseNet):
    """loss = sum_k 1/2 sum_i F_i^k (theta_i - anchor_i^k)^2, plus its gradient."""
    loss = 0.0
    grads = zeros_like_params(net)
    for theta_hat, fisher in state.anchors:
        for layer, (hW, hb), (FW, Fb), (gW, gb) in zip(net.layers, theta_hat, fisher, grads):
            dW = layer.W - hW
            db = layer.b - hb
            loss += 0.5 * (np.sum(FW * dW * dW) + np.sum(Fb * db * db))
            gW += FW * dW
            gb += Fb * db
    return loss, grads


# --- SI ----------------------------------------------------------------------

OMEGA_CAP_MIN = "min"   # cap: effective importance = min(Omega, omega_max)
OMEGA_CAP_MAX = "max"   # verbatim alternative kept behind this flag


class SiState:
    """Path-integral importance accumulators for synaptic consolidation."""

    def __init__(self, net: DenseNet, lam: float, xi: float = 0.1,
                 omega_max: float | None = None, cap_mode: str = OMEGA_CAP_MIN,
                 hidden_only: bool = False):
        if cap_mode not in (OMEGA_CAP_MIN, OMEGA_CAP_MAX):
            raise DomainError(f"unknown cap mode {cap_mode!r}")
        self.lam = lam
        self.xi = xi
        self.omega_max = omega_max
        self.cap_mode = cap_mode
        self.hidden_only = hidden_only
        self.omega = zeros_like_params(net)
        self.Omega = zeros_like_params(net)
        self.theta_task_start = snapshot_params(net)
        self.theta_prev_task = None     # set by the first consolidation
        self.consolidations = 0

    def _layer_used(self, l: int, n_layers: int) -> bool:
        return not (self.hidden_only and l == n_layers - 1)

    def effective_Omega(self, l: int):
        OW, Ob = self.Omega[l]
        if self.omega_max is None:
            return OW, Ob
        if self.cap_mode == OMEGA_CAP_MIN:
            return np.minimum(OW, self.omega_max), np.minimum(Ob, self.omega_max)
        return np.maximum(OW, self.omega_max), np.maximum(Ob, self.omega_max)


def si_accumulate(si: SiState, theta_before, theta_after, grads_total) -> None:
    """Per-step credit: omega_i += (theta_after - theta_before)_i * (-grad_i),
    with the gradient of the total loss used for that step."""
    for (oW, ob), (bW, bb), (aW, ab), (gW, gb) in zip(
            si.omega, theta_before, theta_after, grads_total):
        oW -= (aW - bW) * gW
        ob -= (ab - bb) * gb


def si_consolidate(si: SiState, net: DenseNet) -> None:
    """Fold omega into Omega at a task boundary:
    Omega_i += max(omega_i, 0) / (Delta_i^2 + xi), Delta = end - task start;
    then reset omega and advance both parameter snapshots."""
    n_layers = len(net.layers)
    for l, (layer, (sW, sb), (oW, ob), (OW, Ob)) in enumerate(
            zip(net.layers, si.theta_task_start, si.omega, si.Omega)):
        if si._layer_used(l, n_layers):
            dW = layer.W - sW
            db = layer.b - sb
            OW += np.maximum(oW, 0.0) / (dW * dW + si.xi)
            Ob += np.maximum(ob, 0.0) / (db * db + si.xi)
        oW[...] = 0.0
        ob[...] = 0.0
    si.theta_prev_task = snapshot_params(net)
    si.theta_task_start = snapshot_params(net)
    si.consolidations += 1


def si_penalty(si: SiState, net: DenseNet):
    """loss = sum_i Omega~_i (theta_i - prev_anchor_i)^2 plus its gradient."""
    loss = 0.0
    grads = zeros_like_params(net)
    if si.theta_prev_task is None:
        return loss, grads
    n_layers = len(net.layers)
    for l, (layer, (hW, hb), (gW, gb)) in enumerate(zip(net.layers, si.theta_prev_task, grads)):
        if not si._layer_used(l, n_layers):
            continue
        OW, Ob = si.effective_Omega(l)
        dW = layer.W - hW
        db = layer.b - hb
        loss += np.sum(OW * dW * dW) + np.sum(Ob * db * db)
        gW += 2.0 * OW * dW
        gb += 2.0 * Ob * db
    return loss, grads


# --- CWR family ----------------------------------------------------------------

CWR = "cwr"
CWR_PLUS = "cwr_plus"


class CwrHead:
    """Consolidated copy of the output layer; training runs on the live head."""

    def __init__(self, net: DenseNet, variant: str):
        if variant not in (CWR, CWR_PLUS):
            raise DomainError(f"unknown variant {variant!r}")
        head = net.layers[-1]
        self.variant = variant
        self.cw_W = np.zeros_like(head.W) if variant == CWR_PLUS else head.W.copy()
        self.cw_b = np.zeros_like(head.b) if variant == CWR_PLUS else head.b.copy()


def cwr_task_start(net: DenseNet, head: CwrHead, rng: Rng) -> None:
    """Reset the live (temporary) head: re-drawn for cwr, zeroed for cwr_plus."""
    live = net.layers[-1]
    if head.variant == CWR_PLUS:
        live.W[...] = 0.0
        live.b[...] = 0.0
    else:
        fan_in, fan_out = live.W.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        live.W[...] = rng.uniform(-limit, limit, live.W.shape)
        live.b[...] = 0.0


def cwr_task_end(net: DenseNet, head: CwrHead, task_classes, classes_seen) -> None:
    """Copy the live head's task-class columns into the consolidated head;
    cwr_plus first centers them on the mean over all classes seen so far
    (weights and biases centered separately)."""
    live = net.layers[-1]
    task_classes = as_active(task_classes)
    if head.variant == CWR_PLUS:
        seen = as_active(classes_seen)
        w_mean = live.W[:, seen].mean(axis=1)
        b_mean = live.b[seen].mean()
        head.cw_W[:, task_classes] = live.W[:, task_classes] - w_mean[:, None]
        head.cw_b[task_classes] = live.b[task_classes] - b_mean
    else:
        head.cw_W[:, task_classes] = live.W[:, task_classes]
        head.cw_b[task_classes] = live.b[task_classes]


def consolidated_net(net: DenseNet, head: CwrHead) -> DenseNet:
    out = net.copy()
    out.layers[-1].W[...] = head.cw_W
    out.layers[-1].b[...] = head.cw_b
    return out


# --- DGR -----------------------------------------------------------------------

class DgrState:
    """Classifier plus pixel-level generator with frozen previous-task copies."""

    def __init__(self, classifier: SoftmaxClassifier, generator: VaeModel, lr: float):
        self.classifier = classifier
        self.generator = generator
        self.gen_enc_adam = AdamState(generator.encoder, lr=lr)
        self.gen_dec_adam = AdamState(generator.decoder, lr=lr)
        self.frozen_classifier: DenseNet | None = None
        self.frozen_generator: VaeModel | None = None
        self.tasks_seen = 0


def dgr_task_boundary(state: DgrState) -> None:
    state.frozen_classifier = state.classifier.net.copy()
    state.frozen_generator = state.generator.copy()
    state.tasks_seen += 1


def dgr_step(state: DgrState, X: np.ndarray, y: np.ndarray, active_now,
             prev_classes, replay_rng: Rng, gen_rng: Rng) -> None:
    """One optimizer step each for classifier and generator.

    From the second task on, a replay batch the size of the current batch
    is drawn from the frozen generator and labelled by the frozen
    classifier over the classes seen before this task; both models mix
    current and replay losses with weights (1/N, 1 - 1/N) for N tasks so
    far including the current one.
    """
    clf = state.classifier
    N = state.tasks_seen + 1
    replay = state.tasks_seen >= 1

    logits, cache = net_forward(clf.net, X)
    _, g_out = masked_cross_entropy_batch(logits, y, active_now)
    clf_grads, _ = net_backward(clf.net, cache, g_out)
    _, enc_g, dec_g, _ = elbo_loss_and_grads(state.generator, X, rng=gen_rng)

    if replay:
        Xr = sample_batch(state.frozen_generator, len(X), replay_rng)
        frozen_logits = net_infer(state.frozen_classifier, Xr)
        prev = as_active(prev_classes)
        yr = prev[np.argmax(frozen_logits[:, prev], axis=1)]
        logits_r, cache_r = net_forward(clf.net, Xr)
        _, g_out_r = masked_cross_entropy_batch(logits_r, yr, active_now)
        clf_grads_r, _ = net_backward(clf.net, cache_r, g_out_r)
        _, enc_g_r, dec_g_r, _ = elbo_loss_and_grads(state.generator, Xr, rng=gen_rng)
        w_cur = 1.0 / N
        w_rep = 1.0 - w_cur
        clf_grads = add_scaled(add_scaled(zeros_like_params(clf.net), clf_grads, w_cur),
                               clf_grads_r, w_rep)
        enc_g = add_scaled(add_scaled(zeros_like_params(state.generator.encoder), enc_g, w_cur),
                           enc_g_r, w_rep)
        dec_g = add_scaled(add_scaled(zeros_like_params(state.generator.decoder), dec_g, w_cur),
                           dec_g_r, w_rep)

    adam_step(clf.adam, clf.net, clf_grads)
    adam_step(state.gen_enc_adam, state.generator.encoder, enc_g)
    adam_step(state.gen_dec_adam, state.generator.decoder, dec_g)


# --- method runners --------------------------------------------------------------
#
# Each train_* consumes the benchmark's batch stream for one seed and returns
# (predict_fn, info).  predict_fn maps an (N, d) array to predicted labels with
# every class active; info carries the trained artifact and any warnings.

def _expand_seen(seen: set, y: np.ndarray) -> list[int]:
    seen.update(int(c) for c in np.unique(y))
    return sorted(seen)


def train_none(train: Dataset, benchmark: Benchmark, seed: int, hp: dict,
               on_task_end=None):
    rng = Rng(seed)
    clf = SoftmaxClassifier(train.inputs.shape[1], train.num_classes,
                            hp.get("hidden", BASE_HIDDEN), hp.get("lr", 0.001), rng)
    seen: set = set()
    for kind, task, X, y in iter_batches(train, benchmark, rng):
        if kind == "task_end":
            if on_task_end:
                on_task_end(task, clf.predict)
            continue
        active = _expand_seen(seen, y)
        logits, cache = net_forward(clf.net, X)
        _, g_out = masked_cross_entropy_batch(logits, y, active)
        grads, _ = net_backward(clf.net, cache, g_out)
        adam_step(clf.adam, clf.net, grads)
    return clf.predict, {"model": clf}


def train_joint(train: Dataset, benchmark: Benchmark, seed: int, hp: dict,
                on_task_end=None):
    """Upper bound: same total iteration budget, batches drawn i.i.d. from
    all classes, all classes active from the start."""
    rng = Rng(seed)
    clf = SoftmaxClassifier(train.inputs.shape[1], train.num_classes,
                            hp.get("hidden", BASE_HIDDEN), hp.get("lr", 0.001), rng)
    active = list(range(train.num_classes))
    draw = rng.derive("joint-sampling")
    total = benchmark.num_tasks * benchmark.iterations_per_task
    for it in range(total):
        sel = draw.integers(0, len(train.inputs), size=benchmark.batch_size)
        X, y = train.inputs[sel], train.labels[sel]
        logits, cache = net_forward(clf.net, X)
        _, g_out = masked_cross_entropy_batch(logits, y, active)
        grads, _ = net_backward(clf.net, cache, g_out)
        adam_step(clf.adam, clf.net, grads)
        if on_task_end and (it + 1) % benchmark.iterations_per_task == 0:
            on_task_end((it + 1) // benchmark.iterations_per_task - 1, clf.predict)
    return clf.predict, {"model": clf}


def train_labels_trick(train: Dataset, benchmark: Benchmark, seed: int, hp: dict,
                       on_task_end=None):
    """Softmax restricted to the current task's classes during training."""
    rng = Rng(seed)
    clf = SoftmaxClassifier(train.inputs.shape[1], train.num_classes,
                            hp.get("hidden", BASE_HIDDEN), hp.get("lr", 0.001), rng)
    for kind, task, X, y in iter_batches(train, benchmark, rng):
        if kind == "task_end":
            if on_task_end:
                on_task_end(task, clf.predict)
            continue
        active = benchmark.task_partition[task]
        logits, cache = net_forward(clf.net, X)
        _, g_out = masked_cross_entropy_batch(logits, y, active)
        grads, _ = net_backward(clf.net, cache, g_out)
        adam_step(clf.adam, clf.net, grads)
    return clf.predict, {"model": clf}


def train_ewc(train: Dataset, benchmark: Benchmark, seed: int, hp: dict,
              on_task_end=None):
    rng = Rng(seed)
    clf = SoftmaxClassifier(train.inputs.shape[1], train.num_classes,
                            hp.get("hidden", BASE_HIDDEN), hp.get("lr", 0.001), rng)
    ewc = EwcState(lam=hp.get("lam", 1e6))
    fisher_n = int(hp.get("fisher_n", 0)) or None
    seen: set = set()
    for kind, task, X, y in iter_batches(train, benchmark, rng):
        if kind == "task_end":
            # batch access to the task's training data for the Fisher pass
            cell = benchmark.task_partition[task]
            task_X = train.inputs[np.isin(train.labels, cell)]
            fisher = estimate_fisher_diag(clf.net, task_X, sorted(seen), cap=fisher_n,
                                          rng=rng.derive("fisher", task))
            ewc.anchors.append((snapshot_params(clf.net), fisher))
            if on_task_end:
                on_task_end(task, clf.predict)
            continue
        active = _expand_seen(seen, y)
        logits, cache = net_forward(clf.net, X)
        _, g_out = masked_cross_entropy_batch(logits, y, active)
        grads, _ = net_backward(clf.net, cache, g_out)
        if ewc.anchors:
            _, pen_grads = ewc_penalty(ewc, clf.net)
            grads = add_scaled(grads, pen_grads, ewc.lam)
        adam_step(clf.adam, clf.net, grads)
    return clf.predict, {"model": clf, "ewc": ewc}


def train_si(train: Dataset, benchmark: Benchmark, seed: int, hp: dict,
             on_task_end=None):
    rng = Rng(seed)
    clf = SoftmaxClassifier(train.inputs.shape[1], train.num_classes,
                            hp.get("hidden", BASE_HIDDEN), hp.get("lr", 0.001), rng)
    si = SiState(clf.net, lam=hp.get("lam", 1e3), xi=hp.get("xi", 0.1))
    seen: set = set()
    for kind, task, X, y in iter_batches(train, benchmark, rng):
        if kind == "task_end":
            si_consolidate(si, clf.net)
            if on_task_end:
                on_task_end(task, clf.predict)
            continue
        active = _expand_seen(seen, y)
        logits, cache = net_forward(clf.net, X)
        _, g_out = masked_cross_entropy_batch(logits, y, active)
        grads, _ = net_backward(clf.net, cache, g_out)
        _, pen_grads = si_penalty(si, clf.net)
        grads = add_scaled(grads, pen_grads, si.lam)
        before = snapshot_params(clf.net)
        adam_step(clf.adam, clf.net, grads)
        si_accumulate(si, before, [(l.W, l.b) for l in clf.net.layers], grads)
    return clf.predict, {"model": clf, "si": si}


def _train_cwr_family(train: Dataset, benchmark: Benchmark, seed: int, hp: dict,
                      variant: str, use_ar1: bool, on_task_end=None):
    rng = Rng(seed)
    clf = SoftmaxClassifier(train.inputs.shape[1], train.num_classes,
                            hp.get("hidden", BASE_HIDDEN), hp.get("lr", 0.001), rng)
    head = CwrHead(clf.net, variant)
    si = None
    if use_ar1:
        si = SiState(clf.net, lam=hp.get("lam", 10.0), xi=hp.get("xi", 0.1),
                     omega_max=hp.get("omega_max", 0.01),
                     cap_mode=hp.get("omega_cap_mode", OMEGA_CAP_MIN),
                     hidden_only=True)
    n_layers = len(clf.net.layers)
    seen: set = set()
    head_rng = rng.derive("cwr-head")
    current_task = None
    for kind, task, X, y in iter_batches(train, benchmark, rng):
        if kind == "task_end":
            cwr_task_end(clf.net, head, benchmark.task_partition[task], sorted(seen))
            if si is not None:
                si_consolidate(si, clf.net)
            if on_task_end:
                eval_net = consolidated_net(clf.net, head)
                on_task_end(task, lambda Z, n=eval_net: np.argmax(net_infer(n, np.atleast_2d(Z)), axis=1))
            continue
        if task != current_task:
            current_task = task
            cwr_task_start(clf.net, head, head_rng.derive("task", task))
        active = _expand_seen(seen, y)
        logits, cache = net_forward(clf.net, X)
        _, g_out = masked_cross_entropy_batch(logits, y, active)
        grads, _ = net_backward(clf.net, cache, g_out)
        if si is not None:
            _, pen_grads = si_penalty(si, clf.net)
            grads = add_scaled(grads, pen_grads, si.lam)
            before = snapshot_params(clf.net)
        if not use_ar1 and task > 0:
            # hidden layers frozen after the first task; only the head moves
            mask = [False] * (n_layers - 1) + [True]
            adam_step_masked(clf.adam, clf.net, grads, mask)
        else:
            adam_step(clf.adam, clf.net, grads)
        if si is not None:
            si_accumulate(si, before, [(l.W, l.b) for l in clf.net.layers], grads)
    eval_net = consolidated_net(clf.net, head)
    predict = lambda Z: np.argmax(net_infer(eval_net, np.atleast_2d(Z)), axis=1)
    return predict, {"model": clf, "head": head, "si": si}


def train_cwr(train, benchmark, seed, hp, on_task_end=None):
    return _train_cwr_family(train, benchmark, seed, hp, CWR, False, on_task_end)


def train_cwr_plus(train, benchmark, seed, hp, on_task_end=None):
    return _train_cwr_family(train, benchmark, seed, hp, CWR_PLUS, False, on_task_end)


def train_ar1(train, benchmark, seed, hp, on_task_end=None):
    """CWR+ head handling plus capped path-integral regularization of the
    hidden layers, which keep training throughout."""
    return _train_cwr_family(train, benchmark, seed, hp, CWR_PLUS, True, on_task_end)


def train_dgr(train: Dataset, benchmark: Benchmark, seed: int, hp: dict,
              on_task_end=None):
    rng = Rng(seed)
    input_dim = train.inputs.shape[1]
    clf = SoftmaxClassifier(input_dim, train.num_classes,
                            hp.get("hidden", BASE_HIDDEN), hp.get("lr", 0.001), rng)
    generator = new_vae(input_dim, int(hp.get("dgr_latent", DGR_LATENT)),
                        hp.get("dgr_hidden", DGR_HIDDEN), rng.derive("dgr-generator"))
    dgr = DgrState(clf, generator, lr=hp.get("lr", 0.001))
    replay_rng = rng.derive("dgr-replay")
    gen_rng = rng.derive("dgr-gen-noise")
    seen: set = set()
    prev_classes: list[int] = []
    for kind, task, X, y in iter_batches(train, benchmark, rng):
        if kind == "task_end":
            dgr_task_boundary(dgr)
            prev_classes = sorted(seen)
            if on_task_end:
                on_task_end(task, clf.predict)
            continue
        active = _expand_seen(seen, y)
        dgr_step(dgr, X, y, active, prev_classes, replay_rng, gen_rng)
    return clf.predict, {"model": clf, "dgr": dgr}


def train_generative_classifier(train: Dataset, benchmark: Benchmark, seed: int,
                                hp: dict, on_task_end=None):
    rng = Rng(seed)
    gc = GenerativeClassifier(
        input_dim=train.inputs.shape[1], num_classes=train.num_classes,
        latent_dim=int(hp.get("latent_dim", 5)), hidden=hp.get("gc_hidden", (85, 85)),
        lr=hp.get("lr", 0.001), sub_batch_size=int(hp.get("sub_batch_size", 64)),
        prior_mode=hp.get("prior_mode", "uniform"),
        recon_scale=hp.get("recon_scale", vae_mod.RECON_SUM_SQ), rng=rng)
    S = int(hp.get("S", 10000))
    eval_rng = rng.derive("evaluation")
    for kind, task, X, y in iter_batches(train, benchmark, rng):
        if kind == "task_end":
            if on_task_end:
                on_task_end(task, lambda Z: gc.predict_batch(np.atleast_2d(Z), S, eval_rng))
            continue
        gc.observe_batch(X, y)
    predict = lambda Z: gc.predict_batch(np.atleast_2d(Z), S, eval_rng)
    return predict, {"model": gc, "warnings": gc.warning_counts()}


def train_slda(train: Dataset, benchmark: Benchmark, seed: int, hp: dict,
               on_task_end=None):
    from . import slda as slda_mod
    rng = Rng(seed)
    state = slda_mod.SldaState(train.inputs.shape[1], eps=hp.get("slda_eps", 1e-4),
                               bias_mode=hp.get("slda_bias", slda_mod.BIAS_STANDARD))
    init_cap = int(hp.get("slda_init_cap", 20000))
    task_free = benchmark.protocol == "task_free"
    init_buf: list[np.ndarray] = []
    init_ys: list[np.ndarray] = []
    buffered = 0
    for kind, task, X, y in iter_batches(train, benchmark, rng):
        if kind == "task_end":
            if state.phase == slda_mod.PHASE_COLLECTING:
                # batch-wise init on the first task's unique training data
                cell = benchmark.task_partition[task]
                mask = np.isin(train.labels, cell)
                slda_mod.slda_init_covariance(state, (train.inputs[mask], train.labels[mask]))
            if on_task_end:
                on_task_end(task, lambda Z: slda_mod.slda_predict(state, np.atleast_2d(Z)))
            continue
        if task_free and state.phase == slda_mod.PHASE_COLLECTING:
            take = min(len(X), init_cap - buffered)
            if take > 0:
                init_buf.append(X[:take])
                init_ys.append(y[:take])
                buffered += take
            slda_mod.slda_observe_block(state, X, y)
            if buffered >= init_cap:
                slda_mod.slda_init_covariance(
                    state, (np.concatenate(init_buf), np.concatenate(init_ys)))
                init_buf.clear()
                init_ys.clear()
            continue
        slda_mod.slda_observe_block(state, X, y)
    if state.phase == slda_mod.PHASE_COLLECTING:
        # streams too short to hit the cap still need an initialized covariance
        slda_mod.slda_init_covariance(state, (np.concatenate(init_buf), np.concatenate(init_ys))
                                      if init_buf else (train.inputs, train.labels))
    predict = lambda Z: slda_mod.slda_predict(state, np.atleast_2d(Z))
    return predict, {"model": state}


def train_discriminative_on_generated(gc: GenerativeClassifier, train: Dataset,
                                      benchmark: Benchmark, seed: int, hp: dict,
                                      on_task_end=None):
    """Train the base classifier i.i.d. on samples drawn from a trained
    generative classifier's per-class models, for the joint baseline's
    iteration budget; evaluation happens on real data."""
    rng = Rng(seed)
    clf = SoftmaxClassifier(train.inputs.shape[1], train.num_classes,
                            hp.get("hidden", BASE_HIDDEN), hp.get("lr", 0.001), rng)
    classes = np.asarray(gc.known_classes(), dtype=np.int64)
    active = [int(c) for c in classes]
    class_rng = rng.derive("gen-disc-classes")
    sample_rngs = {int(y): rng.derive("gen-disc-sample", int(y)) for y in classes}
    total = benchmark.num_tasks * benchmark.iterations_per_task
    B = benchmark.batch_size
    for it in range(total):
        y = classes[class_rng.integers(0, len(classes), size=B)]
        X = np.empty((B, gc.input_dim))
        for c in np.unique(y):
            rows = np.flatnonzero(y == c)
            X[rows] = sample_batch(gc.models[int(c)], len(rows), sample_rngs[int(c)])
        logits, cache = net_forward(clf.net, X)
        _, g_out = masked_cross_entropy_batch(logits, y, active)
        grads, _ = net_backward(clf.net, cache, g_out)
        adam_step(clf.adam, clf.net, grads)
        if on_task_end and (it + 1) % benchmark.iterations_per_task == 0:
            on_task_end((it + 1) // benchmark.iterations_per_task - 1, clf.predict)
    return clf.predict, {"model": clf}
