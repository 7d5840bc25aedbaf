"""Streaming linear discriminant analysis on raw feature vectors.

Per-class means and counts update in a pure streaming manner.  The single
covariance matrix shared by all classes is initialized batch-wise on the
first task with an oracle-approximating shrinkage estimate, then updated
one sample at a time; prediction solves a ridge-stabilized SPD system for
the linear decision rule, never forming an explicit cofactor inverse.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .exceptions import DomainError, FormatError, ProtocolError, ShapeError

PHASE_COLLECTING = "collecting_first_task"
PHASE_STREAMING = "streaming"

BIAS_STANDARD = "standard"     # b_c = -1/2 mu_c' Lambda mu_c  (classic LDA)
BIAS_UNHALVED = "unhalved"     # b_c = +mu_c' Lambda mu_c      (kept for comparison)


class SldaState:
    """Class means/counts, shared streaming covariance, and solve cache."""

    def __init__(self, dim: int, eps: float = 1e-4, bias_mode: str = BIAS_STANDARD):
        if not 0.0 < eps < 1.0:
            raise DomainError("eps must be in (0, 1)")
        if bias_mode not in (BIAS_STANDARD, BIAS_UNHALVED):
            raise DomainError(f"unknown bias mode {bias_mode!r}")
        self.dim = dim
        self.mu: dict[int, np.ndarray] = {}
        self.n: dict[int, int] = {}
        self.sigma = np.zeros((dim, dim))
        self.t = 0
        self.eps = eps
        self.bias_mode = bias_mode
        self.phase = PHASE_COLLECTING
        self.new_class_events = 0      # first-of-class samples seen while streaming
        self._chol = None              # cached factor of (1-eps)*Sigma + eps*I

    def _check_dim(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ShapeError(f"sample shape {x.shape}, expected ({self.dim},)")
        return x

    def mark_dirty(self) -> None:
        self._chol = None


def slda_update_mean(state: SldaState, x: np.ndarray, y: int) -> None:
    """mu_y <- (n_y * mu_y + x) / (n_y + 1); n_y <- n_y + 1."""
    x = state._check_dim(x)
    n = state.n.get(y, 0)
    if n == 0:
        state.mu[y] = x.copy()
    else:
        state.mu[y] = (n * state.mu[y] + x) / (n + 1)
    state.n[y] = n + 1


def oas_shrunk_covariance(S: np.ndarray, n: int) -> tuple[np.ndarray, float]:
    """Shrink an empirical covariance (normalized by n) toward a scaled identity.

    rho = min(1, [(1-2/d) tr(S^2) + tr(S)^2] /
                 [(n+1-2/d) (tr(S^2) - tr(S)^2/d)])
    and the shrunk estimate is (1-rho) S + rho (tr(S)/d) I.
    """
    d = S.shape[0]
    tr_s = float(np.trace(S))
    tr_s2 = float(np.sum(S * S))   # = tr(S @ S) for symmetric S
    num = (1.0 - 2.0 / d) * tr_s2 + tr_s * tr_s
    den = (n + 1.0 - 2.0 / d) * (tr_s2 - tr_s * tr_s / d)
    rho = 1.0 if den <= 0.0 else min(1.0, num / den)
    shrunk = (1.0 - rho) * S
    shrunk.flat[:: d + 1] += rho * tr_s / d
    return shrunk, rho


def slda_init_covariance(state: SldaState, batch) -> float:
    """Batch-wise covariance init on the first task's data; returns the
    shrinkage weight.  `batch` is a sequence of (x, y) pairs or an (X, ys)
    tuple of arrays.  Samples are centered on the batch's per-class means.
    """
    if state.phase != PHASE_COLLECTING:
        raise ProtocolError("covariance already initialized")
    if isinstance(batch, tuple) and len(batch) == 2 and np.ndim(batch[0]) == 2:
        X = np.asarray(batch[0], dtype=np.float64)
        ys = np.asarray(batch[1], dtype=np.int64)
    else:
        X = np.asarray([x for x, _ in batch], dtype=np.float64)
        ys = np.asarray([y for _, y in batch], dtype=np.int64)
    n = len(X)
    if n < 2:
        raise DomainError("need at least 2 samples to initialize the covariance")
    centered = np.empty_like(X)
    for y in np.unique(ys):
        rows = ys == y
        centered[rows] = X[rows] - X[rows].mean(axis=0)
    S = centered.T @ centered / n
    state.sigma, rho = oas_shrunk_covariance(S, n)
    state.t = n
    state.phase = PHASE_STREAMING
    state.mark_dirty()
    return rho


def slda_update_covariance(state: SldaState, x: np.ndarray, y: int) -> None:
    """One streaming step: Sigma <- (t Sigma + Delta)/(t+1) with
    Delta = t/(t+1) (x - mu_y)(x - mu_y)' using the pre-update mean,
    then the mean update, then t <- t+1."""
    if state.phase != PHASE_STREAMING:
        raise ProtocolError("covariance not initialized yet")
    if state.n.get(y, 0) == 0:
        raise ProtocolError(f"class {y} has no mean yet; update the mean first")
    x = state._check_dim(x)
    t = state.t
    d = x - state.mu[y]
    delta = (t / (t + 1.0)) * np.outer(d, d)
    state.sigma = (t * state.sigma + delta) / (t + 1.0)
    slda_update_mean(state, x, y)
    state.t = t + 1
    state.mark_dirty()


def slda_observe(state: SldaState, x: np.ndarray, y: int) -> None:
    """Stream-facing per-sample update handling both phases.

    While collecting the first task only the means stream.  While
    streaming, a never-seen class applies the mean update first; its
    deviation is then zero, so the covariance just rescales by t/(t+1).
    """
    if state.phase == PHASE_COLLECTING:
        slda_update_mean(state, x, y)
        return
    if state.n.get(y, 0) == 0:
        slda_update_mean(state, x, y)
        t = state.t
        state.sigma = state.sigma * (t / (t + 1.0))
        state.t = t + 1
        state.new_class_events += 1
        state.mark_dirty()
        return
    slda_update_covariance(state, x, y)


def slda_observe_block(state: SldaState, X: np.ndarray, ys: np.ndarray) -> None:
    """Exactly the per-sample recurrence over a whole block, vectorized.

    The telescoped form Sigma_new = (t0 Sigma + sum_j w_j d_j d_j')/(t0+B)
    with w_j = (t0+j)/(t0+j+1) and d_j the deviation from the evolving
    pre-update class mean reproduces sequential slda_observe calls up to
    float round-off; the cross-product is one BLAS call per block.
    """
    X = np.asarray(X, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != state.dim:
        raise ShapeError(f"block shape {X.shape}, expected (B, {state.dim})")
    if state.phase == PHASE_COLLECTING:
        for y in np.unique(ys):
            rows = np.flatnonzero(ys == y)
            V = X[rows]
            n0 = state.n.get(y, 0)
            base = n0 * state.mu[y] if n0 else np.zeros(state.dim)
            state.mu[y] = (base + V.sum(axis=0)) / (n0 + len(V))
            state.n[y] = n0 + len(V)
        return
    B = len(X)
    devs = np.empty_like(X)
    for y in np.unique(ys):
        rows = np.flatnonzero(ys == y)
        V = X[rows]
        m = len(V)
        n0 = state.n.get(y, 0)
        cum = np.cumsum(V, axis=0)
        counts = n0 + np.arange(m, dtype=np.float64)
        pre = np.empty_like(V)
        if n0 == 0:
            pre[0] = V[0]                      # mean-first rule: deviation 0
            if m > 1:
                pre[1:] = cum[:-1] / counts[1:, None]
            state.new_class_events += 1
        else:
            pre[0] = state.mu[y]
            if m > 1:
                pre[1:] = (n0 * state.mu[y] + cum[:-1]) / counts[1:, None]
        devs[rows] = V - pre
        state.mu[y] = ((n0 * state.mu[y] if n0 else 0.0) + cum[-1]) / (n0 + m)
        state.n[y] = n0 + m
    t0 = state.t
    w = (t0 + np.arange(B, dtype=np.float64)) / (t0 + np.arange(B, dtype=np.float64) + 1.0)
    cross = (devs * w[:, None]).T @ devs
    state.sigma = (t0 * state.sigma + cross) / (t0 + B)
    state.sigma = 0.5 * (state.sigma + state.sigma.T)
    state.t = t0 + B
    state.mark_dirty()


def _factor(state: SldaState):
    if state._chol is None:
        A = (1.0 - state.eps) * state.sigma + state.eps * np.eye(state.dim)
        state._chol = cho_factor(A, lower=True)
    return state._chol


def slda_predict(state: SldaState, X: np.ndarray) -> np.ndarray:
    """argmax_c of w_c'x + b_c with w_c solving [(1-eps)Sigma + eps I] w = mu_c.

    Ties break toward the lowest class id.  Accepts one vector or a batch.
    """
    if state.phase != PHASE_STREAMING:
        raise ProtocolError("predict requires an initialized covariance")
    classes = sorted(y for y, n in state.n.items() if n > 0)
    if not classes:
        raise ProtocolError("no class has any observations")
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    M = np.stack([state.mu[y] for y in classes], axis=1)     # (d, C)
    W = cho_solve(_factor(state), M)                          # Lambda @ mu_c columns
    quad = np.sum(M * W, axis=0)                              # mu_c' Lambda mu_c
    b = -0.5 * quad if state.bias_mode == BIAS_STANDARD else quad
    scores = X @ W + b
    preds = np.asarray(classes, dtype=np.int64)[np.argmax(scores, axis=1)]
    return preds[0] if single else preds


# --- persistence ---------------------------------------------------------
#
# A directory holding manifest.txt (dim, classes, counts, t, eps, phase,
# bias mode) and state.bin: per-class means then the covariance, all
# float64 little-endian in manifest order.

MANIFEST_NAME = "manifest.txt"
STATE_NAME = "state.bin"
_FORMAT_TAG = "cilab-slda-v1"


def save_slda(state: SldaState, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    classes = sorted(state.n)
    lines = [f"format = {_FORMAT_TAG}",
             f"dim = {state.dim}",
             f"t = {state.t}",
             f"eps = {state.eps!r}",
             f"phase = {state.phase}",
             f"bias_mode = {state.bias_mode}",
             f"classes = {','.join(str(y) for y in classes)}"]
    for y in classes:
        lines.append(f"count_{y} = {state.n[y]}")
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as f:
        f.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, STATE_NAME), "wb") as f:
        for y in classes:
            f.write(state.mu[y].astype("<f8").tobytes())
        f.write(state.sigma.astype("<f8").tobytes())


def load_slda(in_dir) -> SldaState:
    mpath = os.path.join(in_dir, MANIFEST_NAME)
    if not os.path.exists(mpath):
        raise FormatError(f"no {MANIFEST_NAME} in {in_dir}")
    kv = {}
    with open(mpath) as f:
        for line in f:
            if "=" in line:
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
    if kv.get("format") != _FORMAT_TAG:
        raise FormatError(f"{mpath}: unexpected format {kv.get('format')!r}")
    dim = int(kv["dim"])
    state = SldaState(dim, eps=float(kv["eps"]), bias_mode=kv["bias_mode"])
    classes = [int(c) for c in kv["classes"].split(",") if c != ""]
    with open(os.path.join(in_dir, STATE_NAME), "rb") as f:
        raw = f.read()
    need = (len(classes) * dim + dim * dim) * 8
    if len(raw) != need:
        raise FormatError(f"{in_dir}/{STATE_NAME}: {len(raw)} bytes, expected {need}")
    off = 0
    for y in classes:
        state.mu[y] = np.frombuffer(raw, "<f8", dim, off).copy()
        state.n[y] = int(kv[f"count_{y}"])
        off += dim * 8
    state.sigma = np.frombuffer(raw, "<f8", dim * dim, off).reshape(dim, dim).copy()
    state.t = int(kv["t"])
    state.phase = kv["phase"]
    if state.phase not in (PHASE_COLLECTING, PHASE_STREAMING):
        raise FormatError(f"{mpath}: unknown phase {state.phase!r}")
    return state
