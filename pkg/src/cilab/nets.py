"""Fully-connected networks with hand-written forward/backward passes.

Weights are stored (in, out) so a batch X of shape (B, in) flows as
``X @ W + b``.  The backward pass is a plain vector-Jacobian product: it
sums parameter gradients over whatever rows the caller put in the batch,
so loss functions own the 1/B mini-batch averaging.  The ReLU subgradient
at exactly 0 is 0.
"""

from __future__ import annotations

import struct

import numpy as np

from .exceptions import DomainError, FormatError, NumericError, ProtocolError, ShapeError, UsageError
from .rng import Rng

RELU = "relu"
IDENTITY = "identity"


class Layer:
    __slots__ = ("W", "b", "activation")

    def __init__(self, W: np.ndarray, b: np.ndarray, activation: str):
        if activation not in (RELU, IDENTITY):
            raise DomainError(f"unknown activation {activation!r}")
        if W.ndim != 2 or b.ndim != 1 or W.shape[1] != b.shape[0]:
            raise ShapeError(f"layer shapes W{W.shape} b{b.shape} do not line up")
        self.W = W
        self.b = b
        self.activation = activation


class DenseNet:
    """A stack of affine layers with relu/identity activations."""

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise DomainError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.W.shape[1] != nxt.W.shape[0]:
                raise ShapeError("consecutive layer widths do not line up")
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])


def glorot_net(dims: list[int], rng: Rng, activations: list[str] | None = None) -> DenseNet:
    """Network with uniform(+-sqrt(6/(fan_in+fan_out))) weights and zero biases.

    `dims` is [input, hidden..., output]; hidden layers default to relu and
    the final layer to identity.
    """
    if len(dims) < 2:
        raise DomainError("need at least input and output dims")
    n_layers = len(dims) - 1
    if activations is None:
        activations = [RELU] * (n_layers - 1) + [IDENTITY]
    if len(activations) != n_layers:
        raise ShapeError("one activation per layer required")
    layers = []
    for i in range(n_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, (fan_in, fan_out))
        b = np.zeros(fan_out)
        layers.append(Layer(W, b, activations[i]))
    return DenseNet(layers)


def net_forward(net: DenseNet, x: np.ndarray):
    """Forward pass; returns (output, cache) with cache feeding net_backward.

    Accepts a single (d,) vector or a (B, d) batch; the output matches.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.ndim != 2 or a.shape[1] != net.input_dim:
        raise ShapeError(f"input shape {x.shape} incompatible with input_dim {net.input_dim}")
    inputs = [a]       # a_0 .. a_{L-1}: what each layer consumed
    preacts = []       # z_1 .. z_L
    for layer in net.layers:
        z = a @ layer.W + layer.b
        preacts.append(z)
        a = np.maximum(z, 0.0) if layer.activation == RELU else z
        inputs.append(a)
    out = a[0] if single else a
    cache = {"inputs": inputs[:-1], "preacts": preacts, "single": single,
             "net_id": id(net), "batch": inputs[0].shape[0]}
    return out, cache


def net_backward(net: DenseNet, cache, grad_out: np.ndarray):
    """Backprop a gradient wrt the output; returns (param_grads, grad_input).

    param_grads is a list of (dW, db) per layer, summed over batch rows.
    grad_input has the same shape as the forward input, enabling chained
    networks (the decoder-into-encoder path of a VAE).
    """
    if cache.get("net_id") != id(net):
        raise UsageError("cache does not belong to this network")
    g = np.asarray(grad_out, dtype=np.float64)
    if cache["single"]:
        g = g[None, :]
    if g.shape != (cache["batch"], net.output_dim):
        raise UsageError(f"grad_out shape {grad_out.shape} does not match forward call")
    grads = [None] * len(net.layers)
    for l in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[l]
        if layer.activation == RELU:
            g = g * (cache["preacts"][l] > 0.0)
        dW = cache["inputs"][l].T @ g
        db = g.sum(axis=0)
        grads[l] = (dW, db)
        g = g @ layer.W.T
    grad_input = g[0] if cache["single"] else g
    return grads, grad_input


# --- masked softmax cross-entropy -----------------------------------------

def as_active(classes) -> np.ndarray:
    """Normalize a collection of class ids to a sorted unique int array."""
    a = np.unique(np.asarray(list(classes), dtype=np.int64))
    return a


def masked_cross_entropy(logits: np.ndarray, y: int, active) -> tuple[float, np.ndarray]:
    """Cross-entropy with softmax restricted to the active class ids.

    Inactive logits never influence the loss and receive zero gradient.
    """
    loss, grad = masked_cross_entropy_batch(np.asarray(logits)[None, :],
                                            np.array([y]), active)
    return loss, grad[0]


def masked_cross_entropy_batch(logits: np.ndarray, ys: np.ndarray, active):
    """Mean masked cross-entropy over a batch; grad includes the 1/B factor."""
    logits = np.asarray(logits, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64)
    active = as_active(active)
    if active.size == 0:
        raise ProtocolError("active class set is empty")
    pos = {int(c): i for i, c in enumerate(active)}
    if any(int(y) not in pos for y in ys):
        raise ProtocolError("label outside the active class set")
    B = logits.shape[0]
    sub = logits[:, active]                      # (B, A)
    m = sub.max(axis=1, keepdims=True)
    expd = np.exp(sub - m)
    Z = expd.sum(axis=1, keepdims=True)
    log_p = (sub - m) - np.log(Z)
    probs = expd / Z
    y_idx = np.array([pos[int(y)] for y in ys])
    loss = float(-log_p[np.arange(B), y_idx].mean())
    sub_grad = probs.copy()
    sub_grad[np.arange(B), y_idx] -= 1.0
    grad = np.zeros_like(logits)
    grad[:, active] = sub_grad / B
    return loss, grad


# --- Adam ------------------------------------------------------------------

class AdamState:
    """Adam accumulators mirroring a DenseNet's parameter shapes."""

    def __init__(self, net: DenseNet, lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in net.layers]
        self.v = [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in net.layers]


def adam_step(state: AdamState, net: DenseNet, grads) -> None:
    """One bias-corrected Adam update, in place.

    Aborts (raising NumericError) before touching any parameter if a
    gradient contains NaN/Inf, so the committed state stays finite.
    """
    for l, (gW, gb) in enumerate(grads):
        if not (np.all(np.isfinite(gW)) and np.all(np.isfinite(gb))):
            raise NumericError(f"non-finite gradient in layer {l}; step aborted")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for layer, (mW, mb), (vW, vb), (gW, gb) in zip(net.layers, state.m, state.v, grads):
        mW *= b1; mW += (1 - b1) * gW
        mb *= b1; mb += (1 - b1) * gb
        vW *= b2; vW += (1 - b2) * gW * gW
        vb *= b2; vb += (1 - b2) * gb * gb
        layer.W -= state.lr * (mW / c1) / (np.sqrt(vW / c2) + state.eps)
        layer.b -= state.lr * (mb / c1) / (np.sqrt(vb / c2) + state.eps)


# --- parameter snapshots -----------------------------------------------------

SNAPSHOT_HEADER = struct.Struct("<q")   # little-endian int64 per header field


def dense_net_bytes(net: DenseNet) -> bytes:
    """Snapshot block: int64-LE header (layer count, then rows/cols per
    layer) followed by each layer's W (row-major) and b as float64-LE."""
    parts = [SNAPSHOT_HEADER.pack(len(net.layers))]
    for layer in net.layers:
        parts.append(SNAPSHOT_HEADER.pack(layer.W.shape[0]))
        parts.append(SNAPSHOT_HEADER.pack(layer.W.shape[1]))
    for layer in net.layers:
        parts.append(layer.W.astype("<f8").tobytes())
        parts.append(layer.b.astype("<f8").tobytes())
    return b"".join(parts)


def read_dense_net(raw: bytes, offset: int = 0) -> tuple[DenseNet, int]:
    """Parse one snapshot block; returns the net and the offset past it.

    Hidden layers get relu, the final layer identity (the package-wide
    construction convention).
    """
    off = offset

    def read_i64():
        nonlocal off
        if off + 8 > len(raw):
            raise FormatError(f"truncated snapshot header at offset {off}")
        (val,) = SNAPSHOT_HEADER.unpack_from(raw, off)
        off += 8
        return val

    n_layers = read_i64()
    if not (1 <= n_layers <= 1_000_000):
        raise FormatError(f"implausible layer count {n_layers} at offset {offset}")
    shapes = [(read_i64(), read_i64()) for _ in range(n_layers)]
    layers = []
    for i, (rows, cols) in enumerate(shapes):
        need = (rows * cols + cols) * 8
        if off + need > len(raw):
            raise FormatError(f"truncated snapshot payload at offset {off}")
        W = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols).copy()
        off += rows * cols * 8
        b = np.frombuffer(raw, dtype="<f8", count=cols, offset=off).copy()
        off += cols * 8
        act = IDENTITY if i == n_layers - 1 else RELU
        layers.append(Layer(W, b, act))
    return DenseNet(layers), off


def save_dense_net(path, net: DenseNet) -> None:
    with open(path, "wb") as f:
        f.write(dense_net_bytes(net))


def load_dense_net(path) -> DenseNet:
    with open(path, "rb") as f:
        raw = f.read()
    net, off = read_dense_net(raw)
    if off != len(raw):
        raise FormatError(f"{len(raw) - off} trailing bytes after snapshot payload")
    return net
