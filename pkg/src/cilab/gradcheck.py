"""Central finite-difference gradients over DenseNet parameters.

Used by the self-test suite and the test suite as the independent oracle
against every hand-written backward pass.
"""

from __future__ import annotations

import numpy as np

from .nets import DenseNet


def finite_diff_grads(loss_fn, net: DenseNet, h: float = 1e-5):
    """Numeric gradients of loss_fn() with respect to every net parameter.

    loss_fn must be a pure function of the net's current parameters.
    Returns a list of (dW, db) arrays shaped like the parameters.
    """
    grads = []
    for layer in net.layers:
        dW = np.zeros_like(layer.W)
        for idx in np.ndindex(layer.W.shape):
            orig = layer.W[idx]
            layer.W[idx] = orig + h
            up = loss_fn()
            layer.W[idx] = orig - h
            down = loss_fn()
            layer.W[idx] = orig
            dW[idx] = (up - down) / (2.0 * h)
        db = np.zeros_like(layer.b)
        for idx in np.ndindex(layer.b.shape):
            orig = layer.b[idx]
            layer.b[idx] = orig + h
            up = loss_fn()
            layer.b[idx] = orig - h
            down = loss_fn()
            layer.b[idx] = orig
            db[idx] = (up - down) / (2.0 * h)
        grads.append((dW, db))
    return grads


def max_rel_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Worst relative disagreement between two gradient lists."""
    worst = 0.0
    for (aW, ab), (nW, nb) in zip(analytic, numeric):
        for a, n in ((aW, nW), (ab, nb)):
            denom = np.maximum(np.abs(a) + np.abs(n), floor)
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
