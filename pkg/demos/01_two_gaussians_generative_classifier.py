"""Generative classification in its smallest form.

Two classes, each a 2-d Gaussian. One small VAE is trained per class on
that class's samples only, then a point is classified by asking each
model "how likely is this x under you?" (importance-sampled) and taking
the winner. No softmax, no joint training, no task boundaries.
"""

import numpy as np

from cilab.genclass import GenerativeClassifier
from cilab.rng import Rng

rng = Rng(100)
BOX = 7.0


def draw(cls, n, stream):
    center = 3.0 if cls else -3.0
    X = rng.derive("data", stream).standard_normal((n, 2)) + center
    return (np.clip(X, -BOX, BOX) + BOX) / (2 * BOX)   # rescale into [0,1]^2


# stream 500 optimizer steps' worth of samples per class into the classifier;
# the classes could arrive in any interleaving without changing the outcome
gc = GenerativeClassifier(input_dim=2, num_classes=2, latent_dim=2,
                          hidden=(16, 16), sub_batch_size=16, rng=Rng(1))
gc.observe_batch(np.vstack([draw(0, 8000, 0), draw(1, 8000, 1)]),
                 np.repeat([0, 1], 8000))
print(f"optimizer steps per class: "
      f"{ {y: t.updates_done for y, t in gc.trainers.items()} }")

X_test = np.vstack([draw(0, 500, 2), draw(1, 500, 3)])
y_test = np.repeat([0, 1], 500)

for S in (1, 10, 100):
    preds = gc.predict_batch(X_test, S, Rng(999))
    acc = float(np.mean(preds == y_test))
    print(f"importance samples S={S:3d}: held-out accuracy {acc * 100:.1f}%")

# peek at the per-class log-likelihoods for one point of class 1
x = X_test[-1]
scores = gc.log_scores(x, 100, Rng(7))
print("log p(x|y) for a class-1 point:",
      {y: round(v, 2) for y, v in scores.items()})
