"""Per-class generative models with Bayes-rule classification.

One small VAE is trained per class, each consuming only its own class's
samples from its own named random stream.  Because nothing is shared,
the final parameters are bit-identical under any interleaving of classes
in the stream -- the class-incremental problem degenerates into one
independent density-estimation problem per class.

Classification estimates log p(x|y) for every class by importance
sampling and picks the class maximizing log p(x|y) + log p(y).
"""

from __future__ import annotations

import os

import numpy as np

from . import nets, vae as vae_mod
from .exceptions import DomainError, ManifestError
from .rng import Rng
from .stream import StreamEvent

DEFAULT_HIDDEN = (85, 85)
DEFAULT_LATENT = 5
DEFAULT_SUB_BATCH = 64

PRIOR_UNIFORM = "uniform"
PRIOR_COUNTED = "counted"


class ClassTrainer:
    """Owns one class's VAE, optimizer state, and pending-sample buffer."""

    def __init__(self, model: vae_mod.VaeModel, lr: float, sub_batch_size: int,
                 train_rng: Rng, recon_scale: str):
        self.model = model
        self.enc_adam = nets.AdamState(model.encoder, lr=lr)
        self.dec_adam = nets.AdamState(model.decoder, lr=lr)
        self.buffer = np.empty((sub_batch_size, model.input_dim))
        self.fill = 0
        self.updates_done = 0
        self.train_rng = train_rng
        self.recon_scale = recon_scale

    def _step(self) -> None:
        _, enc_g, dec_g, _ = vae_mod.elbo_loss_and_grads(
            self.model, self.buffer, rng=self.train_rng,
            recon_scale=self.recon_scale)
        nets.adam_step(self.enc_adam, self.model.encoder, enc_g)
        nets.adam_step(self.dec_adam, self.model.decoder, dec_g)
        self.updates_done += 1
        self.fill = 0

    def push(self, x: np.ndarray) -> None:
        self.buffer[self.fill] = x
        self.fill += 1
        if self.fill == len(self.buffer):
            self._step()

    def push_many(self, X: np.ndarray) -> None:
        """Buffer a run of same-class samples, stepping whenever it fills.

        Copies in slices but fires identical optimizer steps to sample-by-
        sample push calls, since steps depend only on this class's stream.
        """
        pos = 0
        while pos < len(X):
            take = min(len(self.buffer) - self.fill, len(X) - pos)
            self.buffer[self.fill:self.fill + take] = X[pos:pos + take]
            self.fill += take
            pos += take
            if self.fill == len(self.buffer):
                self._step()


class GenerativeClassifier:
    """Map from class id to a trained VAE plus class-prior counts."""

    def __init__(self, input_dim: int, num_classes: int,
                 latent_dim: int = DEFAULT_LATENT, hidden=DEFAULT_HIDDEN,
                 lr: float = 0.001, sub_batch_size: int = DEFAULT_SUB_BATCH,
                 prior_mode: str = PRIOR_UNIFORM,
                 recon_scale: str = vae_mod.RECON_SUM_SQ,
                 rng: Rng | None = None):
        if prior_mode not in (PRIOR_UNIFORM, PRIOR_COUNTED):
            raise DomainError(f"unknown prior mode {prior_mode!r}")
        self.input_dim = input_dim
        self.num_classes = num_classes
        self.latent_dim = latent_dim
        self.hidden = tuple(hidden)
        self.lr = lr
        self.sub_batch_size = sub_batch_size
        self.prior_mode = prior_mode
        self.recon_scale = recon_scale
        self.root_rng = rng if rng is not None else Rng(0)
        self.models: dict[int, vae_mod.VaeModel] = {}
        self.class_counts: dict[int, int] = {}
        self.trainers: dict[int, ClassTrainer] = {}

    # -- training -------------------------------------------------------

    def _trainer_for(self, y: int) -> ClassTrainer:
        tr = self.trainers.get(y)
        if tr is None:
            model = vae_mod.new_vae(self.input_dim, self.latent_dim, self.hidden,
                                    self.root_rng.derive("vae-init", y))
            tr = ClassTrainer(model, self.lr, self.sub_batch_size,
                              self.root_rng.derive("vae-train", y), self.recon_scale)
            self.trainers[y] = tr
            self.models[y] = model
        return tr

    def observe(self, event: StreamEvent) -> None:
        """Count the label and route the sample to its class's trainer.

        One optimizer step fires each time a class's buffer fills.
        Boundary events are ignored: this classifier needs no task markers.
        """
        if event.boundary:
            return
        y = int(event.y)
        self.class_counts[y] = self.class_counts.get(y, 0) + 1
        self._trainer_for(y).push(event.x)

    def observe_batch(self, X: np.ndarray, ys: np.ndarray) -> None:
        """Route a labelled batch class by class; equivalent to observing
        each sample in order (per-class trainers never see the interleaving)."""
        ys = np.asarray(ys, dtype=np.int64)
        for y in np.unique(ys):
            rows = ys == y
            y = int(y)
            self.class_counts[y] = self.class_counts.get(y, 0) + int(rows.sum())
            self._trainer_for(y).push_many(np.asarray(X, dtype=np.float64)[rows])

    # -- inference ------------------------------------------------------

    def class_log_prior(self, y: int) -> float:
        if self.prior_mode == PRIOR_UNIFORM:
            return float(-np.log(self.num_classes))
        n_y = self.class_counts.get(y, 0)
        total = sum(self.class_counts.values())
        if n_y == 0 or total == 0:
            raise DomainError(f"class {y} has no observations for a counted prior")
        return float(np.log(n_y / total))

    def known_classes(self) -> list[int]:
        return sorted(self.models)

    def log_scores(self, x: np.ndarray, S: int, rng: Rng, class_rng=None) -> dict[int, float]:
        """Per-class log p(x|y) (+ log prior under counted mode)."""
        if not self.models:
            raise DomainError("no trained class models")
        scores = {}
        for y in self.known_classes():
            r = class_rng(y) if class_rng is not None else rng.derive("class", y)
            ll = vae_mod.importance_log_likelihood(self.models[y], x, S, r)
            if self.prior_mode == PRIOR_COUNTED:
                ll += self.class_log_prior(y)
            scores[y] = ll
        return scores

    def classify(self, x: np.ndarray, S: int, rng: Rng, class_rng=None) -> int:
        """argmax_y log p(x|y) + log p(y); ties go to the lowest class id.

        Under a uniform prior the constant prior term is dropped.
        """
        scores = self.log_scores(x, S, rng, class_rng)
        classes = self.known_classes()
        vals = np.array([scores[y] for y in classes])
        return int(classes[int(np.argmax(vals))])

    def predict_batch(self, X: np.ndarray, S: int, rng: Rng) -> np.ndarray:
        """Vectorized classify: point i uses the same streams as
        classify(X[i], S, rng.derive("eval", i)) would."""
        X = np.asarray(X, dtype=np.float64)
        classes = self.known_classes()
        if not classes:
            raise DomainError("no trained class models")
        scores = np.empty((len(X), len(classes)))
        for ci, y in enumerate(classes):
            model = self.models[y]

            def point_rng(i, _y=y):
                return rng.derive("eval", i).derive("class", _y)

            ll = vae_mod.importance_log_likelihood_batch(model, X, S, point_rng)
            if self.prior_mode == PRIOR_COUNTED:
                ll = ll + self.class_log_prior(y)
            scores[:, ci] = ll
        return np.array(classes, dtype=np.int64)[np.argmax(scores, axis=1)]

    def warning_counts(self) -> dict[str, int]:
        clamps = sum(m.sigma_clamp_events for m in self.models.values())
        return {"sigma_clamps": clamps} if clamps else {}


# --- persistence ---------------------------------------------------------

MANIFEST_NAME = "manifest.txt"
_FORMAT_TAG = "cilab-generative-classifier-v1"


def save_generative_classifier(gc: GenerativeClassifier, out_dir) -> None:
    """One manifest plus one snapshot file per class (encoder block then
    decoder block, both in the dense-net snapshot format)."""
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"format = {_FORMAT_TAG}",
             f"input_dim = {gc.input_dim}",
             f"latent_dim = {gc.latent_dim}",
             f"num_classes = {gc.num_classes}",
             f"prior_mode = {gc.prior_mode}",
             f"hidden = {','.join(str(h) for h in gc.hidden)}",
             f"classes = {','.join(str(y) for y in gc.known_classes())}"]
    for y in gc.known_classes():
        lines.append(f"count_{y} = {gc.class_counts.get(y, 0)}")
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as f:
        f.write("\n".join(lines) + "\n")
    for y, model in gc.models.items():
        with open(os.path.join(out_dir, f"class_{y}.bin"), "wb") as f:
            f.write(nets.dense_net_bytes(model.encoder))
            f.write(nets.dense_net_bytes(model.decoder))


def load_generative_classifier(model_dir) -> GenerativeClassifier:
    path = os.path.join(model_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise ManifestError(f"no {MANIFEST_NAME} in {model_dir}")
    kv = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line and "=" in line:
                key, val = line.split("=", 1)
                kv[key.strip()] = val.strip()
    if kv.get("format") != _FORMAT_TAG:
        raise ManifestError(f"unexpected manifest format {kv.get('format')!r}")
    gc = GenerativeClassifier(
        input_dim=int(kv["input_dim"]), num_classes=int(kv["num_classes"]),
        latent_dim=int(kv["latent_dim"]),
        hidden=tuple(int(h) for h in kv["hidden"].split(",") if h),
        prior_mode=kv["prior_mode"])
    classes = [int(c) for c in kv["classes"].split(",") if c != ""]
    for y in classes:
        path = os.path.join(model_dir, f"class_{y}.bin")
        if not os.path.exists(path):
            raise ManifestError(f"manifest lists class {y} but {path} is missing")
        with open(path, "rb") as f:
            raw = f.read()
        encoder, off = nets.read_dense_net(raw)
        decoder, off = nets.read_dense_net(raw, off)
        if off != len(raw):
            raise ManifestError(f"{path}: {len(raw) - off} trailing bytes")
        gc.models[y] = vae_mod.VaeModel(encoder, decoder)
        gc.class_counts[y] = int(kv.get(f"count_{y}", 0))
    return gc


def sample_grid_array(gc: GenerativeClassifier, image_shape, rng: Rng,
                      per_class: int = 10) -> np.ndarray:
    """uint8 grid, one row of decoded prior samples per class."""
    h, w = image_shape
    classes = gc.known_classes()
    if not classes:
        raise ManifestError("no class models to sample from")
    grid = np.zeros((len(classes) * h, per_class * w))
    for row, y in enumerate(classes):
        draws = vae_mod.sample_batch(gc.models[y], per_class, rng.derive("grid", y))
        for col in range(per_class):
            grid[row * h:(row + 1) * h, col * w:(col + 1) * w] = draws[col].reshape(h, w)
    return np.clip(np.round(grid * 255.0), 0, 255).astype(np.uint8)
