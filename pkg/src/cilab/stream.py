"""Datasets, class-incremental stream generation, and evaluation metrics.

A benchmark fixes an ordered partition of the classes into tasks plus the
per-task iteration count and mini-batch size.  Within each task, samples
are drawn i.i.d. with replacement from that task's data; the resulting
event sequence is identical for the task-based and task-free protocols --
task-free merely erases task ids and boundary markers.
"""

from __future__ import annotations

import gzip
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, FormatError, ProtocolError, ShapeError
from .rng import Rng

TASK_BASED_BATCH = "task_based_batch"
TASK_BASED_STREAMING = "task_based_streaming"
TASK_FREE = "task_free"
PROTOCOLS = (TASK_BASED_BATCH, TASK_BASED_STREAMING, TASK_FREE)


@dataclass
class Dataset:
    inputs: np.ndarray          # (N, d) float64 in [0, 1]
    labels: np.ndarray          # (N,) int64
    split: str                  # "train" | "test"
    num_classes: int

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ShapeError("inputs and labels lengths differ")
        if len(self.labels) and int(self.labels.max()) >= self.num_classes:
            raise DomainError("label outside num_classes")

    def class_indices(self, y: int) -> np.ndarray:
        return np.flatnonzero(self.labels == y)


@dataclass
class Benchmark:
    name: str
    task_partition: list[tuple[int, ...]]   # ordered, disjoint, covers all classes
    iterations_per_task: int
    batch_size: int
    protocol: str = TASK_BASED_BATCH
    sampling: str = "replacement"           # or "epochs": shuffled passes, no replacement

    def __post_init__(self):
        flat = [c for cell in self.task_partition for c in cell]
        if len(set(flat)) != len(flat):
            raise ProtocolError("task partition cells overlap")
        if self.protocol not in PROTOCOLS:
            raise ProtocolError(f"unknown protocol {self.protocol!r}")

    @property
    def num_tasks(self) -> int:
        return len(self.task_partition)

    @property
    def all_classes(self) -> list[int]:
        return sorted(c for cell in self.task_partition for c in cell)

    def classes_through_task(self, t: int) -> list[int]:
        """Classes seen in tasks 0..t inclusive."""
        return sorted(c for cell in self.task_partition[: t + 1] for c in cell)


@dataclass
class StreamEvent:
    x: np.ndarray | None
    y: int | None
    task_id: int | None = None
    boundary: bool = False      # True: end-of-task marker carrying no sample


def split_benchmark(name: str, num_classes: int, classes_per_task: int,
                    iterations_per_task: int, batch_size: int,
                    protocol: str = TASK_BASED_BATCH) -> Benchmark:
    if num_classes % classes_per_task:
        raise ProtocolError("classes_per_task must divide num_classes")
    cells = [tuple(range(i, i + classes_per_task))
             for i in range(0, num_classes, classes_per_task)]
    return Benchmark(name, cells, iterations_per_task, batch_size, protocol)


def mnist_benchmark(protocol: str = TASK_BASED_BATCH) -> Benchmark:
    """The 10-digit split: 5 tasks x 2 classes, 2000 iterations, batch 128."""
    return split_benchmark("split_mnist", 10, 2, 2000, 128, protocol)


# --- IDX loading -------------------------------------------------------------

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


def _read_idx(path, expected_magic: int):
    opener = open
    with open(path, "rb") as probe:
        if probe.read(2) == b"\x1f\x8b":
            opener = gzip.open
    with opener(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header (only {len(raw)} bytes)")
    magic = int.from_bytes(raw[0:4], "big")
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at offset 0, "
                          f"expected 0x{expected_magic:08x}")
    count = int.from_bytes(raw[4:8], "big")
    if expected_magic == IDX_IMAGE_MAGIC:
        if len(raw) < 16:
            raise FormatError(f"{path}: truncated image header at offset 8")
        rows = int.from_bytes(raw[8:12], "big")
        cols = int.from_bytes(raw[12:16], "big")
        need = 16 + count * rows * cols
        if len(raw) < need:
            raise FormatError(f"{path}: truncated at offset {len(raw)}, need {need} bytes")
        data = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
        return data.reshape(count, rows * cols), (rows, cols)
    need = 8 + count
    if len(raw) < need:
        raise FormatError(f"{path}: truncated at offset {len(raw)}, need {need} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8), None


def load_mnist(train_images_path, train_labels_path,
               test_images_path, test_labels_path) -> tuple[Dataset, Dataset]:
    """Parse big-endian IDX files (plain or gzipped) into [0,1]-scaled datasets."""
    out = []
    for split, ipath, lpath in (("train", train_images_path, train_labels_path),
                                ("test", test_images_path, test_labels_path)):
        images, _ = _read_idx(ipath, IDX_IMAGE_MAGIC)
        labels, _ = _read_idx(lpath, IDX_LABEL_MAGIC)
        if len(images) != len(labels):
            raise FormatError(f"{split}: {len(images)} images vs {len(labels)} labels")
        out.append(Dataset(inputs=images.astype(np.float64) / 255.0,
                           labels=labels.astype(np.int64),
                           split=split, num_classes=10))
    return out[0], out[1]


# --- stream generation -------------------------------------------------------

def _task_indices(dataset: Dataset, benchmark: Benchmark, rng: Rng, task: int) -> np.ndarray:
    """Per-task sample indices, one per event, from the task's private stream."""
    cell = benchmark.task_partition[task]
    pool = np.flatnonzero(np.isin(dataset.labels, cell))
    if pool.size == 0:
        raise ProtocolError(f"task {task} has no samples for classes {cell}")
    total = benchmark.iterations_per_task * benchmark.batch_size
    trng = rng.derive("task-sampling", task)
    if benchmark.sampling == "epochs":
        reps = []
        drawn = 0
        while drawn < total:
            reps.append(pool[trng.permutation(pool.size)])
            drawn += pool.size
        return np.concatenate(reps)[:total]
    picks = trng.integers(0, pool.size, size=total)
    return pool[picks]


def iter_batches(dataset: Dataset, benchmark: Benchmark, rng: Rng):
    """Yield ("batch", task, X, y) tuples then one ("task_end", task) per task.

    Task-free protocols suppress the boundary tuples and report task=None.
    """
    task_free = benchmark.protocol == TASK_FREE
    for task in range(benchmark.num_tasks):
        idx = _task_indices(dataset, benchmark, rng, task)
        B = benchmark.batch_size
        for it in range(benchmark.iterations_per_task):
            sel = idx[it * B:(it + 1) * B]
            yield ("batch", None if task_free else task,
                   dataset.inputs[sel], dataset.labels[sel])
        if not task_free:
            yield ("task_end", task, None, None)


def make_stream(dataset: Dataset, benchmark: Benchmark, rng: Rng):
    """Per-sample StreamEvent generator over the same draws as iter_batches."""
    for kind, task, X, y in iter_batches(dataset, benchmark, rng):
        if kind == "task_end":
            yield StreamEvent(x=None, y=None, task_id=task, boundary=True)
            continue
        for i in range(len(y)):
            yield StreamEvent(x=X[i], y=int(y[i]), task_id=task)


# --- synthetic data ----------------------------------------------------------

def make_synthetic_gaussian(d: int, classes: int, mean_scale: float,
                            n_per_class: int, rng: Rng, split: str = "train") -> Dataset:
    """Axis-aligned Gaussian blobs rescaled into the unit box.

    Class c is drawn from N(mean_scale * u_c, I) where u_c is the basis
    vector e_{c mod d} with its sign flipped on each wrap-around, then
    clipped to [-box, box] and mapped affinely to [0, 1]^d.
    """
    if d < 1:
        raise DomainError("d must be >= 1")
    xs, ys = [], []
    for c in range(classes):
        mean = np.zeros(d)
        mean[c % d] = mean_scale * (-1.0 if (c // d) % 2 else 1.0)
        draws = rng.derive("synth", c).standard_normal((n_per_class, d)) + mean
        xs.append(draws)
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    X = np.concatenate(xs)
    box = abs(mean_scale) + 4.0
    X = (np.clip(X, -box, box) + box) / (2.0 * box)
    return Dataset(inputs=X, labels=np.concatenate(ys), split=split, num_classes=classes)


DATASET_HEADER_FIELDS = 3   # samples, feature dim, class count (int64-LE)


def save_dataset(dataset: Dataset, path) -> None:
    """Binary container: int64-LE header (N, dim, num_classes), then the
    inputs as float64-LE and the labels as int32-LE."""
    N, d = dataset.inputs.shape
    with open(path, "wb") as f:
        f.write(np.asarray([N, d, dataset.num_classes], dtype="<i8").tobytes())
        f.write(dataset.inputs.astype("<f8").tobytes())
        f.write(dataset.labels.astype("<i4").tobytes())


def load_dataset(path, split: str = "train") -> Dataset:
    with open(path, "rb") as f:
        raw = f.read()
    head = 8 * DATASET_HEADER_FIELDS
    if len(raw) < head:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    N, d, num_classes = (int(v) for v in np.frombuffer(raw, "<i8", DATASET_HEADER_FIELDS))
    need = head + N * d * 8 + N * 4
    if len(raw) != need:
        raise FormatError(f"{path}: {len(raw)} bytes, expected {need}")
    inputs = np.frombuffer(raw, "<f8", N * d, head).reshape(N, d).copy()
    labels = np.frombuffer(raw, "<i4", N, head + N * d * 8).astype(np.int64)
    return Dataset(inputs=inputs, labels=labels, split=split, num_classes=num_classes)


# --- evaluation ---------------------------------------------------------------

def subsample_stratified(test: Dataset, n: int, rng: Rng) -> np.ndarray:
    """Indices of ~n test points, proportionally allocated per class."""
    if n >= len(test.labels):
        return np.arange(len(test.labels))
    idx_parts = []
    total = len(test.labels)
    for c in range(test.num_classes):
        pool = test.class_indices(c)
        take = int(round(n * pool.size / total))
        take = min(max(take, 1 if pool.size else 0), pool.size)
        if take:
            order = rng.derive("subsample", c).permutation(pool.size)[:take]
            idx_parts.append(pool[order])
    return np.sort(np.concatenate(idx_parts))


def evaluate_accuracy(predict_fn, test: Dataset, subsample: int | None = None,
                      rng: Rng | None = None) -> float:
    """Fraction of correct predictions; predict_fn maps (N, d) -> (N,) labels."""
    if len(test.labels) == 0:
        raise DomainError("empty test set")
    if subsample is not None and subsample < len(test.labels):
        if rng is None:
            raise DomainError("subsampling requires an rng")
        idx = subsample_stratified(test, subsample, rng)
    else:
        idx = np.arange(len(test.labels))
    preds = np.asarray(predict_fn(test.inputs[idx]))
    return float(np.mean(preds == test.labels[idx]))


def aggregate_runs(accuracies) -> tuple[float, float]:
    """(mean, standard error of the mean); sem is 0 for a single run."""
    a = np.asarray(list(accuracies), dtype=np.float64)
    if a.size == 0:
        raise DomainError("no accuracies to aggregate")
    mean = float(a.mean())
    if a.size == 1 or np.all(a == a[0]):
        return mean, 0.0
    return mean, float(a.std(ddof=1) / np.sqrt(a.size))


# --- method/protocol compatibility --------------------------------------------

COMPATIBILITY: dict[str, tuple[str, ...]] = {
    "none": PROTOCOLS,
    "joint": PROTOCOLS,
    "ewc": (TASK_BASED_BATCH,),
    "si": (TASK_BASED_BATCH, TASK_BASED_STREAMING),
    "dgr": (TASK_BASED_BATCH, TASK_BASED_STREAMING),
    "labels_trick": (TASK_BASED_BATCH, TASK_BASED_STREAMING),
    "cwr": (TASK_BASED_BATCH, TASK_BASED_STREAMING),
    "cwr_plus": (TASK_BASED_BATCH, TASK_BASED_STREAMING),
    "ar1": (TASK_BASED_BATCH, TASK_BASED_STREAMING),
    "slda": PROTOCOLS,            # first-task covariance init is batch-wise
    "generative_classifier": PROTOCOLS,
    "gen_disc": PROTOCOLS,        # consumes a trained generative classifier
}


def check_compatible(method: str, protocol: str) -> None:
    if method not in COMPATIBILITY:
        raise ProtocolError(f"unknown method {method!r}")
    if protocol not in COMPATIBILITY[method]:
        raise ProtocolError(f"method {method!r} does not support protocol {protocol!r}")
