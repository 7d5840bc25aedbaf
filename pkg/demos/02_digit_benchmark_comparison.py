"""Class-incremental comparison on the small scikit-learn digits set.

The 8x8 digits arrive as 5 tasks of 2 classes each. A plain softmax net
("none") forgets everything but the last task; the per-class-VAE
generative classifier and streaming LDA are immune to the ordering, and
joint training shows the ceiling. Runs in well under a minute on a
laptop; needs scikit-learn for the data only.
"""

import time

import numpy as np
from sklearn.datasets import load_digits

from cilab import baselines
from cilab.harness import RunResult, compare, plot_results
from cilab.rng import Rng
from cilab.stream import Dataset, evaluate_accuracy, split_benchmark

digits = load_digits()
X = digits.data / 16.0
y = digits.target.astype(np.int64)
order = np.random.RandomState(0).permutation(len(X))
train = Dataset(X[order[:1437]], y[order[:1437]], "train", 10)
test = Dataset(X[order[1437:]], y[order[1437:]], "test", 10)

benchmark = split_benchmark("digits", num_classes=10, classes_per_task=2,
                            iterations_per_task=150, batch_size=32)
hp = {"lr": 0.001, "hidden": (100, 100)}

methods = [
    ("none", baselines.train_none, {}),
    ("joint", baselines.train_joint, {}),
    ("labels_trick", baselines.train_labels_trick, {}),
    ("cwr_plus", baselines.train_cwr_plus, {}),
    ("slda", baselines.train_slda, {}),
    ("generative_classifier", baselines.train_generative_classifier,
     {"latent_dim": 4, "gc_hidden": (32, 32), "sub_batch_size": 16, "S": 200}),
]

results = []
for name, train_fn, extra in methods:
    t0 = time.time()
    accs = []
    for seed in (0, 1, 2):
        predict, _ = train_fn(train, benchmark, seed, {**hp, **extra})
        accs.append(evaluate_accuracy(predict, test))
    results.append(RunResult(method=name, benchmark="digits", config_hash="demo",
                             seeds=[0, 1, 2], accuracies=accs,
                             wallclock_s=[time.time() - t0] * 3,
                             per_task_trace=[[], [], []], warnings={}))
    print(f"{name:24s} {np.mean(accs) * 100:6.2f}%   ({time.time() - t0:.1f}s)")

print()
print(compare(results))
plot_results(results, "digits_comparison.svg")
print("\nwrote digits_comparison.svg")
