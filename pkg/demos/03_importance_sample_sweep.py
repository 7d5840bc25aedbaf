"""How many importance samples does classification need?

Likelihood estimates sharpen as the sample count S grows, so accuracy
typically rises and then saturates; even S=1 is usable. This sweeps S on
the digits benchmark and renders the accuracy curve on a log axis.
"""

import numpy as np
from sklearn.datasets import load_digits

from cilab.baselines import train_generative_classifier
from cilab.harness import plot_sample_sweep
from cilab.rng import Rng
from cilab.stream import Dataset, aggregate_runs, evaluate_accuracy, split_benchmark

digits = load_digits()
X = digits.data / 16.0
y = digits.target.astype(np.int64)
order = np.random.RandomState(0).permutation(len(X))
train = Dataset(X[order[:1437]], y[order[:1437]], "train", 10)
test = Dataset(X[order[1437:]], y[order[1437:]], "test", 10)
benchmark = split_benchmark("digits", 10, 2, 150, 32)

seeds = (0, 1)
models = []
for seed in seeds:
    _, info = train_generative_classifier(
        train, benchmark, seed,
        {"latent_dim": 4, "gc_hidden": (32, 32), "sub_batch_size": 16, "lr": 0.001})
    models.append(info["model"])

s_values = [1, 10, 100, 1000]
means, sems = [], []
for S in s_values:
    accs = []
    for seed, gc in zip(seeds, models):
        eval_rng = Rng(seed).derive("evaluation")
        accs.append(evaluate_accuracy(
            lambda Z: gc.predict_batch(np.atleast_2d(Z), S, eval_rng), test))
    mean, sem = aggregate_runs(accs)
    means.append(mean * 100)
    sems.append(sem * 100)
    print(f"S={S:5d}: {mean * 100:.2f}% (± {sem * 100:.2f})")

plot_sample_sweep(s_values, means, sems, "sample_sweep.svg")
print("wrote sample_sweep.svg")

# the density models are generators too: one row of decoded prior draws
# per class, rendered as a PGM grid
from cilab.genclass import sample_grid_array
from cilab.images import write_pgm

grid = sample_grid_array(models[0], (8, 8), Rng(5).derive("grid"))
write_pgm("digit_samples.pgm", grid)
print(f"wrote digit_samples.pgm ({grid.shape[0]}x{grid.shape[1]})")
