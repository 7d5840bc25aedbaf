"""Full-scale 10-digit benchmark: every method, three seeds, one table.

Needs the MNIST IDX files (GENCLASS_DATA; scripts/fetch_mnist.py
downloads them) and several CPU-hours at full scale. Pass --ci for a
minutes-scale smoke version of the same pipeline.

Produces: a comparison table, per-run CSVs under the output directory, a
PGM grid of samples drawn from the per-class models, and an SVG of the
accuracy-vs-importance-samples sweep.
"""

import argparse
import os

import numpy as np

from cilab import harness
from cilab.genclass import load_generative_classifier
from cilab.harness import ExperimentConfig, config_hash
from cilab.rng import Rng
from cilab.stream import evaluate_accuracy

parser = argparse.ArgumentParser()
parser.add_argument("--out", default="mnist_results")
parser.add_argument("--seeds", default="0,1,2")
parser.add_argument("--ci", action="store_true", help="shrunk smoke-test settings")
args = parser.parse_args()

seeds = tuple(int(s) for s in args.seeds.split(","))
profile = "ci" if args.ci else "full"

METHODS = ["none", "joint", "labels_trick", "cwr", "cwr_plus", "ar1",
           "ewc", "si", "dgr", "slda", "generative_classifier", "gen_disc"]

results = []
gc_cfg = None
for method in METHODS:
    cfg = ExperimentConfig(method=method, benchmark="split_mnist", seeds=seeds,
                           profile=profile, out_dir=args.out)
    cfg.hp = {"S": 1000, "subsample": 2000}
    rdir = harness._run_dir(cfg, config_hash(cfg))
    if os.path.exists(os.path.join(rdir, "result.txt")):
        result = harness.load_result(rdir)           # reuse finished runs
    else:
        result = harness.run(cfg)
    results.append(result)
    print(f"{method:24s} {result.mean * 100:6.2f} (± {result.sem * 100:.2f})")
    if method == "generative_classifier":
        gc_cfg = cfg

print()
print(harness.compare(results))
harness.plot_results(results, os.path.join(args.out, "comparison.svg"))

# figure-style extras from the trained per-class models
model_dir = os.path.join(harness._run_dir(gc_cfg, config_hash(gc_cfg)),
                         "models", f"seed{seeds[0]}")
harness.sample_grid(model_dir, os.path.join(args.out, "class_samples.pgm"))

train, test = harness.load_benchmark_data(gc_cfg)
gc = load_generative_classifier(model_dir)
s_values = [1, 10, 100, 1000]
means = []
for S in s_values:
    eval_rng = Rng(seeds[0]).derive("evaluation")
    acc = evaluate_accuracy(lambda Z: gc.predict_batch(np.atleast_2d(Z), S, eval_rng),
                            test, subsample=2000,
                            rng=Rng(seeds[0]).derive("test-subsample"))
    means.append(acc * 100)
    print(f"S={S:5d}: {acc * 100:.2f}%")
harness.plot_sample_sweep(s_values, means, [0.0] * len(s_values),
                          os.path.join(args.out, "sample_sweep.svg"))
print(f"\nwrote comparison.svg, class_samples.pgm, sample_sweep.svg under {args.out}")
