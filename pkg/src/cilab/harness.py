"""Experiment orchestration: configs, multi-seed runs, sweeps, tables, charts.

A run is fully determined by its effective configuration (method,
benchmark, hyperparameters, seeds); the configuration hashes to a stable
id under key reordering, and rerunning a config reproduces its accuracy
CSV byte for byte (wall-clock fields aside).
"""

from __future__ import annotations

import itertools
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from hashlib import sha256

import numpy as np

from . import baselines, genclass, images, stream, svgplot
from .exceptions import DomainError, ManifestError, UsageError
from .rng import Rng

PROFILE_FULL = "full"
PROFILE_CI = "ci"

# hyperparameter defaults; the split-benchmark defaults reproduce the
# shipped 10-digit configuration (2 hidden layers of 400, Adam 0.001,
# 5x2000x128 stream, selected regularizer strengths per method)
METHOD_DEFAULTS: dict[str, dict] = {
    "none": {},
    "joint": {},
    "labels_trick": {},
    "ewc": {"lam": 1e6, "fisher_n": 0},
    "si": {"lam": 1e3, "xi": 0.1},
    "cwr": {},
    "cwr_plus": {},
    "ar1": {"lam": 10.0, "omega_max": 0.01, "xi": 0.1, "omega_cap_mode": "min"},
    "dgr": {"dgr_latent": 100, "dgr_hidden": (400, 400)},
    "slda": {"slda_eps": 1e-4, "slda_bias": "standard", "slda_init_cap": 20000},
    "generative_classifier": {"latent_dim": 5, "gc_hidden": (85, 85),
                              "sub_batch_size": 64, "prior_mode": "uniform",
                              "recon_scale": "sum_sq", "S": 10000},
    "gen_disc": {"latent_dim": 5, "gc_hidden": (85, 85), "sub_batch_size": 64,
                 "prior_mode": "uniform", "recon_scale": "sum_sq"},
}
COMMON_DEFAULTS = {"lr": 0.001, "hidden": (400, 400), "S": 1000, "subsample": 0}

BENCHMARK_DEFAULTS = {
    "split_mnist": {"classes": 10, "classes_per_task": 2, "iterations": 2000,
                    "batch_size": 128},
    "synth": {"classes": 4, "classes_per_task": 2, "iterations": 100,
              "batch_size": 32, "dim": 16, "mean_scale": 4.0,
              "n_per_class": 500, "test_per_class": 250, "data_seed": 1234},
}

TRAINERS = {
    "none": baselines.train_none,
    "joint": baselines.train_joint,
    "labels_trick": baselines.train_labels_trick,
    "ewc": baselines.train_ewc,
    "si": baselines.train_si,
    "cwr": baselines.train_cwr,
    "cwr_plus": baselines.train_cwr_plus,
    "ar1": baselines.train_ar1,
    "dgr": baselines.train_dgr,
    "slda": baselines.train_slda,
    "generative_classifier": baselines.train_generative_classifier,
}

# fixed presentation order for comparison tables
TABLE_ORDER = [
    ("Baselines", "none"), ("Baselines", "joint"),
    ("Generative Replay", "dgr"),
    ("Regularization", "ewc"), ("Regularization", "si"),
    ("Bias-correction", "cwr"), ("Bias-correction", "cwr_plus"),
    ("Bias-correction", "ar1"), ("Bias-correction", "labels_trick"),
    ("Other", "slda"),
    ("Generative Classifier", "generative_classifier"),
    ("Generative Classifier", "gen_disc"),
]

CSV_HEADER = "method,benchmark,seed,accuracy,wallclock_s,config_hash"


@dataclass
class ExperimentConfig:
    method: str = "generative_classifier"
    benchmark: str = "split_mnist"
    protocol: str = stream.TASK_BASED_BATCH
    seeds: tuple[int, ...] = tuple(range(10))
    profile: str = PROFILE_FULL
    out_dir: str = "results"
    workers: int = 1
    trace: bool = False
    hp: dict = field(default_factory=dict)        # method hyperparameters
    bench: dict = field(default_factory=dict)     # benchmark overrides


@dataclass
class RunResult:
    method: str
    benchmark: str
    config_hash: str
    seeds: list[int]
    accuracies: list[float]
    wallclock_s: list[float]
    per_task_trace: list[list[float]]
    warnings: dict[str, int]

    @property
    def mean(self) -> float:
        return stream.aggregate_runs(self.accuracies)[0]

    @property
    def sem(self) -> float:
        return stream.aggregate_runs(self.accuracies)[1]


# --- configuration files ------------------------------------------------------

def _parse_scalar(text: str):
    text = text.strip()
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _parse_tuple(text: str, cast=int) -> tuple:
    return tuple(cast(p) for p in str(text).split(",") if p.strip() != "")


def parse_config_text(text: str) -> dict[str, dict]:
    """Flat `key = value` lines under [method] / [benchmark] / [run] headers."""
    sections: dict[str, dict] = {"method": {}, "benchmark": {}, "run": {}}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in sections:
                raise UsageError(f"line {lineno}: unknown section [{current}]")
            continue
        if "=" not in line or current is None:
            raise UsageError(f"line {lineno}: expected `key = value` inside a section")
        key, val = line.split("=", 1)
        sections[current][key.strip()] = _parse_scalar(val)
    return sections


def config_from_sections(sections: dict[str, dict]) -> ExperimentConfig:
    method = str(sections["method"].get("name", "generative_classifier"))
    if method not in METHOD_DEFAULTS:
        raise UsageError(f"unknown method {method!r}")
    bench_name = str(sections["benchmark"].get("name", "split_mnist"))
    if bench_name not in BENCHMARK_DEFAULTS:
        raise UsageError(f"unknown benchmark {bench_name!r}")
    run_sec = sections["run"]
    cfg = ExperimentConfig(method=method, benchmark=bench_name)
    cfg.protocol = str(sections["benchmark"].get("protocol", cfg.protocol))
    if "seeds" in run_sec:
        cfg.seeds = _parse_tuple(run_sec["seeds"], int)
    cfg.profile = str(run_sec.get("profile", cfg.profile))
    cfg.out_dir = str(run_sec.get("out", cfg.out_dir))
    cfg.workers = int(run_sec.get("workers", cfg.workers))
    cfg.trace = bool(int(run_sec.get("trace", 0)))
    cfg.bench = {k: v for k, v in sections["benchmark"].items()
                 if k not in ("name", "protocol")}
    cfg.hp = {k: v for k, v in sections["method"].items() if k != "name"}
    # evaluation knobs may live in [run] as well
    for key in ("S", "subsample"):
        if key in run_sec:
            cfg.hp[key] = run_sec[key]
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        return config_from_sections(parse_config_text(f.read()))


def effective_hp(cfg: ExperimentConfig) -> dict:
    hp = dict(COMMON_DEFAULTS)
    hp.update(METHOD_DEFAULTS[cfg.method])
    if cfg.profile == PROFILE_CI:
        hp["S"] = 100
        hp["subsample"] = 2000
    hp.update(cfg.hp)
    for key in ("hidden", "gc_hidden", "dgr_hidden"):
        if isinstance(hp.get(key), str):
            hp[key] = _parse_tuple(hp[key])
        elif isinstance(hp.get(key), (int, float)):
            hp[key] = (int(hp[key]),)
    for key in ("S", "subsample", "latent_dim", "sub_batch_size", "fisher_n",
                "dgr_latent", "slda_init_cap"):
        if key in hp:
            hp[key] = int(hp[key])
    return hp


def effective_bench(cfg: ExperimentConfig) -> dict:
    bench = dict(BENCHMARK_DEFAULTS[cfg.benchmark])
    if cfg.profile == PROFILE_CI:
        bench["iterations"] = 200
    bench.update(cfg.bench)
    return bench


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable id over the effective configuration, order-independent."""
    items = {f"method.{k}": v for k, v in effective_hp(cfg).items()}
    items.update({f"benchmark.{k}": v for k, v in effective_bench(cfg).items()})
    items["method.name"] = cfg.method
    items["benchmark.name"] = cfg.benchmark
    items["benchmark.protocol"] = cfg.protocol
    items["run.seeds"] = ",".join(str(s) for s in cfg.seeds)
    canon = "\n".join(f"{k}={items[k]}" for k in sorted(items))
    return sha256(canon.encode("utf-8")).hexdigest()[:12]


# --- benchmarks and data -------------------------------------------------------

def build_benchmark(cfg: ExperimentConfig) -> stream.Benchmark:
    b = effective_bench(cfg)
    return stream.split_benchmark(cfg.benchmark, int(b["classes"]),
                                  int(b["classes_per_task"]), int(b["iterations"]),
                                  int(b["batch_size"]), cfg.protocol)


def mnist_paths(data_dir: str) -> dict[str, str]:
    names = {"train_images": "train-images-idx3-ubyte",
             "train_labels": "train-labels-idx1-ubyte",
             "test_images": "t10k-images-idx3-ubyte",
             "test_labels": "t10k-labels-idx1-ubyte"}
    paths = {}
    for key, base in names.items():
        plain = os.path.join(data_dir, base)
        gz = plain + ".gz"
        if os.path.exists(plain):
            paths[key] = plain
        elif os.path.exists(gz):
            paths[key] = gz
        else:
            raise UsageError(f"missing {base}[.gz] in {data_dir}")
    return paths


def load_benchmark_data(cfg: ExperimentConfig) -> tuple[stream.Dataset, stream.Dataset]:
    if cfg.benchmark == "split_mnist":
        data_dir = os.environ.get("GENCLASS_DATA")
        if not data_dir:
            raise UsageError("set GENCLASS_DATA to the directory holding the "
                             "MNIST IDX files (see scripts/fetch_mnist.py)")
        p = mnist_paths(data_dir)
        return stream.load_mnist(p["train_images"], p["train_labels"],
                                 p["test_images"], p["test_labels"])
    if cfg.benchmark == "synth":
        b = effective_bench(cfg)
        data_rng = Rng(int(b["data_seed"]))
        train = stream.make_synthetic_gaussian(int(b["dim"]), int(b["classes"]),
                                               float(b["mean_scale"]), int(b["n_per_class"]),
                                               data_rng.derive("train"), split="train")
        test = stream.make_synthetic_gaussian(int(b["dim"]), int(b["classes"]),
                                              float(b["mean_scale"]), int(b["test_per_class"]),
                                              data_rng.derive("test"), split="test")
        return train, test
    raise UsageError(f"unknown benchmark {cfg.benchmark!r}")


# --- running -------------------------------------------------------------------

def _evaluate(predict_fn, test: stream.Dataset, hp: dict, seed: int) -> float:
    sub = int(hp.get("subsample", 0)) or None
    return stream.evaluate_accuracy(predict_fn, test, subsample=sub,
                                    rng=Rng(seed).derive("test-subsample"))


def run_single_seed(cfg: ExperimentConfig, seed: int, model_out: str | None = None):
    """Train and evaluate one seed; returns (accuracy, wallclock, trace, warnings).

    When `model_out` is given, a trained generative classifier is saved
    there (its model directory is what `sample-grid` and the acceptance
    sweep re-open later).
    """
    hp = effective_hp(cfg)
    benchmark = build_benchmark(cfg)
    train, test = load_benchmark_data(cfg)
    t0 = time.perf_counter()
    trace: list[float] = []
    on_task_end = None
    if cfg.trace:
        def on_task_end(task, predict_fn):
            trace.append(_evaluate(predict_fn, test, hp, seed))
    warnings: dict[str, int] = {}
    if cfg.method == "gen_disc":
        _, gc_info = baselines.train_generative_classifier(train, benchmark, seed, hp)
        gc = gc_info["model"]
        warnings.update(gc_info.get("warnings", {}))
        predict_fn, info = baselines.train_discriminative_on_generated(
            gc, train, benchmark, seed, hp, on_task_end)
    elif cfg.method == "generative_classifier":
        predict_fn, info = baselines.train_generative_classifier(
            train, benchmark, seed, hp, on_task_end)
        warnings.update(info.get("warnings", {}))
    else:
        predict_fn, info = TRAINERS[cfg.method](train, benchmark, seed, hp, on_task_end)
    acc = _evaluate(predict_fn, test, hp, seed)
    wall = time.perf_counter() - t0
    if model_out is not None and cfg.method == "generative_classifier":
        genclass.save_generative_classifier(info["model"], model_out)
    return acc, wall, trace, warnings


def _seed_worker(payload):
    cfg_sections, seed, model_out = payload
    cfg = config_from_sections(cfg_sections)
    acc, wall, trace, warnings = run_single_seed(cfg, seed, model_out)
    return seed, acc, wall, trace, warnings


def _cfg_to_sections(cfg: ExperimentConfig) -> dict:
    return {"method": {"name": cfg.method, **cfg.hp},
            "benchmark": {"name": cfg.benchmark, "protocol": cfg.protocol, **cfg.bench},
            "run": {"seeds": ",".join(str(s) for s in cfg.seeds), "profile": cfg.profile,
                    "out": cfg.out_dir, "workers": 1, "trace": int(cfg.trace)}}


def run(cfg: ExperimentConfig, save_models: bool = True) -> RunResult:
    """Execute one training + evaluation per seed and persist the results.

    Incompatible method/protocol pairs fail before any data is touched.
    Results land in {out_dir}/{method}-{benchmark}-{hash}/ as a key-value
    record, a CSV with one row per seed, and (for the generative
    classifier) a saved model directory per seed.
    """
    stream.check_compatible(cfg.method, cfg.protocol)
    chash = config_hash(cfg)

    def model_dir(seed):
        if not (save_models and cfg.method == "generative_classifier"):
            return None
        return os.path.join(_run_dir(cfg, chash), "models", f"seed{seed}")

    rows = []
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        payloads = [(_cfg_to_sections(cfg), s, model_dir(s)) for s in cfg.seeds]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_seed_worker, payloads))
    else:
        for seed in cfg.seeds:
            acc, wall, trace, warnings = run_single_seed(cfg, seed, model_dir(seed))
            rows.append((seed, acc, wall, trace, warnings))
    rows.sort(key=lambda r: r[0])
    warn_total: dict[str, int] = {}
    for *_, warnings in rows:
        for k, v in warnings.items():
            warn_total[k] = warn_total.get(k, 0) + v
    result = RunResult(method=cfg.method, benchmark=cfg.benchmark, config_hash=chash,
                       seeds=[r[0] for r in rows], accuracies=[r[1] for r in rows],
                       wallclock_s=[r[2] for r in rows],
                       per_task_trace=[r[3] for r in rows], warnings=warn_total)
    persist_result(cfg, result)
    return result


def _run_dir(cfg: ExperimentConfig, chash: str) -> str:
    return os.path.join(cfg.out_dir, f"{cfg.method}-{cfg.benchmark}-{chash}")


def persist_result(cfg: ExperimentConfig, result: RunResult) -> str:
    rdir = _run_dir(cfg, result.config_hash)
    os.makedirs(rdir, exist_ok=True)
    mean, sem = stream.aggregate_runs(result.accuracies)
    lines = [f"method = {result.method}",
             f"benchmark = {result.benchmark}",
             f"config_hash = {result.config_hash}",
             f"seeds = {','.join(str(s) for s in result.seeds)}",
             f"accuracies = {','.join(f'{a:.10f}' for a in result.accuracies)}",
             f"mean = {mean:.10f}",
             f"sem = {sem:.10f}",
             f"wallclock_s = {','.join(f'{w:.3f}' for w in result.wallclock_s)}"]
    for i, trace in enumerate(result.per_task_trace):
        if trace:
            lines.append(f"trace_seed{result.seeds[i]} = "
                         f"{','.join(f'{a:.10f}' for a in trace)}")
    for key in sorted(result.warnings):
        lines.append(f"warning_{key} = {result.warnings[key]}")
    with open(os.path.join(rdir, "result.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    with open(os.path.join(rdir, "results.csv"), "w") as f:
        f.write(CSV_HEADER + "\n")
        for seed, acc, wall in zip(result.seeds, result.accuracies, result.wallclock_s):
            f.write(f"{result.method},{result.benchmark},{seed},"
                    f"{acc:.10f},{wall:.3f},{result.config_hash}\n")
    return rdir


def load_result(rdir) -> RunResult:
    path = os.path.join(rdir, "result.txt")
    if not os.path.exists(path):
        raise ManifestError(f"no result.txt under {rdir}")
    kv = {}
    with open(path) as f:
        for line in f:
            if "=" in line:
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
    seeds = [int(s) for s in kv["seeds"].split(",") if s]
    traces = []
    for s in seeds:
        tkey = f"trace_seed{s}"
        traces.append([float(a) for a in kv[tkey].split(",")] if tkey in kv else [])
    warnings = {k[len("warning_"):]: int(v) for k, v in kv.items()
                if k.startswith("warning_")}
    return RunResult(method=kv["method"], benchmark=kv["benchmark"],
                     config_hash=kv["config_hash"], seeds=seeds,
                     accuracies=[float(a) for a in kv["accuracies"].split(",")],
                     wallclock_s=[float(w) for w in kv["wallclock_s"].split(",")],
                     per_task_trace=traces, warnings=warnings)


# --- sweeps ---------------------------------------------------------------------

TABLE_GRIDS = {
    "si": {"lam": [0.0] + [10.0 ** k for k in range(-3, 10)]},
    "ewc": {"lam": [0.0] + [10.0 ** k for k in range(-1, 8)]},
    "ar1": {"lam": [0.0] + [10.0 ** k for k in range(-3, 10)],
            "omega_max": [10.0 ** k for k in range(-4, 3)]},
}


def _point_cfg(cfg: ExperimentConfig, keys, values) -> ExperimentConfig:
    pcfg = ExperimentConfig(method=cfg.method, benchmark=cfg.benchmark,
                            protocol=cfg.protocol, seeds=(cfg.seeds[0],),
                            profile=cfg.profile, out_dir=cfg.out_dir,
                            trace=False, hp=dict(cfg.hp), bench=dict(cfg.bench))
    pcfg.hp.update(dict(zip(keys, values)))
    return pcfg


def _sweep_worker(payload):
    cfg_sections, idx = payload
    pcfg = config_from_sections(cfg_sections)
    result = run(pcfg, save_models=False)
    return idx, result.accuracies[0]


def sweep(cfg: ExperimentConfig, grid: dict[str, list]):
    """Grid search with the first seed only; highest accuracy wins, ties
    resolved toward the earlier grid point.  Returns (best_cfg, table rows).

    Grid points run across parallel workers when cfg.workers > 1; the
    aggregation is index-ordered, so results never depend on scheduling.
    """
    if not grid:
        raise DomainError("empty sweep grid")
    keys = sorted(grid)
    points = list(itertools.product(*(grid[k] for k in keys)))
    if cfg.workers > 1 and len(points) > 1:
        payloads = [(_cfg_to_sections(_point_cfg(cfg, keys, values)), idx)
                    for idx, values in enumerate(points)]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            accs = dict(pool.map(_sweep_worker, payloads))
    else:
        accs = {idx: run(_point_cfg(cfg, keys, values), save_models=False).accuracies[0]
                for idx, values in enumerate(points)}
    rows = [(dict(zip(keys, values)), accs[idx]) for idx, values in enumerate(points)]
    best_idx = max(range(len(points)), key=lambda i: (accs[i], -i))
    best_cfg = ExperimentConfig(method=cfg.method, benchmark=cfg.benchmark,
                                protocol=cfg.protocol, seeds=cfg.seeds,
                                profile=cfg.profile, out_dir=cfg.out_dir,
                                trace=cfg.trace, hp=dict(cfg.hp), bench=dict(cfg.bench))
    best_cfg.hp.update(dict(zip(keys, points[best_idx])))
    return best_cfg, rows


def format_sweep_table(grid_keys, rows) -> str:
    header = " | ".join(list(grid_keys) + ["accuracy"])
    lines = [header, "-" * len(header)]
    for values, acc in rows:
        lines.append(" | ".join([f"{values[k]:g}" for k in grid_keys] + [f"{acc * 100:.2f}"]))
    return "\n".join(lines)


# --- comparison tables -----------------------------------------------------------

def compare(results: list[RunResult]) -> str:
    """Fixed-order method table with means (+- SEM) as percentages."""
    if not results:
        raise UsageError("no results to compare")
    benchmarks = {r.benchmark for r in results}
    if len(benchmarks) > 1:
        raise UsageError(f"results span multiple benchmarks: {sorted(benchmarks)}")
    by_method = {r.method: r for r in results}
    order = [m for _, m in TABLE_ORDER if m in by_method]
    order += [m for m in sorted(by_method) if m not in order]
    strategy = dict((m, s) for s, m in TABLE_ORDER)
    width = max(max(len(m) for m in order), len("Method")) + 2
    lines = [f"{'Strategy':<22}{'Method':<{width}}{benchmarks.pop()}",
             "-" * (22 + width + 14)]
    for m in order:
        r = by_method[m]
        mean, sem = stream.aggregate_runs(r.accuracies)
        lines.append(f"{strategy.get(m, 'Other'):<22}{m:<{width}}"
                     f"{mean * 100:.2f} (± {sem * 100:.2f})")
    return "\n".join(lines)


# --- figures ----------------------------------------------------------------------

def sample_grid(model_dir, out_path, seed: int = 0, per_class: int = 10) -> None:
    """Render a PGM grid (one class per row) from a saved model directory."""
    gc = genclass.load_generative_classifier(model_dir)
    side = int(round(np.sqrt(gc.input_dim)))
    if side * side != gc.input_dim:
        raise UsageError(f"input dim {gc.input_dim} is not a square image")
    grid = genclass.sample_grid_array(gc, (side, side), Rng(seed).derive("sample-grid"),
                                      per_class=per_class)
    images.write_pgm(out_path, grid)


def plot_results(results: list[RunResult], out_path) -> None:
    if not results:
        raise UsageError("no results to plot")
    labels = [r.method for r in results]
    means = [r.mean * 100 for r in results]
    sems = [r.sem * 100 for r in results]
    with open(out_path, "w") as f:
        f.write(svgplot.bar_chart_svg(labels, means, sems))


def plot_sample_sweep(s_values, means_pct, sems_pct, out_path) -> None:
    with open(out_path, "w") as f:
        f.write(svgplot.line_chart_svg(list(s_values), list(means_pct), list(sems_pct)))
