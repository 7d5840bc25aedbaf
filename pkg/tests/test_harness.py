import csv
import os

import numpy as np
import pytest

from cilab import harness
from cilab.cli import main as cli_main
from cilab.exceptions import ProtocolError, UsageError
from cilab.harness import (ExperimentConfig, compare, config_from_sections,
                           config_hash, effective_bench, effective_hp,
                           load_result, parse_config_text, run, sweep)
from cilab.images import read_pgm
from cilab.stream import TASK_BASED_STREAMING
from cilab.svgplot import bar_chart_svg, line_chart_svg


def synth_cfg(tmp_path, method="slda", **kw):
    cfg = ExperimentConfig(method=method, benchmark="synth", seeds=(0,),
                           out_dir=str(tmp_path / "out"),
                           bench={"iterations": 15, "n_per_class": 80,
                                  "test_per_class": 40, "dim": 9, "classes": 4})
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


CONFIG_TEXT = """
# comment line
[method]
name = ewc
lam = 1000.0
fisher_n = 64

[benchmark]
name = synth
protocol = task_based_batch
iterations = 25

[run]
seeds = 0,1
out = somewhere
S = 64
"""


class TestConfig:
    def test_parse_sections(self):
        sec = parse_config_text(CONFIG_TEXT)
        assert sec["method"]["name"] == "ewc"
        assert sec["method"]["lam"] == 1000.0
        assert sec["benchmark"]["iterations"] == 25
        assert sec["run"]["seeds"] == "0,1"

    def test_bad_section_rejected(self):
        with pytest.raises(UsageError):
            parse_config_text("[mystery]\nx = 1\n")

    def test_keyless_line_rejected(self):
        with pytest.raises(UsageError):
            parse_config_text("[method]\njust a line\n")

    def test_config_from_sections(self):
        cfg = config_from_sections(parse_config_text(CONFIG_TEXT))
        assert cfg.method == "ewc"
        assert cfg.seeds == (0, 1)
        assert cfg.out_dir == "somewhere"
        assert cfg.hp["lam"] == 1000.0
        assert cfg.hp["S"] == 64

    def test_unknown_method_rejected(self):
        with pytest.raises(UsageError):
            config_from_sections({"method": {"name": "nope"}, "benchmark": {}, "run": {}})

    def test_hash_ignores_key_order(self):
        a = config_from_sections(parse_config_text(CONFIG_TEXT))
        flipped = CONFIG_TEXT.replace("lam = 1000.0\nfisher_n = 64",
                                      "fisher_n = 64\nlam = 1000.0")
        b = config_from_sections(parse_config_text(flipped))
        assert config_hash(a) == config_hash(b)

    def test_hash_sees_value_changes(self):
        a = config_from_sections(parse_config_text(CONFIG_TEXT))
        b = config_from_sections(parse_config_text(CONFIG_TEXT.replace("1000.0", "10.0")))
        assert config_hash(a) != config_hash(b)

    def test_ci_profile_shrinks(self):
        cfg = ExperimentConfig(method="generative_classifier", profile="ci")
        hp = effective_hp(cfg)
        assert hp["S"] == 100 and hp["subsample"] == 2000
        assert effective_bench(cfg)["iterations"] == 200

    def test_explicit_keys_beat_profile(self):
        cfg = ExperimentConfig(method="generative_classifier", profile="ci",
                               hp={"S": 17}, bench={"iterations": 33})
        assert effective_hp(cfg)["S"] == 17
        assert effective_bench(cfg)["iterations"] == 33

    def test_method_defaults_reproduce_published_settings(self):
        assert harness.METHOD_DEFAULTS["ewc"]["lam"] == 1e6
        assert harness.METHOD_DEFAULTS["si"]["lam"] == 1e3
        assert harness.METHOD_DEFAULTS["ar1"]["lam"] == 10.0
        assert harness.METHOD_DEFAULTS["ar1"]["omega_max"] == 0.01
        gc = harness.METHOD_DEFAULTS["generative_classifier"]
        assert gc["latent_dim"] == 5 and gc["gc_hidden"] == (85, 85)
        assert gc["S"] == 10000
        b = harness.BENCHMARK_DEFAULTS["split_mnist"]
        assert (b["classes"], b["classes_per_task"]) == (10, 2)
        assert (b["iterations"], b["batch_size"]) == (2000, 128)


class TestRun:
    def test_incompatible_protocol_fails_fast(self, tmp_path):
        cfg = synth_cfg(tmp_path, method="ewc", protocol=TASK_BASED_STREAMING)
        with pytest.raises(ProtocolError):
            run(cfg)
        assert not os.path.exists(cfg.out_dir)

    def test_persists_record_and_csv(self, tmp_path):
        cfg = synth_cfg(tmp_path, seeds=(0, 1))
        result = run(cfg)
        rdir = harness._run_dir(cfg, result.config_hash)
        with open(os.path.join(rdir, "results.csv")) as f:
            rows = list(csv.reader(f))
        assert rows[0] == harness.CSV_HEADER.split(",")
        assert len(rows) == 3
        assert rows[1][0] == "slda" and rows[1][1] == "synth"
        assert rows[1][5] == result.config_hash
        back = load_result(rdir)
        assert back.accuracies == result.accuracies
        assert back.seeds == result.seeds

    def test_single_seed_sem_zero(self, tmp_path):
        result = run(synth_cfg(tmp_path))
        assert result.sem == 0.0 and len(result.accuracies) == 1

    def test_reproducible_csv_modulo_wallclock(self, tmp_path):
        texts = []
        for attempt in range(2):
            cfg = synth_cfg(tmp_path)
            cfg.out_dir = str(tmp_path / f"out{attempt}")
            result = run(cfg)
            rdir = harness._run_dir(cfg, result.config_hash)
            with open(os.path.join(rdir, "results.csv")) as f:
                rows = list(csv.reader(f))
            for row in rows[1:]:
                row[4] = "-"
            texts.append(str(rows))
        assert texts[0] == texts[1]

    def test_parallel_workers_match_serial(self, tmp_path):
        serial = run(synth_cfg(tmp_path, seeds=(0, 1)))
        cfg = synth_cfg(tmp_path, seeds=(0, 1), workers=2)
        cfg.out_dir = str(tmp_path / "out-par")
        parallel = run(cfg)
        assert serial.accuracies == parallel.accuracies
        assert serial.seeds == parallel.seeds

    def test_trace_records_per_task_accuracy(self, tmp_path):
        result = run(synth_cfg(tmp_path, trace=True))
        assert len(result.per_task_trace[0]) == 2   # 4 classes / 2 per task

    def test_gen_disc_pipeline(self, tmp_path):
        cfg = synth_cfg(tmp_path, method="gen_disc")
        cfg.hp = {"latent_dim": 2, "gc_hidden": (6,), "sub_batch_size": 8,
                  "S": 16, "hidden": (12,)}
        result = run(cfg)
        assert 0.0 <= result.accuracies[0] <= 1.0

    def test_generative_classifier_saves_models(self, tmp_path):
        cfg = synth_cfg(tmp_path, method="generative_classifier")
        cfg.hp = {"latent_dim": 2, "gc_hidden": (6,), "sub_batch_size": 8, "S": 16}
        result = run(cfg)
        mdir = os.path.join(harness._run_dir(cfg, result.config_hash), "models", "seed0")
        assert os.path.exists(os.path.join(mdir, "manifest.txt"))


class TestSweep:
    def test_single_point_returns_it(self, tmp_path):
        cfg = synth_cfg(tmp_path, method="si")
        cfg.hp["fisher_n"] = 0
        best, rows = sweep(cfg, {"lam": [0.5]})
        assert best.hp["lam"] == 0.5 and len(rows) == 1

    def test_tie_breaks_to_earlier_point(self, tmp_path):
        # identical results for both grid points (the parameter is unused
        # by slda), so the first must win
        cfg = synth_cfg(tmp_path, method="slda")
        best, rows = sweep(cfg, {"lam": [111.0, 222.0]})
        assert rows[0][1] == rows[1][1]
        assert best.hp["lam"] == 111.0

    def test_grid_table_format(self, tmp_path):
        cfg = synth_cfg(tmp_path, method="slda")
        _, rows = sweep(cfg, {"lam": [1.0, 2.0]})
        table = harness.format_sweep_table(["lam"], rows)
        assert "lam | accuracy" in table
        assert len(table.splitlines()) == 4

    def test_standard_exploration_grids(self):
        assert harness.TABLE_GRIDS["si"]["lam"][0] == 0.0
        assert harness.TABLE_GRIDS["si"]["lam"][1] == pytest.approx(0.001)
        assert harness.TABLE_GRIDS["si"]["lam"][-1] == pytest.approx(1e9)
        assert harness.TABLE_GRIDS["ewc"]["lam"][1] == pytest.approx(0.1)
        assert harness.TABLE_GRIDS["ewc"]["lam"][-1] == pytest.approx(1e7)
        assert harness.TABLE_GRIDS["ar1"]["omega_max"][0] == pytest.approx(1e-4)
        assert harness.TABLE_GRIDS["ar1"]["omega_max"][-1] == pytest.approx(100.0)

    def test_empty_grid_rejected(self, tmp_path):
        from cilab.exceptions import DomainError
        with pytest.raises(DomainError):
            sweep(synth_cfg(tmp_path), {})


class TestCompare:
    def make_result(self, method, accs, benchmark="synth"):
        return harness.RunResult(method=method, benchmark=benchmark, config_hash="x",
                                 seeds=list(range(len(accs))), accuracies=list(accs),
                                 wallclock_s=[0.0] * len(accs),
                                 per_task_trace=[[] for _ in accs], warnings={})

    def test_single_row(self):
        table = compare([self.make_result("slda", [0.9379])])
        assert "93.79" in table and "slda" in table

    def test_percent_formatting(self):
        table = compare([self.make_result("none", [0.9379, 0.9379])])
        assert "93.79 (± 0.00)" in table

    def test_fixed_strategy_ordering(self):
        results = [self.make_result(m, [0.5]) for m in
                   ("generative_classifier", "none", "slda", "ewc", "joint")]
        table = compare(results)
        lines = table.splitlines()
        methods = [ln[22:].split()[0] for ln in lines[2:]]   # method column starts at 22
        assert methods == ["none", "joint", "ewc", "slda", "generative_classifier"]

    def test_mixed_benchmarks_rejected(self):
        with pytest.raises(UsageError):
            compare([self.make_result("none", [0.5]),
                     self.make_result("slda", [0.5], benchmark="other")])

    def test_empty_rejected(self):
        with pytest.raises(UsageError):
            compare([])


class TestFigures:
    def test_sample_grid_file(self, tmp_path):
        cfg = synth_cfg(tmp_path, method="generative_classifier")
        cfg.hp = {"latent_dim": 2, "gc_hidden": (6,), "sub_batch_size": 8, "S": 16}
        result = run(cfg)
        mdir = os.path.join(harness._run_dir(cfg, result.config_hash), "models", "seed0")
        out = tmp_path / "grid.pgm"
        harness.sample_grid(mdir, out, seed=3)
        img = read_pgm(out)
        assert img.shape == (4 * 3, 10 * 3)   # 4 classes of 3x3 images, 10 per row
        harness.sample_grid(mdir, tmp_path / "grid2.pgm", seed=3)
        np.testing.assert_array_equal(img, read_pgm(tmp_path / "grid2.pgm"))

    def test_bar_chart_well_formed(self):
        text = bar_chart_svg(["a", "b"], [50.0, 75.0], [1.0, 0.0])
        assert text.startswith("<svg")
        assert text.count("<rect") >= 3
        assert text.rstrip().endswith("</svg>")

    def test_line_chart_published_sweep_is_nondecreasing(self):
        s_values = [1, 10, 100, 1000, 10000]
        accs = [91.14, 92.46, 93.25, 93.62, 93.79]
        assert all(b >= a for a, b in zip(accs, accs[1:]))
        text = line_chart_svg(s_values, accs, [0.08, 0.09, 0.09, 0.10, 0.08])
        assert text.startswith("<svg") and "<polyline" in text

    def test_empty_series_guard(self):
        with pytest.raises(UsageError):
            bar_chart_svg([], [], [])
        with pytest.raises(UsageError):
            line_chart_svg([], [], [])


class TestCli:
    def test_run_and_compare_roundtrip(self, tmp_path, capsys):
        cfg_file = tmp_path / "cfg.txt"
        cfg_file.write_text("[method]\nname = slda\n\n[benchmark]\nname = synth\n"
                            "iterations = 10\nn_per_class = 60\ntest_per_class = 30\n"
                            "dim = 4\n\n[run]\nseeds = 0\n"
                            f"out = {tmp_path / 'res'}\n")
        assert cli_main(["--config", str(cfg_file), "run"]) == 0
        out = capsys.readouterr().out
        assert "slda on synth" in out
        rdir = out.strip().splitlines()[-1].split("under ")[-1]
        assert cli_main(["compare", rdir]) == 0
        assert "slda" in capsys.readouterr().out

    def test_flags_after_subcommand(self, tmp_path, capsys):
        cfg_file = tmp_path / "cfg.txt"
        cfg_file.write_text("[method]\nname = slda\n\n[benchmark]\nname = synth\n"
                            "iterations = 10\nn_per_class = 60\ntest_per_class = 30\n"
                            "dim = 4\n\n[run]\nseeds = 0\n"
                            f"out = {tmp_path / 'res'}\n")
        assert cli_main(["run", "--config", str(cfg_file)]) == 0

    def test_missing_config_is_usage_error(self, capsys):
        assert cli_main(["run", "--config", "/nonexistent/cfg.txt"]) == 2
        assert "error" in capsys.readouterr().err

    def test_sweep_plot_and_sample_grid(self, tmp_path, capsys):
        cfg_file = tmp_path / "cfg.txt"
        cfg_file.write_text("[method]\nname = generative_classifier\nlatent_dim = 2\n"
                            "gc_hidden = 6\nsub_batch_size = 8\nS = 8\n\n"
                            "[benchmark]\nname = synth\niterations = 10\n"
                            "n_per_class = 60\ntest_per_class = 30\ndim = 9\n\n"
                            "[run]\nseeds = 0\nsubsample = 50\n"
                            f"out = {tmp_path / 'res'}\n")
        assert cli_main(["sweep", "--config", str(cfg_file), "--grid", "S=4,8"]) == 0
        out = capsys.readouterr().out
        assert "S | accuracy" in out and "best:" in out
        assert cli_main(["run", "--config", str(cfg_file)]) == 0
        rdir = capsys.readouterr().out.strip().splitlines()[-1].split("under ")[-1]
        assert cli_main(["plot", rdir, "--out-file", str(tmp_path / "c.svg")]) == 0
        capsys.readouterr()
        assert (tmp_path / "c.svg").read_text().startswith("<svg")
        model_dir = os.path.join(rdir, "models", "seed0")
        grid_path = tmp_path / "g.pgm"
        assert cli_main(["sample-grid", model_dir, "--out-file", str(grid_path)]) == 0
        assert read_pgm(grid_path).shape == (4 * 3, 10 * 3)

    def test_selftest_passes(self, capsys):
        from cilab.selftest import run_selftest
        assert run_selftest("ci") == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
