import csv
import filecmp
import os
import subprocess
import sys

import pytest

from gsr import cli
from gsr.config import ConfigError, PRESETS, load_config, make_config, parse_config_text
from gsr.models import MODEL_NAMES

FAST_DATA = "num_walks=3\nhr_walk_length=8\nlr_walk_length=4\nn_h=8\nn_l=4\n"


class TestConfig:
    def test_table7_defaults(self):
        cfg = make_config()
        assert (cfg.batch_size, cfg.lr, cfg.max_epochs, cfg.warmup, cfg.patience) == \
            (16, 0.001, 150, 15, 5)
        assert (cfg.hidden, cfg.heads, cfg.dropout, cfg.n_h, cfg.n_l, cfg.n_samples) == \
            (16, 4, 0.2, 64, 32, 128)
        assert cfg.models == MODEL_NAMES and cfg.folds == 3

    def test_table6_preset(self):
        cfg = make_config({}, "node_vs_edge")
        assert (cfg.max_epochs, cfg.warmup, cfg.patience, cfg.n_seeds) == (300, 10, 15, 15)
        assert (cfg.n_train, cfg.n_val, cfg.n_test, cfg.batch_size) == (128, 32, 32, 16)

    def test_connectome_preset(self):
        cfg = make_config({}, "connectome_sr")
        assert cfg.lr_search == (0.01, 0.005, 0.001)
        assert (cfg.warmup, cfg.patience, cfg.hidden) == (30, 7, 32)
        assert cfg.models[-1] == "IMAN_adapted"

    def test_sensitivity_preset(self):
        cfg = make_config({}, "sensitivity")
        assert cfg.scales == (1.0, 10.0, 100.0) and cfg.n_seeds == 5
        assert len(cfg.models) == 6

    def test_parse_values(self):
        cfg = parse_config_text("# comment\nlr = 0.01\nmodels = MT, Bi-MP\nbaseline=off\n")
        assert cfg.lr == 0.01 and cfg.models == ("MT", "Bi-MP") and cfg.baseline is False

    def test_echo_round_trip(self):
        cfg = make_config({"lr": 0.005, "models": ("MT",)}, "connectome_sr")
        assert parse_config_text(cfg.echo()) == cfg

    @pytest.mark.parametrize("text, match", [
        ("colour=red", "unknown config key"), ("lr=fast", "bad value for lr"),
        ("lr=0.1\nlr=0.2", "duplicate"), ("just words", "expected key=value"),
        ("warmup=20\nmax_epochs=10", "warmup"), ("patience=0", "patience"),
        ("experiment=cooking", "unknown experiment"), ("lr_refine=maybe", "lr_refine")])
    def test_errors(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config_text(text)

    def test_experiment_mismatch(self):
        with pytest.raises(ConfigError, match="not"):
            parse_config_text("experiment=sensitivity", "simulated_sr")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "none.cfg")

    def test_replace_validates(self):
        with pytest.raises(ConfigError):
            make_config().replace(nonsense=1)
        assert make_config().replace(seed=4).seed == 4

    def test_presets_only_use_known_keys(self):
        for exp in PRESETS:
            make_config({}, exp)


def run_cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "gsr.cli", *map(str, args)],
                          capture_output=True, text=True, cwd=cwd)


class TestCli:
    def test_missing_config_exits_one(self, tmp_path):
        out = run_cli("train", "--config", tmp_path / "nope.cfg")
        assert out.returncode == 1
        assert "cannot read config" in out.stderr

    def test_unknown_key_exits_one(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("colour=red\n")
        assert cli.main(["experiment", "simulated", "--config", str(cfg)]) == 1
        assert "unknown config key" in capsys.readouterr().err

    def test_gen_data_byte_identical(self, tmp_path):
        cfg = tmp_path / "data.cfg"
        cfg.write_text(FAST_DATA)
        for d in ("a", "b"):
            assert cli.main(["gen-data", "sbm-degree", "--seed", "7", "--n-samples", "3",
                             "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
        cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
        assert cmp.left_list == cmp.right_list and len(cmp.left_list) == 10
        _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", cmp.left_list,
                                               shallow=False)
        assert not mismatch and not errors

    def test_gen_data_connectome(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("n_l=5\nn_h=7\nn_subjects=2\n")
        assert cli.main(["gen-data", "connectome", "--out", str(tmp_path / "c"),
                         "--config", str(cfg)]) == 0
        assert (tmp_path / "c" / "sample_1_hr.txt").exists()

    def test_train_then_eval(self, tmp_path, capsys):
        data = tmp_path / "data"
        cfg = tmp_path / "data.cfg"
        cfg.write_text(FAST_DATA.replace("n_h=8", "n_h=12"))
        assert cli.main(["gen-data", "ws-clustering", "--n-samples", "6", "--config", str(cfg),
                  "--out", str(data)]) == 0
        train_cfg = tmp_path / "train.cfg"
        train_cfg.write_text(f"model=Dual-Bi-MP\ndata_dir={data}\noutput={tmp_path / 'run'}\n"
                             "max_epochs=3\nwarmup=1\nhidden=4\nn_h=12\nn_l=4\n")
        assert cli.main(["train", "--config", str(train_cfg)]) == 0
        assert "best epoch" in capsys.readouterr().out
        ckpt = tmp_path / "run" / "model.ckpt"
        out = tmp_path / "eval.csv"
        assert cli.main(["eval", "--checkpoint", str(ckpt), "--data", str(data),
                         "--out", str(out)]) == 0
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "sample" and len(rows) == 7

    def test_iman_is_config_error(self, tmp_path, capsys):
        cfg = tmp_path / "t.cfg"
        cfg.write_text(f"model=IMAN_adapted\nn_samples=3\noutput={tmp_path}\n" + FAST_DATA)
        assert cli.main(["train", "--config", str(cfg)]) == 1
        assert "not implemented" in capsys.readouterr().err

    def test_numerical_failure_exits_two(self, monkeypatch, tmp_path, capsys):
        from gsr import harness

        def boom(cfg):
            raise harness.NumericalError("non-finite loss nan at epoch 1, batch 0")

        monkeypatch.setattr(harness, "run_train", boom)
        cfg = tmp_path / "t.cfg"
        cfg.write_text("lr=0.1\n")
        assert cli.main(["train", "--config", str(cfg)]) == 2
        assert "epoch 1, batch 0" in capsys.readouterr().err

    def test_experiment_and_report(self, tmp_path):
        cfg = tmp_path / "nve.cfg"
        cfg.write_text("n_seeds=1\nn_train=4\nn_val=2\nn_test=2\nmax_epochs=2\nwarmup=1\n"
                       "particle_rows=D1/E1,D3/E3\n")
        out = run_cli("experiment", "node-vs-edge", "--config", cfg, "--out", tmp_path / "res")
        assert out.returncode == 0, out.stderr
        assert sorted(os.listdir(tmp_path / "res")) == ["manifest.txt", "runs_node_vs_edge.csv",
                                                        "table2.csv", "timings.json"]
        os.remove(tmp_path / "res" / "table2.csv")
        again = run_cli("report", "--results", tmp_path / "res")
        assert again.returncode == 0
        assert again.stdout.strip().endswith("table2.csv")

    def test_report_missing_directory(self, tmp_path):
        assert run_cli("report", "--results", tmp_path / "nothing").returncode == 1

    def test_console_script_help(self):
        out = subprocess.run(["gsr", "--help"], capture_output=True, text=True)
        assert out.returncode == 0
        for sub in ("gen-data", "train", "eval", "experiment", "report"):
            assert sub in out.stdout
