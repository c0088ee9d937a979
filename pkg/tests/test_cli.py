import csv

import numpy as np
import pytest

from fmamba import cli
from fmamba.data import coupled_sinusoids, write_csv
from fmamba.train import Checkpoint

CONFIG = """\
# tiny run
el=1
d_model=8
k_dim=4
lookback=8
horizon=4
dropout=0.0
bs=16
lr=5e-3
max_epochs=2
split=0.6,0.2,0.2
dataset=toy
"""


@pytest.fixture
def workspace(tmp_path):
    values = coupled_sinusoids(3, 120, seed=0)
    stamps = [str(i) for i in range(120)]
    write_csv(tmp_path / "series.csv", ["a", "b", "c"], values, stamps)
    (tmp_path / "run.cfg").write_text(CONFIG + "timestamp_column=timestamp\n")
    return tmp_path


def run(*argv):
    return cli.cli_main([str(a) for a in argv])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestParseConfig:
    def test_keys_and_comments(self):
        s = cli.parse_config("el=3  # layers\nbs=16\nlr=8e-4\nsplit=100,20,30\nvariant=mamba_only\n")
        assert s.model == {"e_layers": 3, "variant": "mamba_only"}
        assert s.train == {"batch_size": 16, "lr": 8e-4}
        assert s.split.lengths == (100, 20, 30)

    def test_ratio_split(self):
        assert cli.parse_config("split=0.7,0.1,0.2").split.ratios == (0.7, 0.1, 0.2)

    @pytest.mark.parametrize("text", ["el", "nope=1", "el=two", "split=1,2"])
    def test_errors_name_line(self, text):
        with pytest.raises(cli.ConfigError, match="line 1"):
            cli.parse_config(text)


class TestCommands:
    def test_train_writes_artifacts(self, workspace):
        out = workspace / "run"
        assert run("train", "--config", workspace / "run.cfg", "--data", workspace / "series.csv", "--out", out, "--quiet") == 0
        ckpt = Checkpoint.load(out / "checkpoint.json")
        assert ckpt.config.n_vars == 3 and ckpt.scaler is not None
        rows = read_rows(out / "metrics.csv")
        assert rows[0] == cli.METRICS_HEADER
        assert rows[1][:3] == ["toy", "4", "full"]

    def test_train_is_reproducible(self, workspace):
        args = ["--config", workspace / "run.cfg", "--data", workspace / "series.csv", "--seed", 5, "--quiet"]
        run("train", *args, "--out", workspace / "a")
        run("train", *args, "--out", workspace / "b")
        assert (workspace / "a" / "report.csv").read_bytes() == (workspace / "b" / "report.csv").read_bytes()
        assert (workspace / "a" / "checkpoint.json").read_bytes() == (workspace / "b" / "checkpoint.json").read_bytes()

    def test_eval_matches_training_test_metrics(self, workspace, capsys):
        out = workspace / "run"
        run("train", "--config", workspace / "run.cfg", "--data", workspace / "series.csv", "--out", out, "--quiet")
        trained = read_rows(out / "metrics.csv")[1]
        capsys.readouterr()
        assert run("eval", "--checkpoint", out / "checkpoint.json", "--data", workspace / "series.csv") == 0
        evaluated = list(csv.reader(capsys.readouterr().out.splitlines()))[1]
        assert evaluated[3:5] == trained[3:5]

    def test_forecast(self, workspace):
        out = workspace / "run"
        run("train", "--config", workspace / "run.cfg", "--data", workspace / "series.csv", "--out", out, "--quiet")
        target = workspace / "pred.csv"
        assert run("forecast", "--checkpoint", out / "checkpoint.json", "--data", workspace / "series.csv", "--out", target) == 0
        rows = read_rows(target)
        assert rows[0] == ["timestamp", "a", "b", "c"]
        assert [r[0] for r in rows[1:]] == ["120", "121", "122", "123"]

    def test_test_data_does_not_move_scaler(self, workspace):
        run("train", "--config", workspace / "run.cfg", "--data", workspace / "series.csv", "--out", workspace / "a", "--quiet")
        values = coupled_sinusoids(3, 120, seed=0)
        values[-24:] += 1e3
        write_csv(workspace / "shifted.csv", ["a", "b", "c"], values, [str(i) for i in range(120)])
        run("train", "--config", workspace / "run.cfg", "--data", workspace / "shifted.csv", "--out", workspace / "b", "--quiet")
        a = Checkpoint.load(workspace / "a" / "checkpoint.json").scaler
        b = Checkpoint.load(workspace / "b" / "checkpoint.json").scaler
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.std, b.std)

    def test_ablate_reports_every_variant(self, workspace):
        out = workspace / "ablate.csv"
        cfg = workspace / "abl.cfg"
        cfg.write_text(CONFIG.replace("max_epochs=2", "max_epochs=1") + "timestamp_column=timestamp\n")
        assert run("ablate", "--config", cfg, "--data", workspace / "series.csv", "--out", out, "--quiet") == 0
        rows = read_rows(out)
        assert [r[2] for r in rows[1:]] == list(cli.VARIANTS)

    def test_gradcheck_passes(self, tmp_path):
        assert run("gradcheck", "--out", tmp_path / "g.csv") == 0
        rows = read_rows(tmp_path / "g.csv")
        assert all(r[2] == "True" for r in rows[1:])

    def test_bench_small(self, tmp_path):
        assert run("bench", "--n-list", "16,32", "--d-model", 8, "--k-dim", 4, "--out", tmp_path / "b.csv") == 0
        assert len(read_rows(tmp_path / "b.csv")) == 3

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as err:
            run("serve")
        assert err.value.code == 2

    def test_missing_data_flag(self):
        with pytest.raises(SystemExit) as err:
            run("train")
        assert err.value.code == 2

    def test_bad_input_file(self, tmp_path, capsys):
        (tmp_path / "bad.csv").write_text("a,b\n1,x\n")
        assert run("train", "--data", tmp_path / "bad.csv", "--out", tmp_path / "o", "--quiet") == 1
        assert "column 2" in capsys.readouterr().err
