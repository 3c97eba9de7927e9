import csv
from unittest.mock import patch

import pytest
import numpy as np

from main import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, EXIT_VERIFY_FAILED, main
from polynormer.errors import NumericalError
from polynormer.graphstore import parse_dataset, structurally_equal
from verification import SuiteReport, CheckResult, CheckStatus

pytestmark = pytest.mark.integration

RUN_CONFIG = """hidden_dim=8
local_layers=1
global_layers=1
heads=2
warmup_epochs=2
main_epochs=4
learning_rate=0.01
seed=3
"""


@pytest.fixture
def data_file(tmp_path):
    path = tmp_path / "sbm.pgrf"
    assert main(["gen", "sbm", "--n", "120", "--classes", "3", "--p-in", "0.2", "--p-out", "0.01",
                 "--dim", "6", "--noise", "0.3", "--seed", "4", "--out", str(path)]) == EXIT_OK
    return path


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(RUN_CONFIG)
    return path


@pytest.fixture
def trained(tmp_path, data_file, config_file, capsys):
    ckpt, log = tmp_path / "model.ckpt", tmp_path / "log.csv"
    code = main(["train", "--data", str(data_file), "--config", str(config_file),
                 "--out-checkpoint", str(ckpt), "--log", str(log)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert any(line.startswith("best_stage=") for line in out.splitlines())
    test_metric = [line.split("=", 1)[1] for line in out.splitlines() if line.startswith("test_metric=")][0]
    return ckpt, log, test_metric


def test_gen_csl_reports_edges(capsys):
    assert main(["gen", "csl", "--n", "11", "--skip", "2"]) == EXIT_OK
    assert "m=22" in capsys.readouterr().out.splitlines()


def test_gen_er_bad_probability(capsys):
    assert main(["gen", "er", "--p", "1.5"]) == EXIT_USAGE
    assert "probability" in capsys.readouterr().err


def test_gen_sbm_file_round_trips(data_file, tmp_path):
    first = parse_dataset(data_file)
    again = tmp_path / "again.pgrf"
    assert main(["gen", "sbm", "--n", "120", "--classes", "3", "--p-in", "0.2", "--p-out", "0.01",
                 "--dim", "6", "--noise", "0.3", "--seed", "4", "--out", str(again)]) == EXIT_OK
    assert structurally_equal(first, parse_dataset(again))


def test_unknown_command_is_usage_error():
    assert main(["frobnicate"]) == EXIT_USAGE


def test_train_writes_outputs(trained):
    ckpt, log, _ = trained
    assert ckpt.read_bytes()[:4] == b"PNCK"
    with open(log, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "stage", "train_loss", "val_metric", "test_metric"]
    assert [r[1] for r in rows[1:]] == ["warmup"] * 2 + ["full"] * 4


def test_train_is_byte_deterministic(tmp_path, data_file, config_file, trained):
    _, log, _ = trained
    again = tmp_path / "again.csv"
    assert main(["train", "--data", str(data_file), "--config", str(config_file), "--log", str(again)]) == EXIT_OK
    assert again.read_bytes() == log.read_bytes()


def test_train_missing_key(tmp_path, data_file, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text(RUN_CONFIG.replace("hidden_dim=8\n", ""))
    assert main(["train", "--data", str(data_file), "--config", str(config)]) == EXIT_USAGE
    assert "hidden_dim" in capsys.readouterr().err


def test_train_numeric_failure(data_file, config_file, capsys):
    with patch("main.train", side_effect=NumericalError("training loss is not finite", epoch=4)):
        code = main(["train", "--data", str(data_file), "--config", str(config_file)])
    assert code == EXIT_NUMERIC
    assert "epoch 4" in capsys.readouterr().err


def test_eval_reproduces_train_metric(data_file, trained, capsys):
    ckpt, _, test_metric = trained
    assert main(["eval", "--data", str(data_file), "--checkpoint", str(ckpt)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == f"metric={test_metric}"


def test_eval_auc_on_multiclass(data_file, trained):
    ckpt, _, _ = trained
    assert main(["eval", "--data", str(data_file), "--checkpoint", str(ckpt), "--metric", "auc"]) == EXIT_USAGE


def test_eval_corrupted_checkpoint(tmp_path, data_file, trained, capsys):
    ckpt, _, _ = trained
    broken = tmp_path / "broken.ckpt"
    broken.write_bytes(ckpt.read_bytes()[:-5])
    assert main(["eval", "--data", str(data_file), "--checkpoint", str(broken)]) == EXIT_USAGE
    assert "head.bias" in capsys.readouterr().err


def test_attention_export(tmp_path, data_file, trained):
    ckpt, _, _ = trained
    out = tmp_path / "heat.csv"
    assert main(["attention", "--data", str(data_file), "--checkpoint", str(ckpt),
                 "--nodes", "10", "--out", str(out)]) == EXIT_OK
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 11
    values = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    assert values.shape == (10, 10)
    assert np.all(values > 0) and np.all(values <= 1.0)
    assert values.max() == 1.0
    assert [row[0] for row in rows[1:]] == rows[0][1:]


def test_attention_single_node(tmp_path, data_file, trained):
    ckpt, _, _ = trained
    out = tmp_path / "one.csv"
    assert main(["attention", "--data", str(data_file), "--checkpoint", str(ckpt),
                 "--nodes", "1", "--out", str(out)]) == EXIT_OK
    rows = list(csv.reader(open(out, newline="")))
    assert float(rows[1][1]) == 1.0


def test_attention_needs_global_layer(tmp_path, data_file, capsys):
    config = tmp_path / "local.cfg"
    config.write_text(RUN_CONFIG.replace("global_layers=1", "global_layers=0"))
    ckpt = tmp_path / "local.ckpt"
    assert main(["train", "--data", str(data_file), "--config", str(config),
                 "--out-checkpoint", str(ckpt)]) == EXIT_OK
    assert main(["attention", "--data", str(data_file), "--checkpoint", str(ckpt),
                 "--out", str(tmp_path / "h.csv")]) == EXIT_USAGE


def test_verify_wl(capsys):
    assert main(["verify", "--suite", "wl", "--seed", "0"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert any(line.startswith("PASS wl.v2-distinguishable") for line in lines)
    assert not any(line.startswith("FAIL") for line in lines)


def test_verify_failure_exit_code(capsys):
    failing = SuiteReport(suite="wl", checks=[CheckResult(suite="wl", name="x", status=CheckStatus.FAIL)])
    with patch("verification.wl_suite.WLSuite.run", return_value=failing):
        assert main(["verify", "--suite", "wl"]) == EXIT_VERIFY_FAILED
    assert "FAIL wl.x" in capsys.readouterr().out


def test_bench_writes_csv(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--n-list", "100,200", "--dim", "8", "--epochs", "1", "--out", str(out)]) == EXIT_OK
    rows = list(csv.reader(open(out, newline="")))
    assert rows[0] == ["n", "m", "seconds_per_epoch", "peak_bytes"]
    assert [r[0] for r in rows[1:]] == ["100", "200"]
    assert "peak_linear_fit_ratio=" in capsys.readouterr().out


def test_bench_bad_size_list():
    assert main(["bench", "--n-list", "a,b"]) == EXIT_USAGE
