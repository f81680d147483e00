import json

import pandas as pd
import pytest

from nsmatch import cli
from nsmatch.core import nn


@pytest.fixture
def dgp_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(
        json.dumps(
            {
                "dgp": {"n": 120, "d_observed": 3, "d_latent": 1},
                "train": {"max_epochs": 2, "batch_size": 20},
                "methods": ["raw_x", "pca", "no_matching"],
                "pca_k": 2,
            }
        ),
        encoding="utf-8",
    )
    return path


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["--version"])
    assert info.value.code == 0
    assert "nsmatch" in capsys.readouterr().out


def test_generate_train_and_bounds(tmp_path, dgp_config):
    out = tmp_path / "run"
    assert cli.main(["-q", "generate", "--config", str(dgp_config), "--out", str(out), "--seed", "4"]) == 0
    data = pd.read_csv(out / "data.csv")
    assert list(data.columns) == ["x0", "x1", "x2", "t", "y", "e", "mu0", "mu1"]

    assert cli.main(["-q", "train", "--data", str(out / "data.csv"), "--config", str(dgp_config), "--out", str(out)]) == 0
    for name in ("model.json", "score_layer.json", "score_ps.json", "history.csv"):
        assert (out / name).is_file()
    assert len(pd.read_csv(out / "history.csv")) == 2
    assert nn.load_model(out / "model.json").input_dim == 3

    assert cli.main(["-q", "bounds", "--model", str(out / "model.json"), "--data", str(out / "data.csv"),
                     "--metric", "linear_mmd", "--out", str(out)]) == 0
    report = json.loads((out / "bounds.json").read_text())
    assert report["metric_kind"] == "linear_mmd" and report["lower"] <= report["upper"]


def test_evaluate_single_seed(tmp_path, dgp_config):
    out = tmp_path / "eval"
    assert cli.main(["-q", "evaluate", "--config", str(dgp_config), "--out", str(out), "--seed", "5", "--jobs", "1"]) == 0
    runs = pd.read_csv(out / "runs.csv")
    assert set(runs.dgp_seed) == {5} and set(runs.train_seed) == {5}


def test_oracle_check(capsys):
    assert cli.main(["-q", "oracle-check", "--suite", "tv_equality", "--trials", "5"]) == 0
    assert capsys.readouterr().out.startswith("PASS tv_equality")


def test_errors_exit_with_two(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert cli.main(["-q", "evaluate", "--config", str(bad)]) == 2
    assert cli.main(["-q", "generate", "--config", str(tmp_path / "absent.json")]) == 2


def test_unknown_suite_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        cli.main(["oracle-check", "--suite", "nope"])
    assert info.value.code == 2
