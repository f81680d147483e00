import json
import math

import numpy as np
import pandas as pd
import pytest

from nsmatch.core import dgp, nn, scores
from nsmatch.core.models.dataset import Dataset
from nsmatch.errors import ConfigError, NsmatchError, ProblemSizeError
from nsmatch.experiment import bounds_cmd, oracles, parallel, runner
from nsmatch.experiment.config import ExperimentConfig

SMALL = {
    "dgp": {"n": 160, "d_observed": 4, "d_latent": 2, "noise_sd": 0.5},
    "train": {"max_epochs": 2, "batch_size": 32, "learning_rate": 0.05},
    "pca_k": 2,
}


def _square(a: int, b: int) -> int:
    return a * b


def _boom(a: int) -> int:
    raise ValueError(f"bad {a}")


def test_config_defaults_and_seed_grid():
    cfg = ExperimentConfig.from_dict({**SMALL, "dgp_seeds": [2, 0], "train_seeds": [1, 0]})
    assert cfg.n_runs == 4
    assert cfg.seed_pairs == [(0, 0), (0, 1), (2, 0), (2, 1)]
    assert cfg.dgp.n == 160 and cfg.train.max_epochs == 2


def test_config_csv_source():
    cfg = ExperimentConfig.from_dict({"csv": "data.csv"})
    assert cfg.dgp is None and cfg.csv.path == "data.csv"
    with pytest.raises(ConfigError, match="exactly one"):
        ExperimentConfig.from_dict({"csv": "data.csv", "dgp": {}})


@pytest.mark.parametrize("doc", [{"methods": ["magic"]}, {"seeds": [1]}, {"methods": []}, {"dgp_seeds": []}])
def test_config_rejects(doc):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_config_json_round_trip(tmp_path):
    cfg = ExperimentConfig.from_dict({**SMALL, "methods": ["raw_x", "pca"], "dgp_seeds": [3]})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()), encoding="utf-8")
    assert ExperimentConfig.from_json(path) == cfg


def test_run_jobs_sorted_and_errors_captured():
    jobs = [parallel.WorkerJob(fn=_square, key=k) for k in [(3, 1), (1, 2), (2, 2)]]
    out = parallel.run_jobs(jobs, max_workers=2)
    assert [o.key for o in out] == [(1, 2), (2, 2), (3, 1)]
    assert [o.result for o in out] == [2, 4, 3]
    failed = parallel.run_jobs([parallel.WorkerJob(fn=_boom, key=(7,))])
    assert not failed[0].ok and "ValueError: bad 7" in failed[0].error


def test_default_jobs_positive():
    assert parallel.default_jobs() >= 1


def test_aggregate_mean_and_standard_error():
    records = [runner.RunRecord(d, 0, "raw_x", "imbalance", "in_sample", v) for d, v in enumerate([1.0, 2.0, 3.0])]
    (row,) = runner.aggregate(records, ("raw_x",))
    assert row.mean == pytest.approx(2.0)
    assert row.standard_error == pytest.approx(1.0 / math.sqrt(3.0))
    assert row.n_runs == 3
    (single,) = runner.aggregate(records[:1], ("raw_x",))
    assert single.standard_error == 0.0


def _constant_csv(tmp_path) -> str:
    # every unit shares one covariate vector, so any match is exact
    n = 60
    T = np.arange(n) % 2
    mu0 = np.full(n, 1.5)
    data = Dataset(X=np.tile([1.0, -2.0], (n, 1)), T=T, Y=mu0 + 2.0 * T, mu0=mu0, mu1=mu0 + 2.0)
    path = tmp_path / "const.csv"
    dgp.save_csv(data, path)
    return str(path)


def test_exact_matches_give_zero_error(tmp_path):
    cfg = ExperimentConfig.from_dict(
        {"csv": _constant_csv(tmp_path), "methods": ["raw_x", "logreg_ps"], "train": {"max_epochs": 1}}
    )
    status = runner.run_experiment(cfg, out_dir=tmp_path / "out")
    rows = {(r.method, r.metric, r.sample): r.mean for r in status.data.rows}
    assert rows[("raw_x", "att_error", "in_sample")] == pytest.approx(0.0, abs=1e-12)
    assert rows[("raw_x", "imbalance", "hold_out")] == 0.0
    assert not any(m == "calibration_error" for _, m, _ in rows)
    assert status.status == "warn"
    assert any("calibration_error skipped" in n for n in status.notes)


def test_calibration_only_for_propensity_methods(tmp_path):
    cfg = ExperimentConfig.from_dict({**SMALL, "methods": ["nn_ps", "raw_x", "no_matching"]})
    status = runner.run_experiment(cfg, out_dir=tmp_path)
    metrics_by_method = {}
    for r in status.data.rows:
        metrics_by_method.setdefault(r.method, set()).add(r.metric)
    assert "calibration_error" in metrics_by_method["nn_ps"]
    assert "calibration_error" not in metrics_by_method["raw_x"]
    assert metrics_by_method["no_matching"] == {"imbalance"}


def test_outputs_are_deterministic_and_parallel_independent(tmp_path):
    doc = {**SMALL, "methods": ["nn_layer1", "pca", "random"], "dgp_seeds": [0, 1]}
    cfg = ExperimentConfig.from_dict(doc)
    runner.run_experiment(cfg, out_dir=tmp_path / "a")
    runner.run_experiment(cfg, out_dir=tmp_path / "b", jobs=2)
    for name in ("report.csv", "runs.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert manifest["jobs"] == 2 and manifest["config"]["dgp_seeds"] == [0, 1]
    assert {s["stage"] for s in manifest["stages"]} == {"load", "fit", "evaluate"}


def test_report_recomputable_from_runs(tmp_path):
    cfg = ExperimentConfig.from_dict({**SMALL, "methods": ["pca", "random"], "dgp_seeds": [0, 1, 2]})
    runner.run_experiment(cfg, out_dir=tmp_path)
    runs = pd.read_csv(tmp_path / "runs.csv")
    report = pd.read_csv(tmp_path / "report.csv")
    grouped = runs.groupby(["method", "metric", "sample"])["value"].mean()
    for row in report.itertuples(index=False):
        assert row.mean == pytest.approx(grouped[(row.method, row.metric, row.sample)], rel=1e-12)


def test_failed_run_raises(tmp_path):
    cfg = ExperimentConfig.from_dict({"csv": str(tmp_path / "missing.csv"), "methods": ["raw_x"]})
    with pytest.raises(NsmatchError, match="runs failed"):
        runner.run_experiment(cfg, out_dir=tmp_path)


def test_read_outputs(tmp_path):
    cfg = ExperimentConfig.from_dict({**SMALL, "methods": ["raw_x"]})
    runner.run_experiment(cfg, out_dir=tmp_path)
    loaded = runner.read_outputs(tmp_path)
    assert loaded.status == "ok"
    assert list(loaded.data.report.columns) == ["method", "metric", "sample", "mean", "standard_error", "n_runs"]
    (tmp_path / "manifest.json").unlink()
    assert runner.read_outputs(tmp_path).warning_count == 1
    with pytest.raises(NsmatchError):
        runner.read_outputs(tmp_path / "nowhere")


@pytest.fixture
def bounds_data(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 2))
    T = (np.arange(30) < 12).astype(int)
    path = tmp_path / "data.csv"
    dgp.save_csv(Dataset(X=X, T=T, Y=np.zeros(30)), path)
    return path, X, T


def test_bounds_identity_map(tmp_path, bounds_data):
    path, _, _ = bounds_data
    doc = tmp_path / "w.json"
    doc.write_text(json.dumps({"W": [[1.0, 0.0], [0.0, 1.0]]}), encoding="utf-8")
    rep = bounds_cmd.run_bounds(doc, path, metric="linear_mmd")
    assert rep.lower == pytest.approx(rep.score_imbalance) and rep.upper == pytest.approx(rep.score_imbalance)


def test_bounds_first_layer_of_model(tmp_path, bounds_data):
    path, X, T = bounds_data
    model = nn.default_architecture(2, rng_seed=3)
    nn.save_model(model, tmp_path / "model.json")
    rep = bounds_cmd.run_bounds(tmp_path / "model.json", path, metric="linear_mmd")
    W = model.layers[0].weights
    s = np.linalg.svd(W, compute_uv=False)
    assert rep.lower == pytest.approx(rep.score_imbalance / s[0])
    assert rep.upper == pytest.approx(rep.score_imbalance / s[-1])


def test_bounds_score_provider_document(tmp_path, bounds_data):
    path, X, _ = bounds_data
    provider = scores.fit_pca(X, 2)
    (tmp_path / "p.json").write_text(json.dumps(provider.to_dict()), encoding="utf-8")
    rep = bounds_cmd.run_bounds(tmp_path / "p.json", path, metric="wass")
    # orthonormal components: the bounds collapse
    assert rep.lower == pytest.approx(rep.upper)


def test_bounds_sigmoid_layer_is_vacuous(tmp_path, bounds_data):
    path, _, _ = bounds_data
    model = nn.init_mlp([2, 3, 1], [nn.Activation.sigmoid(), nn.Activation.sigmoid()], rng_seed=0)
    nn.save_model(model, tmp_path / "m.json")
    rep = bounds_cmd.run_bounds(tmp_path / "m.json", path, layer=2, metric="linear_mmd")
    assert rep.to_dict()["upper"] == "inf"


def test_bounds_size_cap(tmp_path, bounds_data):
    path, _, _ = bounds_data
    doc = tmp_path / "w.json"
    doc.write_text(json.dumps({"W": [[1.0, 0.0]]}), encoding="utf-8")
    with pytest.raises(ProblemSizeError) as info:
        bounds_cmd.run_bounds(doc, path, metric="wass", cap=100)
    assert info.value.cap == 100


@pytest.mark.parametrize("suite", sorted(oracles.SUITES))
def test_oracle_suites_pass(suite):
    summary = oracles.run_oracle_check(suite, trials=3, seed=11)
    assert summary.passed, summary.line()
    assert summary.line().startswith("PASS")


def test_oracle_rejects_unknown_suite_and_bad_trials():
    with pytest.raises(ConfigError):
        oracles.run_oracle_check("nope")
    with pytest.raises(ConfigError):
        oracles.run_oracle_check("tv_equality", trials=0)
