"""
Multi-seed experiment runner.

Every (dgp_seed, train_seed) pair is an independent run: draw or load the
data, split it, fit every score provider, match in-sample and hold-out treated
units against controls from the same sample, and measure calibration error,
ATT error and sample imbalance. Aggregation happens after all runs, in seed
order, so the report is the same for any ``jobs``.
"""
from __future__ import annotations

import dataclasses
import functools
import json
import logging
import math
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import psutil

from nsmatch import __version__
from nsmatch.core import dgp, matching, metrics, scores
from nsmatch.core.models.common import StageResult
from nsmatch.core.models.dataset import Dataset
from nsmatch.core.models.reports import ReportRow
from nsmatch.core.models.weights import MatchWeights
from nsmatch.errors import NsmatchError
from nsmatch.experiment.config import NN_METHODS, PROPENSITY_METHODS, ExperimentConfig
from nsmatch.experiment.parallel import WorkerJob, run_jobs

logger = logging.getLogger(__name__)

METRICS = ("calibration_error", "att_error", "imbalance")
SAMPLES = ("in_sample", "hold_out")


@dataclass(frozen=True)
class RunRecord:
    dgp_seed: int
    train_seed: int
    method: str
    metric: str
    sample: str
    value: float


class StageLogger:
    """Begin/end records with elapsed time and resident memory for one run."""

    def __init__(self, dgp_seed: int, train_seed: int) -> None:
        self._seeds = (dgp_seed, train_seed)
        self._start_ns = time.perf_counter_ns()
        self._proc = psutil.Process()
        self.records: list[dict[str, Any]] = []

    def begin(self, stage: str) -> None:
        self._append(stage, "begin")

    def end(self, stage: str, **extra: Any) -> None:
        self._append(stage, "end", extra)

    def _append(self, stage: str, status: str, extra: dict[str, Any] | None = None) -> None:
        rec: dict[str, Any] = {
            "stage": stage,
            "status": status,
            "dgp_seed": self._seeds[0],
            "train_seed": self._seeds[1],
            "elapsed_ns": time.perf_counter_ns() - self._start_ns,
            "rss_bytes": self._proc.memory_info().rss,
        }
        if extra:
            rec["extra"] = extra
        self.records.append(rec)


@dataclass(frozen=True)
class RunOutput:
    records: tuple[RunRecord, ...]
    stages: tuple[dict[str, Any], ...] = ()


def load_dataset(cfg: ExperimentConfig, dgp_seed: int) -> Dataset:
    if cfg.csv is not None:
        return dgp.load_csv(cfg.csv.path, standardize=cfg.csv.standardize)
    assert cfg.dgp is not None
    return dgp.generate(dataclasses.replace(cfg.dgp, seed=dgp_seed))


def _random_seed(dgp_seed: int, train_seed: int, sample_idx: int) -> int:
    return int(np.random.SeedSequence([dgp_seed, train_seed, sample_idx]).generate_state(1)[0])


def fit_providers(cfg: ExperimentConfig, splits: dgp.Splits, train_seed: int) -> dict[str, scores.ScoreProvider]:
    train_cfg = dataclasses.replace(cfg.train, rng_seed=train_seed)
    # providers other than the network have no validation set to stop on
    plain_cfg = dataclasses.replace(train_cfg, early_stopping_patience=None)
    fit_set = splits.in_sample
    providers: dict[str, scores.ScoreProvider] = {}
    if any(m in NN_METHODS for m in cfg.methods):
        result, layer_score, ps_score = scores.fit_nn(splits.train, splits.val, train_cfg, layer=cfg.nn_layer)
        logger.debug("network stopped at epoch %d (best %d)", len(result.train_loss), result.best_epoch)
        providers["nn_layer1"] = layer_score
        providers["nn_ps"] = ps_score
    for method in cfg.methods:
        if method == "raw_x":
            providers[method] = scores.RawScore().fit(fit_set.X)
        elif method == "pca":
            providers[method] = scores.fit_pca(fit_set.X, cfg.pca_k)
        elif method == "logreg_ps":
            providers[method] = scores.fit_logreg(fit_set.X, fit_set.T, plain_cfg)
        elif method == "pca_logreg_ps":
            providers[method] = scores.fit_logreg(fit_set.X, fit_set.T, plain_cfg, pca_k=cfg.pca_k)
    return providers


def _weights_for(
    method: str,
    sample: Dataset,
    providers: dict[str, scores.ScoreProvider],
    random_seed: int,
) -> MatchWeights:
    if method == "no_matching":
        return MatchWeights.uniform(sample.treated_idx, sample.control_idx)
    if method == "random":
        return matching.random_match(sample.treated_idx, sample.control_idx, random_seed)
    s = scores.score(providers[method], sample.X)
    return matching.knn_match(s, sample.T)


def _record(out: list[RunRecord], dgp_seed: int, train_seed: int, method: str, sample: str, metric: str, value: float) -> None:
    out.append(RunRecord(dgp_seed, train_seed, method, metric, sample, float(value)))


def run_single(cfg: ExperimentConfig, dgp_seed: int, train_seed: int) -> RunOutput:
    """One (dgp_seed, train_seed) run; top-level so a process pool can pickle it."""
    stages = StageLogger(dgp_seed, train_seed)
    stages.begin("load")
    data = load_dataset(cfg, dgp_seed)
    splits = dgp.split(data, cfg.split, stream=dgp_seed)
    stages.end("load", n=data.n, d=data.d)

    stages.begin("fit")
    providers = fit_providers(cfg, splits, train_seed)
    stages.end("fit", providers=sorted(providers))

    stages.begin("evaluate")
    records: list[RunRecord] = []
    notices: set[str] = set()
    for sample_idx, (sample_name, sample) in enumerate((("in_sample", splits.in_sample), ("hold_out", splits.hold_out))):
        seed = _random_seed(dgp_seed, train_seed, sample_idx)
        for method in cfg.methods:
            weights = _weights_for(method, sample, providers, seed)
            add = functools.partial(_record, records, dgp_seed, train_seed, method, sample_name)

            if method in PROPENSITY_METHODS:
                if sample.e_true is None:
                    notices.add(f"{method}: no true propensity, calibration_error skipped")
                else:
                    e_hat = scores.score(providers[method], sample.X)[:, 0]
                    add("calibration_error", metrics.calibration_error(e_hat, sample.e_true))
            if method != "no_matching":
                if sample.has_ground_truth:
                    att = matching.estimate_att(sample, weights)
                    add("att_error", abs(att - matching.ground_truth_att(sample)))
                else:
                    notices.add(f"{method}: no mu0/mu1, att_error skipped")
            add("imbalance", metrics.sample_imbalance(sample, weights))
    for n in sorted(notices):
        logger.warning("dgp_seed=%d train_seed=%d: %s", dgp_seed, train_seed, n)
    stages.end("evaluate", records=len(records), notices=sorted(notices))
    return RunOutput(records=tuple(records), stages=tuple(stages.records))


def aggregate(records: list[RunRecord], methods: tuple[str, ...]) -> list[ReportRow]:
    """Mean and standard error (sd with ddof=1 over sqrt(n); 0 for a single run)."""
    if not records:
        return []
    frame = pd.DataFrame([dataclasses.asdict(r) for r in records])
    frame = frame.sort_values(["dgp_seed", "train_seed"], kind="stable")
    rows: list[ReportRow] = []
    for method in methods:
        for metric in METRICS:
            for sample in SAMPLES:
                sel = frame[(frame.method == method) & (frame.metric == metric) & (frame["sample"] == sample)]
                if sel.empty:
                    continue
                values = sel["value"].to_numpy(dtype=np.float64)
                n = values.shape[0]
                sd = float(np.std(values, ddof=1)) if n > 1 else 0.0
                rows.append(
                    ReportRow(
                        method=method,
                        metric=metric,
                        sample=sample,
                        mean=float(np.mean(values)),
                        standard_error=sd / math.sqrt(n),
                        n_runs=n,
                    )
                )
    return rows


@dataclass
class ExperimentResult:
    rows: list[ReportRow]
    records: list[RunRecord]
    stages: list[dict[str, Any]] = field(default_factory=list)
    output_dir: Path | None = None


def machine_facts() -> dict[str, Any]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
        "cpu_count_logical": psutil.cpu_count(logical=True),
        "cpu_count_physical": psutil.cpu_count(logical=False),
        "memory_total_bytes": psutil.virtual_memory().total,
    }


def write_outputs(cfg: ExperimentConfig, result: ExperimentResult, out_dir: Path, jobs: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    report = pd.DataFrame([r.to_dict() for r in result.rows], columns=[f.name for f in dataclasses.fields(ReportRow)])
    report.to_csv(out_dir / "report.csv", index=False)
    (out_dir / "report.json").write_text(json.dumps({"rows": [r.to_dict() for r in result.rows]}, indent=2), encoding="utf-8")
    runs = pd.DataFrame([dataclasses.asdict(r) for r in result.records], columns=[f.name for f in dataclasses.fields(RunRecord)])
    runs.to_csv(out_dir / "runs.csv", index=False)
    manifest = {
        "tool": "nsmatch",
        "version": __version__,
        "created_utc": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "config": cfg.to_dict(),
        "jobs": jobs,
        "machine": machine_facts(),
        "stages": result.stages,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str), encoding="utf-8")
    logger.info("wrote report for %d runs to %s", cfg.n_runs, out_dir)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None, jobs: int = 1) -> StageResult[ExperimentResult]:
    pairs = cfg.seed_pairs
    logger.info("experiment: %d runs x %d methods", len(pairs), len(cfg.methods))
    fn = functools.partial(run_single, cfg)
    outcomes = run_jobs([WorkerJob(fn=fn, key=p) for p in pairs], max_workers=jobs)
    failed = [o for o in outcomes if not o.ok]
    if failed:
        first = failed[0]
        raise NsmatchError(f"{len(failed)} of {len(outcomes)} runs failed; first (dgp_seed, train_seed)={first.key}: {first.error}")

    records: list[RunRecord] = []
    stages: list[dict[str, Any]] = []
    for o in outcomes:
        records.extend(o.result.records)
        stages.extend(o.result.stages)
    result = ExperimentResult(rows=aggregate(records, cfg.methods), records=records, stages=stages)
    status = StageResult(data=result)
    for stage in stages:
        for note in stage.get("extra", {}).get("notices", []):
            status = status.with_note(f"dgp_seed={stage['dgp_seed']} train_seed={stage['train_seed']}: {note}")

    target = Path(out_dir) if out_dir is not None else Path(cfg.output_dir)
    write_outputs(cfg, result, target, jobs)
    result.output_dir = target
    return status


@dataclass(frozen=True)
class ReportFrames:
    report: pd.DataFrame
    runs: pd.DataFrame
    manifest: dict[str, Any]


def read_outputs(out_dir: str | Path) -> StageResult[ReportFrames]:
    """Load report.csv, runs.csv and manifest.json; missing pieces become notes, not errors."""
    root = Path(out_dir)
    report_path = root / "report.csv"
    if not report_path.is_file():
        raise NsmatchError(f"no report.csv under {root}")
    report = pd.read_csv(report_path)
    notes: list[str] = []
    runs_path = root / "runs.csv"
    if runs_path.is_file():
        runs = pd.read_csv(runs_path)
    else:
        runs = pd.DataFrame(columns=[f.name for f in dataclasses.fields(RunRecord)])
        notes.append("runs.csv missing")
    manifest: dict[str, Any] = {}
    manifest_path = root / "manifest.json"
    if manifest_path.is_file():
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            notes.append(f"manifest.json unreadable: {e.msg}")
    else:
        notes.append("manifest.json missing")
    status = StageResult(data=ReportFrames(report=report, runs=runs, manifest=manifest))
    for note in notes:
        status = status.with_note(note)
    return status
