from __future__ import annotations

import argparse
import dataclasses
import json
import logging
from pathlib import Path
from typing import Any

import pandas as pd

from nsmatch import __version__
from nsmatch.core import dgp, nn, scores
from nsmatch.errors import ConfigError, NsmatchError
from nsmatch.experiment.bounds_cmd import run_bounds, write_report
from nsmatch.experiment.config import ExperimentConfig
from nsmatch.experiment.oracles import SUITES, run_oracle_check
from nsmatch.experiment.parallel import default_jobs
from nsmatch.experiment.runner import run_experiment

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _read_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def _out_dir(args: argparse.Namespace, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args: argparse.Namespace) -> int:
    doc = _read_config(args.config)
    cfg = dgp.DgpConfig.from_dict(doc.get("dgp", doc))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = _out_dir(args, "out")
    path = out / "data.csv"
    dgp.save_csv(dgp.generate(cfg), path)
    print(path)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    doc = _read_config(args.config)
    experiment_keys = {"train", "split", "dgp", "csv", "methods"}
    section = doc.get("train", {}) if experiment_keys & set(doc) else doc
    cfg = nn.TrainConfig.from_dict(section)
    split_spec = dgp.SplitSpec.from_dict(doc["split"]) if "split" in doc else dgp.SplitSpec()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, rng_seed=args.seed)
    data = dgp.load_csv(args.data, standardize=args.standardize)
    splits = dgp.split(data, split_spec)
    result, layer_score, ps_score = scores.fit_nn(splits.train, splits.val, cfg, layer=args.layer)

    out = _out_dir(args, "out")
    nn.save_model(result.model, out / "model.json")
    for name, provider in (("score_layer.json", layer_score), ("score_ps.json", ps_score)):
        (out / name).write_text(json.dumps(provider.to_dict(), indent=1), encoding="utf-8")
    history = pd.DataFrame({"epoch": range(1, len(result.train_loss) + 1), "train_bce": result.train_loss})
    if result.val_loss:
        history["val_bce"] = result.val_loss
    history.to_csv(out / "history.csv", index=False)
    logger.info("best epoch %d of %d, early stop: %s", result.best_epoch, len(result.train_loss), result.stopped_early)
    print(out / "model.json")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.from_dict(_read_config(args.config))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, dgp_seeds=(args.seed,), train_seeds=(args.seed,))
    jobs = args.jobs if args.jobs is not None else default_jobs()
    status = run_experiment(cfg, out_dir=args.out, jobs=jobs)
    for note in status.notes:
        logger.warning(note)
    assert status.data.output_dir is not None
    print(status.data.output_dir / "report.csv")
    return 0


def cmd_bounds(args: argparse.Namespace) -> int:
    report = run_bounds(
        args.model,
        args.data,
        layer=args.layer,
        metric=args.metric,
        use_domain_bound=args.domain_bound,
        standardize=args.standardize,
    )
    print(json.dumps(report.to_dict(), indent=2))
    if args.out:
        write_report(report, _out_dir(args, "out") / "bounds.json")
    return 0


def cmd_oracle_check(args: argparse.Namespace) -> int:
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    failed = 0
    for name in names:
        summary = run_oracle_check(name, args.trials, args.seed or 0)
        print(summary.line())
        failed += not summary.passed
    return 1 if failed else 0


def cmd_gui(args: argparse.Namespace) -> int:
    try:
        from nsmatch.app import run
    except ImportError as e:
        raise NsmatchError(f"the dashboard needs PySide6 (pip install PySide6): {e}") from e
    return run(args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsmatch", description="Neural score matching: balancing scores, matching and imbalance bounds.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = p.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a synthetic dataset to CSV")
    g.add_argument("--config", help="DgpConfig JSON (or an experiment config with a 'dgp' section)")
    g.add_argument("--out", help="output directory (default: out)")
    g.add_argument("--seed", type=int, help="override the DGP seed")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the propensity network on a CSV dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="TrainConfig JSON (or an experiment config with 'train'/'split')")
    t.add_argument("--out")
    t.add_argument("--seed", type=int, help="override the training seed")
    t.add_argument("--layer", type=int, default=1, help="layer whose pre-activation is the score")
    t.add_argument("--standardize", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="run a multi-seed experiment and write report.csv")
    e.add_argument("--config", required=True)
    e.add_argument("--out")
    e.add_argument("--seed", type=int, help="run the single seed pair (seed, seed)")
    e.add_argument("--jobs", type=int, help="worker processes (default: physical cores)")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bounds", help="imbalance bounds for a trained model or linear map")
    b.add_argument("--model", required=True, help="model, score provider or {'W': ..., 'bias': ...} JSON")
    b.add_argument("--data", required=True)
    b.add_argument("--layer", type=int, default=1)
    b.add_argument("--metric", choices=("wass", "linear_mmd"), default="wass")
    b.add_argument("--domain-bound", action="store_true", help="bound sigmoid inputs by the observed max |pre-activation|")
    b.add_argument("--standardize", action="store_true")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bounds)

    o = sub.add_parser("oracle-check", help="run exact property suites")
    o.add_argument("--suite", choices=(*sorted(SUITES), "all"), default="all")
    o.add_argument("--trials", type=int)
    o.add_argument("--seed", type=int)
    o.set_defaults(func=cmd_oracle_check)

    w = sub.add_parser("gui", help="open the report and oracle dashboard")
    w.add_argument("--out", help="report directory to open")
    w.set_defaults(func=cmd_gui)
    return p


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return int(args.func(args))
    except NsmatchError as e:
        logger.error("%s", e)
        return 2
