from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from nsmatch.core.dgp import DgpConfig, SplitSpec
from nsmatch.core.nn import TrainConfig
from nsmatch.errors import ConfigError

NN_METHODS = ("nn_layer1", "nn_ps")
METHODS = ("nn_layer1", "nn_ps", "raw_x", "random", "logreg_ps", "pca", "pca_logreg_ps", "no_matching")
PROPENSITY_METHODS = frozenset({"nn_ps", "logreg_ps", "pca_logreg_ps"})


@dataclass(frozen=True)
class CsvSource:
    path: str
    standardize: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a data source, the methods to compare, and the seed grid.

    Exactly one of ``dgp`` and ``csv`` is set. With a CSV source the DGP seed
    only selects the split stream.
    """

    dgp: DgpConfig | None = field(default_factory=DgpConfig)
    csv: CsvSource | None = None
    methods: tuple[str, ...] = METHODS
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    dgp_seeds: tuple[int, ...] = (0,)
    train_seeds: tuple[int, ...] = (0,)
    pca_k: int = 5
    nn_layer: int = 1
    output_dir: str = "out"

    def __post_init__(self) -> None:
        if (self.dgp is None) == (self.csv is None):
            raise ConfigError("set exactly one of 'dgp' and 'csv'")
        if not self.methods:
            raise ConfigError("methods must not be empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        if not self.dgp_seeds or not self.train_seeds:
            raise ConfigError("need at least one dgp seed and one train seed")
        if self.pca_k < 1:
            raise ConfigError("pca_k must be >= 1")
        if self.nn_layer < 1:
            raise ConfigError("nn_layer must be >= 1")

    @property
    def n_runs(self) -> int:
        return len(self.dgp_seeds) * len(self.train_seeds)

    @property
    def seed_pairs(self) -> list[tuple[int, int]]:
        return sorted((d, t) for d in self.dgp_seeds for t in self.train_seeds)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExperimentConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        if d.get("csv") is not None:
            src = d["csv"]
            if isinstance(src, str):
                src = {"path": src}
            extra = set(src) - {"path", "standardize"}
            if extra:
                raise ConfigError(f"unknown csv keys: {sorted(extra)}")
            kwargs["csv"] = CsvSource(path=str(src["path"]), standardize=bool(src.get("standardize", False)))
            kwargs["dgp"] = None
        if d.get("dgp") is not None:
            kwargs["dgp"] = DgpConfig.from_dict(d["dgp"])
        if "train" in d:
            kwargs["train"] = TrainConfig.from_dict(d["train"])
        if "split" in d:
            kwargs["split"] = SplitSpec.from_dict(d["split"])
        for key in ("methods", "dgp_seeds", "train_seeds"):
            if key in d:
                kwargs[key] = tuple(d[key])
        for key in ("pca_k", "nn_layer"):
            if key in d:
                kwargs[key] = int(d[key])
        if "output_dir" in d:
            kwargs["output_dir"] = str(d["output_dir"])
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_json(cls, path: str | Path) -> ExperimentConfig:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["dgp_seeds"] = list(self.dgp_seeds)
        d["train_seeds"] = list(self.train_seeds)
        d["split"]["ratios"] = list(self.split.ratios)
        return d
