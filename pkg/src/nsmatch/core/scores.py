from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np

from nsmatch.core import linalg, nn
from nsmatch.core.models.dataset import Dataset
from nsmatch.errors import ConfigError, DataFormatError, NotFittedError, ShapeError

logger = logging.getLogger(__name__)

PROVIDER_FORMAT = "nsmatch-score-provider"


@dataclass(frozen=True, eq=False)
class LinearMapMeta:
    """score(x) = weights @ x + bias."""

    weights: np.ndarray
    bias: np.ndarray


def _floats_hex(a: np.ndarray) -> list[str]:
    return [float(v).hex() for v in np.asarray(a, dtype=np.float64).ravel()]


def _floats_unhex(values: list[str], shape: tuple[int, ...]) -> np.ndarray:
    return np.array([float.fromhex(v) for v in values], dtype=np.float64).reshape(shape)


class ScoreProvider(ABC):
    kind: ClassVar[str]
    # propensity providers produce a 1-dim score in (0, 1) usable for calibration
    is_propensity: ClassVar[bool] = False

    def __init__(self) -> None:
        self._input_dim: int | None = None

    @property
    def fitted(self) -> bool:
        return self._input_dim is not None

    @property
    def input_dim(self) -> int:
        if self._input_dim is None:
            raise NotFittedError(f"{self.kind} provider is not fitted")
        return self._input_dim

    @property
    @abstractmethod
    def dim(self) -> int: ...

    def _check(self, X: np.ndarray) -> np.ndarray:
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.shape[1] != self.input_dim:
            raise ShapeError(f"{self.kind} expects {self.input_dim} covariates, got {arr.shape[1]}")
        return arr

    @abstractmethod
    def score(self, X: np.ndarray) -> np.ndarray: ...

    def linear_map(self) -> LinearMapMeta | None:
        return None

    @abstractmethod
    def _state(self) -> dict[str, Any]: ...

    def to_dict(self) -> dict[str, Any]:
        return {"format": PROVIDER_FORMAT, "kind": self.kind, "input_dim": self.input_dim, **self._state()}


class RawScore(ScoreProvider):
    kind = "raw_x"

    def fit(self, X: np.ndarray) -> RawScore:
        self._input_dim = int(np.asarray(X).reshape(len(X), -1).shape[1])
        return self

    @property
    def dim(self) -> int:
        return self.input_dim

    def score(self, X: np.ndarray) -> np.ndarray:
        return self._check(X).copy()

    def linear_map(self) -> LinearMapMeta:
        return LinearMapMeta(weights=np.eye(self.input_dim), bias=np.zeros(self.input_dim))

    def _state(self) -> dict[str, Any]:
        return {}


class PcaScore(ScoreProvider):
    kind = "pca"

    def __init__(self, k: int = 5) -> None:
        super().__init__()
        if k < 1:
            raise ConfigError("PCA dimension k must be >= 1")
        self.k = k
        self.mean_: np.ndarray | None = None
        self.components_: np.ndarray | None = None
        self.rank_reduced = False

    def fit(self, X: np.ndarray) -> PcaScore:
        X = linalg.as_matrix(X)
        if X.shape[0] < 2:
            raise ShapeError("PCA needs at least two rows")
        mean = X.mean(axis=0)
        res = linalg.svd(X - mean)
        s = res.singular_values
        rank = int(np.sum(s > linalg.default_rank_tol(X, s)))
        k = self.k
        if k > rank:
            logger.warning("PCA k=%d exceeds the rank %d of the centred data; reducing to %d", k, rank, max(rank, 1))
            k = max(rank, 1)
            self.rank_reduced = True
        comps = res.v_t[:k].copy()
        # sign convention: largest-magnitude loading of each component is positive
        flip = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
        comps *= np.where(flip == 0, 1.0, flip)[:, None]
        self.mean_ = mean
        self.components_ = comps
        self._input_dim = X.shape[1]
        return self

    @property
    def dim(self) -> int:
        if self.components_ is None:
            raise NotFittedError("pca provider is not fitted")
        return self.components_.shape[0]

    def score(self, X: np.ndarray) -> np.ndarray:
        X = self._check(X)
        assert self.components_ is not None and self.mean_ is not None
        return (X - self.mean_) @ self.components_.T

    def linear_map(self) -> LinearMapMeta:
        if self.components_ is None or self.mean_ is None:
            raise NotFittedError("pca provider is not fitted")
        return LinearMapMeta(weights=self.components_.copy(), bias=-(self.components_ @ self.mean_))

    def _state(self) -> dict[str, Any]:
        assert self.components_ is not None and self.mean_ is not None
        return {
            "k": self.k,
            "rank_reduced": self.rank_reduced,
            "components_shape": list(self.components_.shape),
            "components": _floats_hex(self.components_),
            "mean": _floats_hex(self.mean_),
        }


class LogRegScore(ScoreProvider):
    """Logistic-regression propensity, optionally on PCA features."""

    is_propensity = True

    def __init__(self, cfg: nn.TrainConfig | None = None, pca_k: int | None = None) -> None:
        super().__init__()
        self.cfg = cfg or nn.TrainConfig()
        self.pca = PcaScore(pca_k) if pca_k is not None else None
        self.model: nn.Mlp | None = None
        self.history: list[float] = []

    @property
    def kind(self) -> str:  # type: ignore[override]
        return "pca_logreg_ps" if self.pca is not None else "logreg_ps"

    def fit(self, X: np.ndarray, T: np.ndarray) -> LogRegScore:
        X = linalg.as_matrix(X)
        feats = self.pca.fit(X).score(X) if self.pca is not None else X
        ds = Dataset(X=feats, T=np.asarray(T).reshape(-1), Y=np.zeros(feats.shape[0]))
        result = nn.train(nn.logistic_model(feats.shape[1]), ds, None, self.cfg)
        self.model = result.model
        self.history = result.train_loss
        self._input_dim = X.shape[1]
        return self

    @property
    def dim(self) -> int:
        return 1

    def score(self, X: np.ndarray) -> np.ndarray:
        X = self._check(X)
        assert self.model is not None
        feats = self.pca.score(X) if self.pca is not None else X
        return np.asarray(nn.forward(self.model, feats)).reshape(-1, 1)

    def _state(self) -> dict[str, Any]:
        assert self.model is not None
        return {
            "model": nn.model_to_dict(self.model),
            "pca": None if self.pca is None else self.pca.to_dict(),
        }


class NnLayerScore(ScoreProvider):
    kind = "nn_layer"

    def __init__(self, model: nn.Mlp, layer: int = 1) -> None:
        super().__init__()
        if not 1 <= layer <= model.depth:
            raise ConfigError(f"layer must be in [1, {model.depth}], got {layer}")
        self.model = model
        self.layer = layer
        self._input_dim = model.input_dim

    @property
    def dim(self) -> int:
        return self.model.layers[self.layer - 1].out_dim

    def score(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(nn.pre_activation(self.model, self._check(X), self.layer))

    def linear_map(self) -> LinearMapMeta | None:
        if self.layer != 1:
            return None
        first = self.model.layers[0]
        return LinearMapMeta(weights=first.weights.copy(), bias=first.bias.copy())

    def _state(self) -> dict[str, Any]:
        return {"layer": self.layer, "model": nn.model_to_dict(self.model)}


class NnPsScore(ScoreProvider):
    kind = "nn_ps"
    is_propensity = True

    def __init__(self, model: nn.Mlp) -> None:
        super().__init__()
        self.model = model
        self._input_dim = model.input_dim

    @property
    def dim(self) -> int:
        return 1

    def score(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(nn.forward(self.model, self._check(X))).reshape(-1, 1)

    def _state(self) -> dict[str, Any]:
        return {"model": nn.model_to_dict(self.model)}


class RandomScore(ScoreProvider):
    """Seeded i.i.d. noise; carries no covariate information."""

    kind = "random"

    def __init__(self, seed: int = 0) -> None:
        super().__init__()
        self.seed = seed

    def fit(self, X: np.ndarray) -> RandomScore:
        self._input_dim = int(np.asarray(X).reshape(len(X), -1).shape[1])
        return self

    @property
    def dim(self) -> int:
        return 1

    def score(self, X: np.ndarray) -> np.ndarray:
        X = self._check(X)
        return np.random.default_rng(self.seed).standard_normal((X.shape[0], 1))

    def _state(self) -> dict[str, Any]:
        return {"seed": self.seed}


def fit_pca(X: np.ndarray, k: int = 5) -> PcaScore:
    return PcaScore(k).fit(X)


def fit_logreg(X: np.ndarray, T: np.ndarray, cfg: nn.TrainConfig | None = None, pca_k: int | None = None) -> LogRegScore:
    return LogRegScore(cfg, pca_k).fit(X, T)


def fit_nn(
    train_set: Dataset,
    val_set: Dataset | None,
    cfg: nn.TrainConfig,
    layer: int = 1,
) -> tuple[nn.TrainResult, NnLayerScore, NnPsScore]:
    """Train the default architecture once and expose both its layer score and its propensity."""
    model = nn.default_architecture(train_set.d, rng_seed=cfg.rng_seed)
    result = nn.train(model, train_set, val_set, cfg)
    return result, NnLayerScore(result.model, layer), NnPsScore(result.model)


def score(provider: ScoreProvider, X: np.ndarray) -> np.ndarray:
    if not provider.fitted:
        raise NotFittedError(f"{provider.kind} provider is not fitted")
    return provider.score(X)


def linear_map_of(provider: ScoreProvider) -> LinearMapMeta | None:
    if not provider.fitted:
        raise NotFittedError(f"{provider.kind} provider is not fitted")
    return provider.linear_map()


def provider_from_dict(d: dict[str, Any]) -> ScoreProvider:
    if d.get("format") != PROVIDER_FORMAT:
        raise DataFormatError(f"not an {PROVIDER_FORMAT} document")
    kind = d.get("kind")
    try:
        input_dim = int(d["input_dim"])
        if kind == "raw_x":
            return RawScore().fit(np.zeros((1, input_dim)))
        if kind == "random":
            return RandomScore(int(d["seed"])).fit(np.zeros((1, input_dim)))
        if kind == "nn_layer":
            return NnLayerScore(nn.model_from_dict(d["model"]), int(d["layer"]))
        if kind == "nn_ps":
            return NnPsScore(nn.model_from_dict(d["model"]))
        if kind == "pca":
            p = PcaScore(int(d["k"]))
            p.components_ = _floats_unhex(d["components"], tuple(d["components_shape"]))
            p.mean_ = _floats_unhex(d["mean"], (input_dim,))
            p.rank_reduced = bool(d["rank_reduced"])
            p._input_dim = input_dim
            return p
        if kind in ("logreg_ps", "pca_logreg_ps"):
            pca = provider_from_dict(d["pca"]) if d.get("pca") else None
            lr = LogRegScore(pca_k=None)
            lr.pca = pca  # type: ignore[assignment]
            lr.model = nn.model_from_dict(d["model"])
            lr._input_dim = input_dim
            return lr
    except (KeyError, ValueError, TypeError) as e:
        raise DataFormatError(f"malformed score provider document: {e}") from e
    raise DataFormatError(f"unknown score provider kind {kind!r}")
