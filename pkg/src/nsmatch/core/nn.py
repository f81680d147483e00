"""
Hierarchical propensity model e(X) = f_L o ... o f_1 (X).

Layers are dense affine maps followed by an activation; the last layer is a
single sigmoid unit. ``pre_activation`` exposes the affine output of any
layer, which is what the scores module matches on.
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
from scipy.special import expit

from nsmatch.core.models.dataset import Dataset
from nsmatch.errors import ConfigError, DataFormatError, ShapeError, TrainingError

logger = logging.getLogger(__name__)

ActivationName = Literal["identity", "leaky_relu", "sigmoid"]

DEFAULT_LEAKY_SLOPE = 0.01
MODEL_FORMAT = "nsmatch-mlp"
# Open interval (0, 1) for propensities; expit alone saturates to 0.0 and 1.0.
P_LOW = float(np.nextafter(0.0, 1.0))
P_HIGH = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class Activation:
    kind: ActivationName = "identity"
    slope: float = DEFAULT_LEAKY_SLOPE

    def __post_init__(self) -> None:
        if self.kind not in ("identity", "leaky_relu", "sigmoid"):
            raise ConfigError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu" and not (0.0 < self.slope < 1.0):
            raise ConfigError(f"leaky ReLU slope must lie in (0, 1), got {self.slope}")

    @classmethod
    def identity(cls) -> Activation:
        return cls("identity")

    @classmethod
    def leaky_relu(cls, slope: float = DEFAULT_LEAKY_SLOPE) -> Activation:
        return cls("leaky_relu", slope)

    @classmethod
    def sigmoid(cls) -> Activation:
        return cls("sigmoid")

    def __call__(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return z
        if self.kind == "leaky_relu":
            return np.where(z >= 0, z, self.slope * z)
        return expit(z)

    def derivative(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return np.ones_like(z)
        if self.kind == "leaky_relu":
            return np.where(z >= 0, 1.0, self.slope)
        s = expit(z)
        return s * (1.0 - s)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind}
        if self.kind == "leaky_relu":
            d["slope"] = self.slope.hex()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Activation:
        kind = d.get("kind")
        if kind == "leaky_relu":
            return cls(kind, float.fromhex(d["slope"]))
        return cls(kind)  # type: ignore[arg-type]


@dataclass(eq=False)
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = field(default_factory=Activation.identity)

    def __post_init__(self) -> None:
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ShapeError(f"bias has {self.bias.shape[0]} entries, weights have {self.weights.shape[0]} rows")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ShapeError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(eq=False)
class Mlp:
    layers: list[DenseLayer]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ShapeError("an Mlp needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(f"layer dims do not chain: {prev.weights.shape} -> {nxt.weights.shape}")
        last = self.layers[-1]
        if last.out_dim != 1 or last.activation.kind != "sigmoid":
            raise ShapeError("the final layer must have one output unit with a sigmoid activation")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    def copy(self) -> Mlp:
        return copy.deepcopy(self)

    def input_activation(self, layer_index: int) -> Activation:
        """The activation applied to the inputs of layer ``layer_index`` (identity for the first)."""
        if layer_index == 1:
            return Activation.identity()
        return self.layers[layer_index - 2].activation


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    weight_decay: float = 1e-2
    batch_size: int = 100
    max_epochs: int = 200
    early_stopping_patience: int | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.early_stopping_patience is not None and self.early_stopping_patience < 1:
            raise ConfigError("early_stopping_patience must be >= 1 when set")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TrainConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class TrainResult:
    model: Mlp
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    stopped_early: bool


@dataclass(eq=False)
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])


def _as_batch(model: Mlp, x: np.ndarray) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != model.input_dim:
        raise ShapeError(f"input shape {np.shape(x)} does not match first layer in_dim {model.input_dim}")
    return arr, single


def _forward_cache(model: Mlp, X: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    zs: list[np.ndarray] = []
    acts: list[np.ndarray] = [X]
    a = X
    for layer in model.layers:
        z = a @ layer.weights.T + layer.bias
        a = layer.activation(z)
        zs.append(z)
        acts.append(a)
    return zs, acts


def logits(model: Mlp, x: np.ndarray) -> np.ndarray:
    X, _ = _as_batch(model, x)
    return _forward_cache(model, X)[0][-1][:, 0]


def forward(model: Mlp, x: np.ndarray) -> np.ndarray | float:
    X, single = _as_batch(model, x)
    p = np.clip(expit(_forward_cache(model, X)[0][-1][:, 0]), P_LOW, P_HIGH)
    return float(p[0]) if single else p


def pre_activation(model: Mlp, x: np.ndarray, layer_index: int) -> np.ndarray:
    if not 1 <= layer_index <= model.depth:
        raise ShapeError(f"layer_index must be in [1, {model.depth}], got {layer_index}")
    X, single = _as_batch(model, x)
    a = X
    z = X
    for layer in model.layers[:layer_index]:
        z = a @ layer.weights.T + layer.bias
        a = layer.activation(z)
    return z[0] if single else z


def _penalty(model: Mlp) -> float:
    return float(sum(np.sum(l.weights**2) + np.sum(l.bias**2) for l in model.layers))


def bce_loss(model: Mlp, X: np.ndarray, T: np.ndarray, weight_decay: float = 0.0) -> float:
    """Mean binary cross-entropy, computed from logits, plus (weight_decay / 2) ||theta||^2."""
    z = logits(model, X)
    t = np.asarray(T, dtype=np.float64).reshape(-1)
    loss = float(np.mean(np.logaddexp(0.0, z) - t * z))
    if weight_decay:
        loss += 0.5 * weight_decay * _penalty(model)
    return loss


def gradient(model: Mlp, X: np.ndarray, T: np.ndarray, weight_decay: float = 0.0) -> Gradients:
    Xb, _ = _as_batch(model, X)
    t = np.asarray(T, dtype=np.float64).reshape(-1, 1)
    if Xb.shape[0] == 0:
        raise ShapeError("gradient needs a non-empty batch")
    if t.shape[0] != Xb.shape[0]:
        raise ShapeError(f"{t.shape[0]} labels for {Xb.shape[0]} inputs")
    zs, acts = _forward_cache(model, Xb)
    delta = (expit(zs[-1]) - t) / Xb.shape[0]

    grads_w: list[np.ndarray] = [np.empty(0)] * model.depth
    grads_b: list[np.ndarray] = [np.empty(0)] * model.depth
    for l in range(model.depth - 1, -1, -1):
        layer = model.layers[l]
        grads_w[l] = delta.T @ acts[l] + weight_decay * layer.weights
        grads_b[l] = delta.sum(axis=0) + weight_decay * layer.bias
        if l > 0:
            delta = (delta @ layer.weights) * model.layers[l - 1].activation.derivative(zs[l - 1])
    return Gradients(weights=grads_w, biases=grads_b)


def sgd_step(model: Mlp, grads: Gradients, learning_rate: float) -> None:
    for layer, gw, gb in zip(model.layers, grads.weights, grads.biases):
        layer.weights -= learning_rate * gw
        layer.bias -= learning_rate * gb


def parameter_count(model: Mlp) -> int:
    return sum(l.weights.size + l.bias.size for l in model.layers)


def flatten_parameters(model: Mlp) -> np.ndarray:
    return np.concatenate([np.concatenate([l.weights.ravel(), l.bias]) for l in model.layers])


def set_flat_parameters(model: Mlp, theta: np.ndarray) -> Mlp:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[0] != parameter_count(model):
        raise ShapeError(f"expected {parameter_count(model)} parameters, got {theta.shape[0]}")
    out = model.copy()
    pos = 0
    for layer in out.layers:
        n_w = layer.weights.size
        layer.weights = theta[pos : pos + n_w].reshape(layer.weights.shape).copy()
        pos += n_w
        layer.bias = theta[pos : pos + layer.out_dim].copy()
        pos += layer.out_dim
    return out


def init_mlp(widths: list[int], activations: list[Activation], rng_seed: int = 0) -> Mlp:
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    if len(widths) != len(activations) + 1:
        raise ShapeError("need one activation per layer")
    rng = np.random.default_rng(rng_seed)
    layers = []
    for fan_in, fan_out, act in zip(widths[:-1], widths[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(
            DenseLayer(
                weights=rng.uniform(-limit, limit, size=(fan_out, fan_in)),
                bias=np.zeros(fan_out),
                activation=act,
            )
        )
    return Mlp(layers)


def default_architecture(input_dim: int, rng_seed: int = 0, slope: float = DEFAULT_LEAKY_SLOPE) -> Mlp:
    """input_dim -> 5 -> 100 -> 100 -> 1, leaky ReLU on hidden layers, sigmoid head."""
    if input_dim < 1:
        raise ShapeError("input_dim must be >= 1")
    leaky = Activation.leaky_relu(slope)
    return init_mlp([input_dim, 5, 100, 100, 1], [leaky, leaky, leaky, Activation.sigmoid()], rng_seed)


def logistic_model(input_dim: int) -> Mlp:
    return Mlp([DenseLayer(np.zeros((1, input_dim)), np.zeros(1), Activation.sigmoid())])


def train(model: Mlp, train_set: Dataset, val_set: Dataset | None, cfg: TrainConfig) -> TrainResult:
    X, T = train_set.X, train_set.T.astype(np.float64)
    n_t = int(T.sum())
    if n_t == 0 or n_t == T.shape[0]:
        raise TrainingError("training set has a single class; binary cross-entropy is degenerate")
    if cfg.early_stopping_patience is not None and val_set is None:
        raise ConfigError("early stopping needs a validation set")
    _as_batch(model, X)

    work = model.copy()
    rng = np.random.default_rng(cfg.rng_seed)
    n = X.shape[0]
    train_hist: list[float] = []
    val_hist: list[float] = []
    best_val = np.inf
    best_model = work.copy()
    best_epoch = 0
    wait = 0
    stopped = False

    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            sgd_step(work, gradient(work, X[idx], T[idx], cfg.weight_decay), cfg.learning_rate)

        loss = bce_loss(work, X, T)
        if not np.isfinite(loss):
            raise TrainingError("training loss is not finite", epoch=epoch)
        train_hist.append(loss)

        if val_set is not None:
            v = bce_loss(work, val_set.X, val_set.T)
            if not np.isfinite(v):
                raise TrainingError("validation loss is not finite", epoch=epoch)
            val_hist.append(v)
            if v < best_val:
                best_val, best_model, best_epoch, wait = v, work.copy(), epoch, 0
            else:
                wait += 1
            if cfg.early_stopping_patience is not None and wait >= cfg.early_stopping_patience:
                stopped = True
                logger.info("early stopping at epoch %d, best epoch %d (val BCE %.6f)", epoch, best_epoch, best_val)
                break

    if cfg.early_stopping_patience is not None:
        work = best_model
    else:
        best_epoch = len(train_hist)
    logger.debug("trained %d epochs, final train BCE %.6f", len(train_hist), train_hist[-1])
    return TrainResult(model=work, train_loss=train_hist, val_loss=val_hist, best_epoch=best_epoch, stopped_early=stopped)


def _hex(a: np.ndarray) -> list[str]:
    return [float(v).hex() for v in np.asarray(a, dtype=np.float64).ravel()]


def _unhex(values: list[str], shape: tuple[int, ...]) -> np.ndarray:
    return np.array([float.fromhex(v) for v in values], dtype=np.float64).reshape(shape)


def model_to_dict(model: Mlp) -> dict[str, Any]:
    return {
        "format": MODEL_FORMAT,
        "version": 1,
        "layers": [
            {
                "in_dim": l.in_dim,
                "out_dim": l.out_dim,
                "activation": l.activation.to_dict(),
                "weights": _hex(l.weights),
                "bias": _hex(l.bias),
            }
            for l in model.layers
        ],
    }


def model_from_dict(d: dict[str, Any]) -> Mlp:
    if d.get("format") != MODEL_FORMAT:
        raise DataFormatError(f"not an {MODEL_FORMAT} document (format={d.get('format')!r})")
    try:
        layers = [
            DenseLayer(
                weights=_unhex(l["weights"], (l["out_dim"], l["in_dim"])),
                bias=_unhex(l["bias"], (l["out_dim"],)),
                activation=Activation.from_dict(l["activation"]),
            )
            for l in d["layers"]
        ]
    except (KeyError, ValueError, TypeError) as e:
        raise DataFormatError(f"malformed model document: {e}") from e
    return Mlp(layers)


def save_model(model: Mlp, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1), encoding="utf-8")


def load_model(path: str | Path) -> Mlp:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
