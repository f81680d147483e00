from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from nsmatch.core import bounds, dgp, nn, scores
from nsmatch.core.bounds import BoundMetric
from nsmatch.core.metrics import DEFAULT_COST_CAP, EmpiricalPair, linear_mmd, wasserstein_exact
from nsmatch.core.models.reports import BoundReport
from nsmatch.errors import BoundError, DataFormatError, ProblemSizeError, ShapeError

logger = logging.getLogger(__name__)


def _read_json(path: str | Path) -> dict[str, Any]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise DataFormatError(f"{path}: top level must be an object")
    return doc


def _linear_map(doc: dict[str, Any]) -> tuple[np.ndarray, np.ndarray]:
    """Plain ``{"W": [[...]], "bias": [...]}``; the bias is optional."""
    try:
        W = np.array(doc["W"], dtype=np.float64, ndmin=2)
        b = np.array(doc.get("bias", np.zeros(W.shape[0])), dtype=np.float64).reshape(-1)
    except (TypeError, ValueError) as e:
        raise DataFormatError(f"malformed linear map: {e}") from e
    if b.shape[0] != W.shape[0]:
        raise ShapeError(f"bias has {b.shape[0]} entries, W has {W.shape[0]} rows")
    return W, b


def linear_map_bounds(
    W: np.ndarray,
    bias: np.ndarray,
    X: np.ndarray,
    T: np.ndarray,
    metric: BoundMetric,
    cap: int = DEFAULT_COST_CAP,
) -> BoundReport:
    t = np.asarray(T).reshape(-1)
    if W.shape[1] != X.shape[1]:
        raise ShapeError(f"W expects {W.shape[1]} covariates, data has {X.shape[1]}")
    treated, control = X[t == 1], X[t == 0]
    if treated.shape[0] == 0 or control.shape[0] == 0:
        raise BoundError("score imbalance needs both arms")
    pair = EmpiricalPair(treated, control).mapped(W, bias)
    s = linear_mmd(pair) if metric == "linear_mmd" else wasserstein_exact(pair, cap)
    return bounds.linear_bounds(W, s, metric)


def run_bounds(
    source: str | Path,
    data_path: str | Path,
    layer: int = 1,
    metric: BoundMetric = "wass",
    use_domain_bound: bool = False,
    standardize: bool = False,
    cap: int = DEFAULT_COST_CAP,
) -> BoundReport:
    """Bounds for a serialized network, score provider or plain linear map on a CSV dataset."""
    data = dgp.load_csv(data_path, standardize=standardize)
    n_t, n_c = int(data.T.sum()), int(data.n - data.T.sum())
    if metric == "wass" and n_t * n_c > cap:
        raise ProblemSizeError(n_t * n_c, cap)
    doc = _read_json(source)
    fmt = doc.get("format")
    if fmt == nn.MODEL_FORMAT:
        model = nn.model_from_dict(doc)
        return bounds.model_layer_bounds(model, data.X, data.T, layer, metric, use_domain_bound)
    if fmt == scores.PROVIDER_FORMAT:
        provider = scores.provider_from_dict(doc)
        lin = scores.linear_map_of(provider)
        if lin is not None:
            return linear_map_bounds(lin.weights, lin.bias, data.X, data.T, metric, cap)
        model = getattr(provider, "model", None)
        if model is None:
            raise BoundError(f"{provider.kind} scores carry no weight matrices to bound with")
        return bounds.model_layer_bounds(model, data.X, data.T, layer, metric, use_domain_bound)
    if "W" in doc:
        W, b = _linear_map(doc)
        return linear_map_bounds(W, b, data.X, data.T, metric, cap)
    raise DataFormatError(f"{source}: neither a model, a score provider nor a linear map")


def write_report(report: BoundReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
