from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Literal

from nsmatch.errors import BoundError

MetricKind = Literal["wass", "linear_mmd", "tv"]
LipschitzSource = Literal["exact_global", "bounded_domain"]


def _json_float(v: float | None) -> float | str | None:
    if v is None:
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


@dataclass(frozen=True)
class LipschitzConstants:
    m: float
    M: float
    source: LipschitzSource = "exact_global"
    domain_bound: float | None = None

    def __post_init__(self) -> None:
        if self.m < 0 or self.M <= 0 or self.m > self.M:
            raise BoundError(f"need 0 <= m <= M and M > 0, got m={self.m}, M={self.M}")


@dataclass(frozen=True)
class LayerConstants:
    norm_w: float
    norm_w_pinv: float
    m: float
    M: float


@dataclass(frozen=True)
class BoundReport:
    """A measured score imbalance and the covariate-imbalance interval it implies."""

    metric_kind: MetricKind
    score_imbalance: float
    lower: float
    upper: float
    alpha: float
    beta: float
    layers: tuple[LayerConstants, ...] = ()
    error_terms: tuple[float, float] | None = None
    domain_bound: float | None = None
    notes: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric_kind": self.metric_kind,
            "score_imbalance": self.score_imbalance,
            "lower": _json_float(self.lower),
            "upper": _json_float(self.upper),
            "alpha_L": _json_float(self.alpha),
            "beta_L": _json_float(self.beta),
            "norm_W": [_json_float(c.norm_w) for c in self.layers],
            "norm_W_pinv": [_json_float(c.norm_w_pinv) for c in self.layers],
            "m": [c.m for c in self.layers],
            "M": [c.M for c in self.layers],
            "error_terms": None if self.error_terms is None else list(self.error_terms),
            "domain_bound": _json_float(self.domain_bound),
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class ReportRow:
    method: str
    metric: str
    sample: str
    mean: float
    standard_error: float
    n_runs: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)
