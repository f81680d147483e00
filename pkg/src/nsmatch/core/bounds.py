"""
Bounds on covariate imbalance implied by a measured score imbalance.

A score b(X) = W X gives D(X) in [D(b) / |||W|||, |||W+||| * D(b)] for the
Wasserstein and linear-MMD discrepancies. Stacked layers
b^(l) = W^(l) h^(l)(b^(l-1)) multiply the constants, with every activation
h^(l) contributing its lower/upper Lipschitz constants (m, M). When the score
is not balancing, ``corrected_bounds`` adds the conditional-independence
error terms to the upper end. Only weight matrices enter the constants;
biases translate both arms equally and drop out.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import expit

from nsmatch.core import linalg, nn
from nsmatch.core.metrics import EmpiricalPair, linear_mmd, wasserstein_exact
from nsmatch.core.models.reports import BoundReport, LayerConstants, LipschitzConstants
from nsmatch.core.models.weights import MatchWeights
from nsmatch.errors import BoundError, ShapeError

logger = logging.getLogger(__name__)

BoundMetric = Literal["wass", "linear_mmd"]
DEFAULT_BINS = 10


def _check_metric(metric: str) -> None:
    if metric not in ("wass", "linear_mmd"):
        raise BoundError(f"linear bounds are defined for 'wass' and 'linear_mmd', got {metric!r}")


def _check_imbalance(score_imbalance: float) -> float:
    s = float(score_imbalance)
    if not s >= 0.0 or math.isinf(s):
        raise BoundError(f"score imbalance must be finite and non-negative, got {score_imbalance!r}")
    return s


def activation_lipschitz(activation: nn.Activation, domain_bound: float | None = None) -> LipschitzConstants:
    """Lower/upper Lipschitz constants (m, M) of an elementwise activation.

    The sigmoid is only bi-Lipschitz on a bounded domain |z| < B, where
    m = sigma'(B); without B its lower constant is 0.
    """
    if activation.kind == "identity":
        return LipschitzConstants(1.0, 1.0)
    if activation.kind == "leaky_relu":
        return LipschitzConstants(activation.slope, 1.0)
    if domain_bound is None:
        return LipschitzConstants(0.0, 0.25)
    b = abs(float(domain_bound))
    if not math.isfinite(b):
        return LipschitzConstants(0.0, 0.25)
    s = float(expit(b))
    return LipschitzConstants(s * (1.0 - s), 0.25, source="bounded_domain", domain_bound=b)


def multilayer_bounds(
    layers: Sequence[tuple[np.ndarray, LipschitzConstants]],
    score_imbalance: float,
    metric: BoundMetric = "wass",
) -> BoundReport:
    """alpha_L = 1 / (prod |||W||| * prod M), beta_L = prod |||W+||| / prod m.

    ``layers[l]`` pairs W^(l) with the constants of the activation applied to
    its input (identity for the first layer).
    """
    _check_metric(metric)
    s = _check_imbalance(score_imbalance)
    if not layers:
        raise BoundError("multilayer bounds need at least one layer")

    consts: list[LayerConstants] = []
    notes: list[str] = []
    for idx, (W, lip) in enumerate(layers, start=1):
        norm = linalg.operator_norm(W)
        if norm == 0.0:
            raise BoundError(f"layer {idx} has a zero weight matrix")
        consts.append(LayerConstants(norm_w=norm, norm_w_pinv=linalg.pinv_norm(W), m=lip.m, M=lip.M))
        if lip.m == 0.0:
            notes.append(f"layer {idx}: activation has m = 0, upper bound is vacuous")

    alpha = 1.0 / (math.prod(c.norm_w for c in consts) * math.prod(c.M for c in consts))
    m_prod = math.prod(c.m for c in consts)
    beta = math.inf if m_prod == 0.0 else math.prod(c.norm_w_pinv for c in consts) / m_prod
    if math.isinf(beta):
        upper = math.inf
    else:
        upper = beta * s
    domain = [lip.domain_bound for _, lip in layers if lip.domain_bound is not None]
    for n in notes:
        logger.warning(n)
    return BoundReport(
        metric_kind=metric,
        score_imbalance=s,
        lower=alpha * s,
        upper=upper,
        alpha=alpha,
        beta=beta,
        layers=tuple(consts),
        domain_bound=max(domain) if domain else None,
        notes=tuple(notes),
    )


def linear_bounds(W: np.ndarray, score_imbalance: float, metric: BoundMetric = "wass") -> BoundReport:
    """[D(b) / sigma_max(W), D(b) / sigma_min_nonzero(W)] for b(X) = W X."""
    W = linalg.as_matrix(W)
    if not np.any(W):
        raise BoundError("W = 0 carries no covariate information")
    return multilayer_bounds([(W, LipschitzConstants(1.0, 1.0))], score_imbalance, metric)


def tv_bounds(score_imbalance: float) -> BoundReport:
    """TV(b(X)) <= TV(X) for any deterministic b; equality holds for balancing scores."""
    s = _check_imbalance(score_imbalance)
    return BoundReport(metric_kind="tv", score_imbalance=s, lower=s, upper=s, alpha=1.0, beta=1.0)


def corrected_bounds(report: BoundReport, error_terms: tuple[float, float]) -> BoundReport:
    e1, e0 = (float(e) for e in error_terms)
    if not (e1 >= 0.0 and e0 >= 0.0):
        raise BoundError(f"error terms must be non-negative, got ({e1}, {e0})")
    if report.error_terms is not None:
        raise BoundError("report already carries error terms")
    return dataclasses.replace(report, upper=report.upper + e1 + e0, error_terms=(e1, e0))


def bound_ratio(report: BoundReport) -> float:
    """beta_L / alpha_L, the factor by which the interval endpoints can differ."""
    return report.beta / report.alpha


@dataclass(frozen=True, eq=False)
class ScoredPair:
    """Both arms in score space, each point carrying its covariates.

    ``treated_mass`` is P(T=1), used to pool the arms inside a bin; it defaults
    to the treated share of points.
    """

    treated_scores: np.ndarray
    control_scores: np.ndarray
    treated_covariates: np.ndarray
    control_covariates: np.ndarray
    treated_weights: np.ndarray | None = None
    control_weights: np.ndarray | None = None
    treated_mass: float | None = None

    def __post_init__(self) -> None:
        for name in ("treated_scores", "control_scores", "treated_covariates", "control_covariates"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, a.reshape(-1, 1) if a.ndim == 1 else a)
        if self.treated_scores.shape[0] != self.treated_covariates.shape[0]:
            raise ShapeError("treated scores and covariates differ in length")
        if self.control_scores.shape[0] != self.control_covariates.shape[0]:
            raise ShapeError("control scores and covariates differ in length")
        if self.treated_scores.shape[1] != self.control_scores.shape[1]:
            raise ShapeError("score dimensions differ between arms")
        if self.treated_covariates.shape[1] != self.control_covariates.shape[1]:
            raise ShapeError("covariate dimensions differ between arms")
        for name, n in (("treated_weights", self.treated_scores.shape[0]), ("control_weights", self.control_scores.shape[0])):
            w = getattr(self, name)
            w = np.ones(n) if w is None else np.asarray(w, dtype=np.float64).reshape(-1)
            if w.shape[0] != n or np.any(w < 0) or w.sum() <= 0:
                raise ShapeError(f"{name} must be {n} non-negative entries with positive sum")
            object.__setattr__(self, name, w / w.sum())
        if self.treated_mass is None:
            n_t, n_c = self.treated_scores.shape[0], self.control_scores.shape[0]
            object.__setattr__(self, "treated_mass", n_t / (n_t + n_c))
        elif not 0.0 < float(self.treated_mass) < 1.0:
            raise ShapeError(f"treated_mass must lie in (0, 1), got {self.treated_mass}")


@dataclass(frozen=True)
class BinnedEstimate:
    e1: float
    e0: float
    n_bins: int
    skipped_bins: tuple[tuple[int, int], ...] = ()

    @property
    def error_terms(self) -> tuple[float, float]:
        return (self.e1, self.e0)


def _bin_labels(scores: np.ndarray, n_bins: int) -> np.ndarray:
    values, inverse = np.unique(scores, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    if values.shape[0] <= n_bins:
        return inverse
    s = scores
    if s.shape[1] > 1:
        centred = s - s.mean(axis=0)
        s = centred @ linalg.svd(centred).v_t[0]
    s = s.reshape(-1)
    edges = np.quantile(s, np.linspace(0.0, 1.0, n_bins + 1))
    return np.searchsorted(edges[1:-1], s, side="right")


def binned_error_estimate(pair: ScoredPair, n_bins: int = DEFAULT_BINS, metric: BoundMetric = "linear_mmd") -> BinnedEstimate:
    """Diagnostic plug-in estimate of (E[eps_1 | T=1], E[eps_0 | T=0]).

    Scores with at most ``n_bins`` distinct values get one bin per value;
    otherwise the pooled scores (projected onto their first principal
    direction when multivariate) are cut at equal-count quantiles. Within a
    bin each arm's covariates are compared to the pooled covariates.
    """
    if n_bins < 1:
        raise BoundError("n_bins must be >= 1")
    _check_metric(metric)
    n_t = pair.treated_scores.shape[0]
    labels = _bin_labels(np.vstack([pair.treated_scores, pair.control_scores]), n_bins)
    lab = (labels[:n_t], labels[n_t:])
    covs = (pair.treated_covariates, pair.control_covariates)
    assert pair.treated_weights is not None and pair.control_weights is not None and pair.treated_mass is not None
    arm_w = (pair.treated_weights, pair.control_weights)
    arm_mass = (float(pair.treated_mass), 1.0 - float(pair.treated_mass))

    terms = [0.0, 0.0]
    skipped: list[tuple[int, int]] = []
    for b in np.unique(labels):
        in_bin = [lab[a] == b for a in (0, 1)]
        mass = [float(arm_w[a][in_bin[a]].sum()) for a in (0, 1)]
        pooled_pts = np.vstack([covs[a][in_bin[a]] for a in (0, 1)])
        pooled_w = np.concatenate([arm_mass[a] * arm_w[a][in_bin[a]] for a in (0, 1)])
        for a in (0, 1):
            if mass[a] <= 0.0:
                skipped.append((int(b), 1 - a))
                continue
            p = EmpiricalPair(covs[a][in_bin[a]], pooled_pts, arm_w[a][in_bin[a]], pooled_w)
            d = linear_mmd(p) if metric == "linear_mmd" else wasserstein_exact(p)
            terms[a] += mass[a] * d
    if skipped:
        logger.warning("binned error estimate skipped %d empty (bin, arm) cells", len(skipped))
    n_used = int(np.unique(labels).shape[0])
    return BinnedEstimate(e1=terms[0], e0=terms[1], n_bins=n_used, skipped_bins=tuple(skipped))


def model_layer_bounds(
    model: nn.Mlp,
    X: np.ndarray,
    T: np.ndarray,
    layer: int = 1,
    metric: BoundMetric = "wass",
    use_domain_bound: bool = False,
    weights: MatchWeights | None = None,
) -> BoundReport:
    """Bounds for the layer-``layer`` pre-activation score of a trained network.

    The score imbalance is measured on (X, T), with the controls re-weighted by
    ``weights`` when given. With ``use_domain_bound`` a sigmoid input domain is
    bounded by the largest |pre-activation| observed on X.
    """
    if not 1 <= layer <= model.depth:
        raise BoundError(f"layer must be in [1, {model.depth}], got {layer}")
    X = linalg.as_matrix(X)
    t = np.asarray(T).reshape(-1)
    if t.shape[0] != X.shape[0]:
        raise ShapeError(f"T has {t.shape[0]} entries, X has {X.shape[0]} rows")

    stack: list[tuple[np.ndarray, LipschitzConstants]] = []
    for l in range(1, layer + 1):
        act = model.input_activation(l)
        bound = None
        if use_domain_bound and act.kind == "sigmoid":
            bound = float(np.max(np.abs(nn.pre_activation(model, X, l - 1))))
        stack.append((model.layers[l - 1].weights, activation_lipschitz(act, bound)))

    scores = np.asarray(nn.pre_activation(model, X, layer)).reshape(X.shape[0], -1)
    treated = np.flatnonzero(t == 1)
    if weights is None:
        control, cw = np.flatnonzero(t == 0), None
    else:
        control, cw = weights.agg_control, weights.agg_weight
    if treated.shape[0] == 0 or control.shape[0] == 0:
        raise BoundError("score imbalance needs both arms")
    pair = EmpiricalPair(scores[treated], scores[control], control_weights=cw)
    s = linear_mmd(pair) if metric == "linear_mmd" else wasserstein_exact(pair)
    logger.info("layer %d %s score imbalance %.6g", layer, metric, s)
    return multilayer_bounds(stack, s, metric)
