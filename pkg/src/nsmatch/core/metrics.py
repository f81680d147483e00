from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
import ot
from scipy.spatial.distance import cdist

from nsmatch.core.models.dataset import Dataset
from nsmatch.core.models.joint import DiscreteJoint
from nsmatch.core.models.weights import MatchWeights
from nsmatch.errors import MatchingError, NonFiniteError, ProblemSizeError, ShapeError, SolverError

logger = logging.getLogger(__name__)

DEFAULT_COST_CAP = 4_000_000
BRUTEFORCE_MAX_N = 7
CERTIFICATE_TOL = 1e-9

Discrepancy = Literal["tv", "linear_mmd", "wass"]
DISCREPANCIES: tuple[Discrepancy, ...] = ("tv", "linear_mmd", "wass")


def _normalise(w: np.ndarray | None, n: int, name: str) -> np.ndarray:
    if w is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.shape[0] != n:
        raise ShapeError(f"{name} has {w.shape[0]} entries for {n} points")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ShapeError(f"{name} must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise ShapeError(f"{name} sum to zero")
    return w / total


def _points(p: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class EmpiricalPair:
    """Two weighted point clouds; weights are normalised to sum to one on construction."""

    treated_points: np.ndarray
    control_points: np.ndarray
    treated_weights: np.ndarray | None = None
    control_weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        xt = _points(self.treated_points, "treated_points")
        xc = _points(self.control_points, "control_points")
        if xt.shape[1] != xc.shape[1]:
            raise ShapeError(f"dimension mismatch: treated {xt.shape[1]}, control {xc.shape[1]}")
        uniform = self.treated_weights is None and self.control_weights is None
        object.__setattr__(self, "treated_points", xt)
        object.__setattr__(self, "control_points", xc)
        object.__setattr__(self, "treated_weights", _normalise(self.treated_weights, xt.shape[0], "treated_weights"))
        object.__setattr__(self, "control_weights", _normalise(self.control_weights, xc.shape[0], "control_weights"))
        object.__setattr__(self, "_uniform", uniform)

    @property
    def is_uniform(self) -> bool:
        return bool(getattr(self, "_uniform"))

    @property
    def n_treated(self) -> int:
        return self.treated_points.shape[0]

    @property
    def n_control(self) -> int:
        return self.control_points.shape[0]

    @classmethod
    def from_dataset(cls, dataset: Dataset, weights: MatchWeights) -> EmpiricalPair:
        return cls(
            treated_points=dataset.X[weights.treated],
            control_points=dataset.X[weights.agg_control],
            control_weights=weights.agg_weight,
        )

    def mapped(self, W: np.ndarray, bias: np.ndarray | None = None) -> EmpiricalPair:
        """The same pair pushed through x -> W x + bias."""
        W = np.asarray(W, dtype=np.float64)
        b = 0.0 if bias is None else np.asarray(bias, dtype=np.float64)
        return EmpiricalPair(
            treated_points=self.treated_points @ W.T + b,
            control_points=self.control_points @ W.T + b,
            treated_weights=self.treated_weights,
            control_weights=self.control_weights,
        )


def linear_mmd(pair: EmpiricalPair) -> float:
    assert pair.treated_weights is not None and pair.control_weights is not None
    mean_t = pair.treated_weights @ pair.treated_points
    mean_c = pair.control_weights @ pair.control_points
    return float(np.linalg.norm(mean_t - mean_c))


@dataclass(frozen=True, eq=False)
class WassersteinResult:
    value: float
    plan: np.ndarray
    u: np.ndarray
    v: np.ndarray
    duality_gap: float
    max_dual_violation: float
    max_slackness_violation: float


def wasserstein_plan(pair: EmpiricalPair, cap: int = DEFAULT_COST_CAP) -> WassersteinResult:
    """Exact order-1 optimal transport with Euclidean ground cost, certified by its duals."""
    size = pair.n_treated * pair.n_control
    if size > cap:
        raise ProblemSizeError(size, cap)
    a = np.asarray(pair.treated_weights, dtype=np.float64)
    b = np.asarray(pair.control_weights, dtype=np.float64)
    keep_a = a > 0
    keep_b = b > 0
    xa, xb = pair.treated_points[keep_a], pair.control_points[keep_b]
    a, b = a[keep_a], b[keep_b]
    a = a / a.sum()
    b = b / b.sum()

    M = cdist(xa, xb, metric="euclidean")
    plan, log = ot.emd(a, b, M, numItermax=max(100_000, 50 * M.size), log=True)
    if log.get("result_code", 1) != 1:
        raise SolverError(f"network simplex did not reach optimality: {log.get('warning')}")

    u = np.asarray(log["u"], dtype=np.float64)
    v = np.asarray(log["v"], dtype=np.float64)
    value = float(np.sum(plan * M))
    reduced = M - u[:, None] - v[None, :]
    dual_violation = max(0.0, float(-reduced.min()))
    support = plan > 0
    slackness = float(np.abs(reduced[support]).max()) if support.any() else 0.0
    gap = abs(value - float(a @ u + b @ v))
    tol = CERTIFICATE_TOL * max(1.0, float(M.max()))
    if max(dual_violation, slackness, gap) > tol:
        raise SolverError(
            f"optimality certificate failed: gap={gap:.3e}, dual violation={dual_violation:.3e}, "
            f"slackness={slackness:.3e} (tol {tol:.1e})"
        )

    full_plan = np.zeros((pair.n_treated, pair.n_control))
    full_plan[np.ix_(keep_a, keep_b)] = plan
    return WassersteinResult(
        value=value,
        plan=full_plan,
        u=u,
        v=v,
        duality_gap=gap,
        max_dual_violation=dual_violation,
        max_slackness_violation=slackness,
    )


def wasserstein_exact(pair: EmpiricalPair, cap: int = DEFAULT_COST_CAP) -> float:
    return wasserstein_plan(pair, cap).value


def wasserstein_bruteforce(pair: EmpiricalPair) -> float:
    """Minimum mean assignment cost over every permutation (uniform, equal-size pairs only)."""
    n = pair.n_treated
    if not pair.is_uniform or n != pair.n_control or n > BRUTEFORCE_MAX_N:
        raise ShapeError(
            f"brute force needs uniform weights and N_t = N_c <= {BRUTEFORCE_MAX_N}, "
            f"got N_t={pair.n_treated}, N_c={pair.n_control}"
        )
    C = cdist(pair.treated_points, pair.control_points, metric="euclidean")
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    costs = C[np.arange(n), perms].sum(axis=1)
    return float(costs.min() / n)


def _tv(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(p - q).sum())


def tv_discrete(joint: DiscreteJoint, on_score: bool = False) -> float:
    if on_score:
        p1 = joint.level_mass(1) / joint.arm_mass(1)
        p0 = joint.level_mass(0) / joint.arm_mass(0)
        return _tv(p1, p0)
    return _tv(joint.conditional(1), joint.conditional(0))


def _discrepancy(points: np.ndarray, p: np.ndarray, q: np.ndarray, kind: Discrepancy) -> float:
    if kind == "tv":
        return _tv(p, q)
    if kind == "linear_mmd":
        return float(np.linalg.norm((p - q) @ points))
    return wasserstein_exact(EmpiricalPair(points, points, p, q))


def covariate_imbalance(joint: DiscreteJoint, kind: Discrepancy) -> float:
    """Exact D(P(X | T=1), P(X | T=0))."""
    return _discrepancy(joint.support, joint.conditional(1), joint.conditional(0), kind)


def score_imbalance(joint: DiscreteJoint, kind: Discrepancy) -> float:
    """Exact D(P(b(X) | T=1), P(b(X) | T=0)) over the distinct score levels."""
    p1 = joint.level_mass(1) / joint.arm_mass(1)
    p0 = joint.level_mass(0) / joint.arm_mass(0)
    return _discrepancy(joint.level_values, p1, p0, kind)


def sample_imbalance(dataset: Dataset, weights: MatchWeights) -> float:
    """Squared distance between the treated covariate mean and the match-weighted control mean."""
    total = float(weights.agg_weight.sum())
    if weights.agg_weight.size == 0 or total <= 0:
        raise MatchingError("all control weights are zero")
    if weights.treated.size == 0:
        raise MatchingError("no treated units")
    mean_t = dataset.X[weights.treated].mean(axis=0)
    mean_c = weights.agg_weight @ dataset.X[weights.agg_control] / total
    return float(np.sum((mean_t - mean_c) ** 2))


def calibration_error(e_hat: np.ndarray, e_true: np.ndarray) -> float:
    a = np.asarray(e_hat, dtype=np.float64).reshape(-1)
    b = np.asarray(e_true, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape[0]} estimates, {b.shape[0]} true propensities")
    if a.size == 0:
        raise ShapeError("no propensities given")
    if np.any((a < 0) | (a > 1)) or np.any((b < 0) | (b > 1)):
        raise ShapeError("propensities must lie in [0, 1]")
    return float(np.mean(np.abs(a - b)))


@dataclass(frozen=True, eq=False)
class GapTable:
    """Exact conditional-independence gaps per (score level, arm).

    ``eps[kind]`` is (n_levels, 2); cells whose level has no mass in arm t are
    NaN and flagged False in ``defined``. ``expectation[kind]`` holds
    (E[eps_1(b(X)) | T=1], E[eps_0(b(X)) | T=0]).
    """

    level_values: np.ndarray
    eps: dict[str, np.ndarray]
    defined: np.ndarray
    expectation: dict[str, tuple[float, float]]

    def error_terms(self, kind: Discrepancy) -> tuple[float, float]:
        return self.expectation[kind]

    def max_gap(self) -> float:
        if not self.defined.any() or not self.eps:
            return 0.0
        return float(max(e[self.defined].max() for e in self.eps.values()))


def conditional_independence_gap(
    joint: DiscreteJoint,
    kinds: tuple[Discrepancy, ...] = DISCREPANCIES,
) -> GapTable:
    n_levels = joint.n_levels
    level_of = joint.level_of
    eps = {k: np.full((n_levels, 2), np.nan) for k in kinds}
    defined = np.zeros((n_levels, 2), dtype=bool)
    pooled = joint.probs.sum(axis=1)

    for lvl in range(n_levels):
        members = np.flatnonzero(level_of == lvl)
        pts = joint.support[members]
        mass = pooled[members].sum()
        if mass <= 0:
            continue
        q = pooled[members] / mass
        for t in (0, 1):
            arm = joint.probs[members, t]
            if arm.sum() <= 0:
                logger.debug("score level %d has no mass in arm %d; gap undefined", lvl, t)
                continue
            defined[lvl, t] = True
            p = arm / arm.sum()
            for k in kinds:
                eps[k][lvl, t] = _discrepancy(pts, p, q, k)

    expectation: dict[str, tuple[float, float]] = {}
    for k in kinds:
        terms = []
        for t in (1, 0):
            w = joint.level_mass(t) / joint.arm_mass(t)
            cells = defined[:, t]
            terms.append(float(np.sum(w[cells] * eps[k][cells, t])))
        expectation[k] = (terms[0], terms[1])
    return GapTable(level_values=joint.level_values, eps=eps, defined=defined, expectation=expectation)
