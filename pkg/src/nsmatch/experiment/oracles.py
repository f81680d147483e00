"""
Exact property suites.

Each suite draws ``trials`` random instances, seeded ``seed + i``, computes a
non-negative deviation per instance and fails when any deviation exceeds the
suite tolerance. The per-instance seed of the worst failure is reported so it
can be replayed on its own.
"""
from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from nsmatch.core import bounds, dgp, metrics, nn
from nsmatch.core.matching import match_discrete
from nsmatch.core.metrics import EmpiricalPair
from nsmatch.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OracleSummary:
    suite: str
    trials: int
    tolerance: float
    worst_deviation: float
    worst_seed: int
    failures: int
    failing_seed: int | None
    elapsed_s: float

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        text = (
            f"{verdict} {self.suite}: {self.trials} trials, worst deviation {self.worst_deviation:.3e} "
            f"(seed {self.worst_seed}, tolerance {self.tolerance:.0e}), {self.elapsed_s:.2f}s"
        )
        if not self.passed:
            text += f"; {self.failures} failures, first at seed {self.failing_seed}"
        return text


def _sizes(rng: np.random.Generator) -> tuple[int, int]:
    support = int(rng.integers(2, 13))
    return support, int(rng.integers(1, support + 1))


def tv_equality(seed: int) -> float:
    rng = np.random.default_rng(seed)
    support, levels = _sizes(rng)
    joint = dgp.discrete_scenario("balancing", support, levels, seed, covariate_dim=int(rng.integers(1, 4)))
    return abs(metrics.tv_discrete(joint) - metrics.tv_discrete(joint, on_score=True))


def _linear_case(seed: int, kind: dgp.ScenarioKind) -> dgp.LinearScenario:
    rng = np.random.default_rng(seed)
    dim_in = int(rng.integers(1, 5))
    return dgp.linear_scenario(
        kind,
        n_levels=int(rng.integers(2, 6)),
        null_points=int(rng.integers(1, 4)),
        dim_in=dim_in,
        dim_score=int(rng.integers(1, dim_in + 1)),
        seed=seed,
    )


def _outside(report_lower: float, report_upper: float, value: float) -> float:
    return max(report_lower - value, value - report_upper, 0.0)


def bound_sandwich(seed: int) -> float:
    case = _linear_case(seed, "balancing")
    worst = 0.0
    for kind in ("linear_mmd", "wass"):
        s = metrics.score_imbalance(case.joint, kind)
        rep = bounds.linear_bounds(case.W, s, kind)
        worst = max(worst, _outside(rep.lower, rep.upper, metrics.covariate_imbalance(case.joint, kind)))
    return worst


def lower_bound(seed: int) -> float:
    rng = np.random.default_rng(seed)
    dim_in = int(rng.integers(1, 5))
    n_t, n_c = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    pair = EmpiricalPair(
        rng.standard_normal((n_t, dim_in)),
        rng.standard_normal((n_c, dim_in)) + rng.standard_normal(dim_in),
        rng.uniform(0.1, 1.0, n_t),
        rng.uniform(0.1, 1.0, n_c),
    )
    W = rng.standard_normal((int(rng.integers(1, dim_in + 2)), dim_in))
    mapped = pair.mapped(W, rng.standard_normal(W.shape[0]))
    worst = 0.0
    for kind, fn in (("linear_mmd", metrics.linear_mmd), ("wass", metrics.wasserstein_exact)):
        rep = bounds.linear_bounds(W, fn(mapped), kind)
        worst = max(worst, rep.lower - fn(pair))
    return max(worst, 0.0)


def corrected_bounds(seed: int) -> float:
    rng = np.random.default_rng(seed)
    support, levels = _sizes(rng)
    joint = dgp.discrete_scenario("non_balancing", support, levels, seed, perturbation=float(rng.uniform(0.05, 0.3)))
    gap = metrics.conditional_independence_gap(joint, ("tv",))
    rep = bounds.corrected_bounds(bounds.tv_bounds(metrics.score_imbalance(joint, "tv")), gap.error_terms("tv"))
    worst = _outside(rep.lower, rep.upper, metrics.covariate_imbalance(joint, "tv"))

    case = _linear_case(seed, "non_balancing")
    kinds: tuple[metrics.Discrepancy, ...] = ("linear_mmd", "wass")
    gap = metrics.conditional_independence_gap(case.joint, kinds)
    for kind in kinds:
        base = bounds.linear_bounds(case.W, metrics.score_imbalance(case.joint, kind), kind)
        rep = bounds.corrected_bounds(base, gap.error_terms(kind))
        worst = max(worst, _outside(rep.lower, rep.upper, metrics.covariate_imbalance(case.joint, kind)))
    return worst


def matching_preserves_balance(seed: int) -> float:
    rng = np.random.default_rng(seed)
    support, levels = _sizes(rng)
    matched = match_discrete(dgp.discrete_scenario("balancing", support, levels, seed))
    gap = metrics.conditional_independence_gap(matched, ("tv", "linear_mmd"))
    return max(gap.max_gap(), metrics.tv_discrete(matched), metrics.tv_discrete(matched, on_score=True))


def layered_balancing(seed: int) -> float:
    rng = np.random.default_rng(seed)
    support = int(rng.integers(3, 13))
    fine = int(rng.integers(2, support + 1))
    coarse = int(rng.integers(1, fine + 1))
    case = dgp.layered_scenario(support, fine, coarse, seed)
    worst = 0.0
    for score_map in case.score_maps:
        gap = metrics.conditional_independence_gap(case.joint.with_score_map(score_map), ("tv", "linear_mmd"))
        worst = max(worst, gap.max_gap())
    return worst


def ot_bruteforce(seed: int) -> float:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    dim = int(rng.integers(1, 5))
    pair = EmpiricalPair(rng.standard_normal((n, dim)), rng.standard_normal((n, dim)))
    return abs(metrics.wasserstein_exact(pair) - metrics.wasserstein_bruteforce(pair))


FD_STEP = 1e-5
FD_FLOOR = 1e-5


def gradient_check(seed: int) -> float:
    """Largest relative error between backprop and central differences on a random 3-layer net."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 6))
    hidden = [int(rng.integers(1, 6)), int(rng.integers(1, 6))]
    acts = [nn.Activation.leaky_relu(0.1), nn.Activation.sigmoid(), nn.Activation.sigmoid()]
    model = nn.init_mlp([d, *hidden, 1], acts, rng_seed=seed)
    model = nn.set_flat_parameters(model, nn.flatten_parameters(model) + 0.1 * rng.standard_normal(nn.parameter_count(model)))
    batch = int(rng.integers(1, 9))
    X = rng.standard_normal((batch, d))
    T = rng.integers(0, 2, batch).astype(np.float64)
    wd = float(rng.uniform(0.0, 0.1))

    analytic = nn.gradient(model, X, T, wd).flat()
    theta = nn.flatten_parameters(model)
    numeric = np.empty_like(theta)
    for k in range(theta.shape[0]):
        step = np.zeros_like(theta)
        step[k] = FD_STEP
        up = nn.bce_loss(nn.set_flat_parameters(model, theta + step), X, T, wd)
        down = nn.bce_loss(nn.set_flat_parameters(model, theta - step), X, T, wd)
        numeric[k] = (up - down) / (2 * FD_STEP)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FD_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / scale))


@dataclass(frozen=True)
class Suite:
    check: Callable[[int], float]
    tolerance: float
    default_trials: int


SUITES: dict[str, Suite] = {
    "tv_equality": Suite(tv_equality, 1e-12, 100),
    "bound_sandwich": Suite(bound_sandwich, 1e-9, 100),
    "lower_bound": Suite(lower_bound, 1e-10, 1000),
    "corrected_bounds": Suite(corrected_bounds, 1e-9, 100),
    "matching_preserves_balance": Suite(matching_preserves_balance, 1e-12, 50),
    "layered_balancing": Suite(layered_balancing, 1e-12, 50),
    "ot_bruteforce": Suite(ot_bruteforce, 1e-9, 500),
    "gradient_check": Suite(gradient_check, 1e-4, 10),
}


def run_oracle_check(suite: str, trials: int | None = None, seed: int = 0) -> OracleSummary:
    if suite not in SUITES:
        raise ConfigError(f"unknown oracle suite {suite!r}; choose from {sorted(SUITES)}")
    suite_def = SUITES[suite]
    n = suite_def.default_trials if trials is None else trials
    if n < 1:
        raise ConfigError("trials must be >= 1")

    start = time.perf_counter()
    worst, worst_seed = 0.0, seed
    failures, failing_seed = 0, None
    for i in range(n):
        s = seed + i
        dev = suite_def.check(s)
        if not np.isfinite(dev) or dev > worst:
            worst, worst_seed = dev, s
        if not np.isfinite(dev) or dev > suite_def.tolerance:
            failures += 1
            if failing_seed is None:
                failing_seed = s
                logger.warning("%s: seed %d deviates by %.3e", suite, s, dev)
    summary = OracleSummary(
        suite=suite,
        trials=n,
        tolerance=suite_def.tolerance,
        worst_deviation=float(worst),
        worst_seed=worst_seed,
        failures=failures,
        failing_seed=failing_seed,
        elapsed_s=time.perf_counter() - start,
    )
    logger.info(summary.line())
    return summary
