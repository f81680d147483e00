import numpy as np
import pytest

from nsmatch.core import dgp, metrics
from nsmatch.core.metrics import EmpiricalPair
from nsmatch.core.models.dataset import Dataset
from nsmatch.core.models.joint import DiscreteJoint
from nsmatch.core.models.weights import MatchWeights
from nsmatch.errors import MatchingError, ProblemSizeError, ShapeError


def test_linear_mmd_examples(rng):
    pts = rng.standard_normal((4, 2))
    assert metrics.linear_mmd(EmpiricalPair(pts, pts)) == 0.0
    assert metrics.linear_mmd(EmpiricalPair([[0.0, 0.0], [2.0, 0.0]], [[1.0, 1.0]])) == pytest.approx(1.0)


def test_linear_mmd_translation_invariant(rng):
    pair = EmpiricalPair(rng.standard_normal((5, 3)), rng.standard_normal((4, 3)))
    v = rng.standard_normal(3)
    moved = EmpiricalPair(pair.treated_points + v, pair.control_points + v)
    assert metrics.linear_mmd(moved) == pytest.approx(metrics.linear_mmd(pair), abs=1e-12)


@pytest.mark.parametrize(
    "treated, control, expected",
    [([0.0], [1.0], 1.0), ([0.0, 1.0], [0.0, 1.0], 0.0), ([0.0, 2.0], [1.0, 1.0], 1.0)],
)
def test_wasserstein_exact_examples(treated, control, expected):
    assert metrics.wasserstein_exact(EmpiricalPair(treated, control)) == pytest.approx(expected, abs=1e-12)


def test_wasserstein_plan_is_certified(rng):
    pair = EmpiricalPair(rng.standard_normal((5, 2)), rng.standard_normal((3, 2)), rng.uniform(0.1, 1, 5), rng.uniform(0.1, 1, 3))
    res = metrics.wasserstein_plan(pair)
    assert np.allclose(res.plan.sum(axis=1), pair.treated_weights)
    assert np.allclose(res.plan.sum(axis=0), pair.control_weights)
    assert res.duality_gap < 1e-9 and res.max_dual_violation < 1e-9


def test_wasserstein_size_cap():
    pair = EmpiricalPair(np.zeros((3, 1)), np.zeros((4, 1)))
    with pytest.raises(ProblemSizeError, match="12"):
        metrics.wasserstein_exact(pair, cap=10)


def test_bruteforce_agrees_with_exact(rng):
    for n in (1, 3, 6):
        pair = EmpiricalPair(rng.standard_normal((n, 2)), rng.standard_normal((n, 2)))
        assert metrics.wasserstein_bruteforce(pair) == pytest.approx(metrics.wasserstein_exact(pair), abs=1e-9)


def test_bruteforce_single_pair_is_distance():
    pair = EmpiricalPair([[0.0, 0.0]], [[3.0, 4.0]])
    assert metrics.wasserstein_bruteforce(pair) == pytest.approx(5.0)


def test_bruteforce_rejects_weighted_or_unequal():
    with pytest.raises(ShapeError):
        metrics.wasserstein_bruteforce(EmpiricalPair([[0.0], [1.0]], [[0.0]]))
    with pytest.raises(ShapeError):
        metrics.wasserstein_bruteforce(EmpiricalPair([[0.0]], [[1.0]], [1.0], [2.0]))


def _two_point(p1, p0, score_map=(0.0, 1.0)) -> DiscreteJoint:
    probs = np.column_stack([np.asarray(p0) * 0.5, np.asarray(p1) * 0.5])
    return DiscreteJoint(support=[[0.0], [1.0]], probs=probs, score_map=np.asarray(score_map))


def test_tv_discrete_examples():
    assert metrics.tv_discrete(_two_point([0.3, 0.7], [0.3, 0.7])) == pytest.approx(0.0)
    assert metrics.tv_discrete(_two_point([0.5, 0.5], [1.0, 0.0])) == pytest.approx(0.5)
    constant = _two_point([0.5, 0.5], [1.0, 0.0], score_map=(7.0, 7.0))
    assert metrics.tv_discrete(constant, on_score=True) == 0.0


def test_sample_imbalance_examples():
    X = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
    data = Dataset(X=X, T=[1, 1, 0, 0], Y=np.zeros(4))
    w = MatchWeights.from_pairs([0, 1], [0, 1], [2, 2])
    assert metrics.sample_imbalance(data, w) == pytest.approx(1.0)
    twins = Dataset(X=np.vstack([X[:2], X[:2]]), T=[1, 1, 0, 0], Y=np.zeros(4))
    assert metrics.sample_imbalance(twins, MatchWeights.from_pairs([0, 1], [0, 1], [2, 3])) == 0.0


def test_sample_imbalance_no_matching_baseline(rng):
    X = rng.standard_normal((8, 2))
    T = np.array([1, 0, 1, 0, 0, 1, 0, 0])
    data = Dataset(X=X, T=T, Y=np.zeros(8))
    w = MatchWeights.uniform(data.treated_idx, data.control_idx)
    expected = np.sum((X[T == 1].mean(axis=0) - X[T == 0].mean(axis=0)) ** 2)
    assert metrics.sample_imbalance(data, w) == pytest.approx(expected)


def test_sample_imbalance_rejects_empty_weights():
    data = Dataset(X=np.zeros((2, 1)), T=[1, 0], Y=np.zeros(2))
    empty = MatchWeights.from_pairs([0], [], [])
    with pytest.raises(MatchingError):
        metrics.sample_imbalance(data, empty)


def test_calibration_error():
    assert metrics.calibration_error([0.2, 0.9], [0.2, 0.9]) == 0.0
    assert metrics.calibration_error([0.4, 0.6], [0.5, 0.5]) == pytest.approx(0.1)
    e = np.random.default_rng(0).uniform(0, 1, 200_000)
    assert metrics.calibration_error(np.full_like(e, 0.5), e) == pytest.approx(0.25, abs=0.005)
    with pytest.raises(ShapeError):
        metrics.calibration_error([0.5], [0.5, 0.5])


def test_gap_zero_for_identity_score():
    joint = dgp.discrete_scenario("non_balancing", 6, 3, seed=1)
    identity = joint.with_score_map(np.arange(joint.size, dtype=float))
    gap = metrics.conditional_independence_gap(identity)
    assert gap.max_gap() == 0.0


def test_gap_zero_for_balancing_scenario():
    joint = dgp.discrete_scenario("balancing", 8, 3, seed=2)
    assert metrics.conditional_independence_gap(joint).max_gap() < 1e-12


def test_gap_positive_for_parity_score():
    support = np.arange(4.0).reshape(-1, 1)
    p1 = np.array([0.9, 0.5, 0.5, 0.5])
    probs = np.column_stack([0.25 * (1 - p1), 0.25 * p1])
    probs /= probs.sum()
    joint = DiscreteJoint(support=support, probs=probs, score_map=support[:, 0] % 2)
    gap = metrics.conditional_independence_gap(joint, ("tv",))
    level0 = int(np.flatnonzero(gap.level_values[:, 0] == 0.0)[0])
    assert gap.eps["tv"][level0, 1] > 0
    # both members of level 1 share p(t|x), so that level is balanced
    assert gap.eps["tv"][1 - level0, 1] == pytest.approx(0.0, abs=1e-15)


def test_gap_marks_empty_arm_undefined():
    probs = np.array([[0.5, 0.0], [0.0, 0.5]])
    joint = DiscreteJoint(support=[[0.0], [1.0]], probs=probs, score_map=[0.0, 1.0])
    gap = metrics.conditional_independence_gap(joint, ("tv",))
    assert not gap.defined[0, 1] and not gap.defined[1, 0]
    assert gap.error_terms("tv") == (0.0, 0.0)


def test_empirical_pair_validation():
    with pytest.raises(ShapeError):
        EmpiricalPair(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        EmpiricalPair(np.zeros((2, 1)), np.zeros((2, 1)), [0.0, 0.0])


@pytest.mark.parametrize("seed", range(6))
def test_wasserstein_is_symmetric(seed):
    r = np.random.default_rng(seed)
    p, q = r.standard_normal((6, 2)), r.standard_normal((4, 2)) + 0.5
    wp, wq = r.uniform(0.1, 1.0, 6), r.uniform(0.1, 1.0, 4)
    forward = metrics.wasserstein_exact(EmpiricalPair(p, q, wp, wq))
    backward = metrics.wasserstein_exact(EmpiricalPair(q, p, wq, wp))
    assert forward == pytest.approx(backward, abs=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_wasserstein_triangle_inequality(seed):
    r = np.random.default_rng(seed)
    p, q, s = (r.standard_normal((n, 3)) * r.uniform(0.5, 2.0) for n in (5, 7, 4))
    w = lambda a, b: metrics.wasserstein_exact(EmpiricalPair(a, b))  # noqa: E731
    assert w(p, s) <= w(p, q) + w(q, s) + 1e-9


@pytest.mark.parametrize("seed", range(6))
def test_sample_imbalance_is_squared_mmd_under_uniform_weights(seed):
    r = np.random.default_rng(seed)
    n_t, n_c = 4, 9
    X = r.standard_normal((n_t + n_c, 3))
    data = Dataset(X=X, T=np.r_[np.ones(n_t), np.zeros(n_c)], Y=np.zeros(n_t + n_c))
    controls = n_t + r.permutation(n_c)[:n_t]
    w = MatchWeights.from_pairs(np.arange(n_t), np.arange(n_t), controls)
    mmd = metrics.linear_mmd(EmpiricalPair(X[:n_t], X[controls]))
    assert metrics.sample_imbalance(data, w) == pytest.approx(mmd**2, rel=1e-10, abs=1e-14)
