import dataclasses

import numpy as np
import pytest

from nsmatch.core import dgp, matching, metrics
from nsmatch.core.models.dataset import Dataset
from nsmatch.errors import ConfigError, DataFormatError


def test_generate_is_deterministic(small_dgp):
    a, b = dgp.generate(small_dgp), dgp.generate(small_dgp)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.T, b.T) and np.array_equal(a.Y, b.Y)


def test_generate_respects_overlap_clamp(small_dgp):
    data = dgp.generate(small_dgp)
    assert data.e_true.min() >= small_dgp.overlap_clamp
    assert data.e_true.max() <= 1.0 - small_dgp.overlap_clamp
    assert np.all(np.isfinite(data.mu0)) and np.all(np.isfinite(data.mu1))


def test_generate_constant_effect():
    cfg = dgp.DgpConfig(n=300, d_observed=4, d_latent=2, effect_heterogeneity=0.0, base_effect=2.0, seed=1)
    assert matching.ground_truth_att(dgp.generate(cfg)) == pytest.approx(2.0, abs=1e-12)


def test_noiseless_duplicate_matching_recovers_truth():
    cfg = dgp.DgpConfig(n=200, d_observed=3, d_latent=1, noise_sd=0.0, effect_heterogeneity=0.0, seed=2)
    data = dgp.generate(cfg)
    t = data.treated_idx
    # controls become exact copies of the treated covariates with mu0 outcomes
    twins = Dataset(
        X=np.vstack([data.X[t], data.X[t]]),
        T=np.r_[np.ones(t.size), np.zeros(t.size)],
        Y=np.r_[data.Y[t], data.mu0[t]],
        mu0=np.r_[data.mu0[t], data.mu0[t]],
        mu1=np.r_[data.mu1[t], data.mu1[t]],
    )
    att = matching.estimate_att(twins, matching.knn_match(twins.X, twins.T))
    assert att == pytest.approx(matching.ground_truth_att(twins), abs=1e-9)


def test_treated_fraction_hits_target():
    fractions = [
        dgp.generate(dgp.DgpConfig(n=5000, d_observed=10, d_latent=5, seed=s)).T.mean() for s in range(10)
    ]
    assert abs(np.mean(fractions) - 0.35) < 0.03


@pytest.mark.parametrize("form", ["logistic", "polynomial"])
def test_outcome_and_propensity_forms(form):
    cfg = dgp.DgpConfig(n=100, d_observed=4, d_latent=2, propensity_form=form, outcome_form="linear", seed=5)
    data = dgp.generate(cfg)
    assert data.n == 100 and 0 < data.T.sum() < 100


def test_dgp_config_validation():
    with pytest.raises(ConfigError):
        dgp.DgpConfig(d_latent=10, d_observed=5)
    with pytest.raises(ConfigError):
        dgp.DgpConfig(treated_fraction_target=0.99, overlap_clamp=0.02)
    with pytest.raises(ConfigError, match="unknown"):
        dgp.DgpConfig.from_dict({"samples": 10})


@pytest.mark.parametrize("seed", range(5))
def test_balancing_scenario_has_zero_gap(seed):
    joint = dgp.discrete_scenario("balancing", 9, 4, seed)
    assert metrics.conditional_independence_gap(joint).max_gap() < 1e-12
    assert abs(metrics.tv_discrete(joint) - metrics.tv_discrete(joint, on_score=True)) < 1e-12
    e = joint.propensity()
    for lvl in range(joint.n_levels):
        members = e[joint.level_of == lvl]
        assert np.ptp(members) < 1e-14


def test_non_balancing_without_perturbation_equals_balancing():
    a = dgp.discrete_scenario("balancing", 6, 2, seed=3)
    b = dgp.discrete_scenario("non_balancing", 6, 2, seed=3, perturbation=0.0)
    assert np.array_equal(a.probs, b.probs) and np.array_equal(a.support, b.support)


def test_non_balancing_scenario_has_gap():
    joint = dgp.discrete_scenario("non_balancing", 8, 2, seed=0, perturbation=0.3)
    assert metrics.conditional_independence_gap(joint, ("tv",)).max_gap() > 0


def test_linear_scenario_score_is_linear_map():
    case = dgp.linear_scenario("balancing", n_levels=3, null_points=2, dim_in=4, dim_score=2, seed=0)
    assert np.allclose(case.joint.support @ case.W.T, case.joint.score_map, atol=1e-10)


def test_layered_scenario_every_stage_balances():
    case = dgp.layered_scenario(10, 5, 2, seed=1)
    for score_map in case.score_maps:
        gap = metrics.conditional_independence_gap(case.joint.with_score_map(score_map), ("tv",))
        assert gap.max_gap() < 1e-12


def _write(tmp_path, text: str):
    path = tmp_path / "d.csv"
    path.write_text(text, encoding="utf-8")
    return path


def test_csv_round_trip_is_bit_exact(tmp_path):
    data = Dataset(
        X=np.array([[0.1, 1e-300], [np.pi, -2.5]]),
        T=[1, 0],
        Y=np.array([1 / 3, 2.0]),
        e_true=np.array([0.3, 0.7]),
    )
    dgp.save_csv(data, tmp_path / "d.csv")
    back = dgp.load_csv(tmp_path / "d.csv")
    assert np.array_equal(back.X, data.X) and np.array_equal(back.Y, data.Y)
    assert np.array_equal(back.e_true, data.e_true)
    assert back.mu0 is None


def test_csv_with_propensity_supports_calibration(tmp_path):
    data = dgp.load_csv(_write(tmp_path, "x0,t,y,e\n0.5,1,2.0,0.4\n1.5,0,1.0,0.6\n"))
    assert metrics.calibration_error(np.array([0.5, 0.5]), data.e_true) == pytest.approx(0.1)


@pytest.mark.parametrize(
    "text, row",
    [
        ("x0,t,y\n1,0,2\n1,2,0,5\n", 2),
        ("x0,t,y\n1,0,2\n3,1,4\n1,2,0\n", 3),
        ("x0,t,y\n1,0,2\nnan,1,4\n", 2),
        ("x0,t,y\n1,0,2\n1,1,abc\n", 2),
    ],
)
def test_csv_errors_carry_row(tmp_path, text, row):
    with pytest.raises(DataFormatError) as info:
        dgp.load_csv(_write(tmp_path, text))
    assert info.value.row == row


def test_csv_header_errors(tmp_path):
    with pytest.raises(DataFormatError, match="x0"):
        dgp.load_csv(_write(tmp_path, "x1,t,y\n1,0,2\n"))
    with pytest.raises(DataFormatError, match="'y'"):
        dgp.load_csv(_write(tmp_path, "x0,t\n1,0\n"))
    with pytest.raises(DataFormatError, match="unknown"):
        dgp.load_csv(_write(tmp_path, "x0,t,y,z\n1,0,2,3\n"))


def test_csv_standardize(tmp_path):
    data = dgp.load_csv(_write(tmp_path, "x0,x1,x2,t,y\n5,1,1,1,0\n5,0,3,0,0\n5,1,5,1,0\n"), standardize=True)
    assert np.array_equal(data.X[:, 0], np.zeros(3))
    assert np.array_equal(data.X[:, 1], [1.0, 0.0, 1.0])
    assert data.X[:, 2].mean() == pytest.approx(0.0) and data.X[:, 2].std() == pytest.approx(1.0)


def _balanced(n: int) -> Dataset:
    return Dataset(X=np.arange(n, dtype=float), T=np.arange(n) % 2, Y=np.zeros(n))


@pytest.fixture
def interleaved_by_shuffle() -> tuple[Dataset, np.ndarray]:
    """Ten rows whose arms alternate along the seed-7 shuffle order, so every contiguous cut holds both."""
    order = np.random.default_rng([7, 0]).permutation(10)
    T = np.empty(10, dtype=int)
    T[order] = np.arange(10) % 2
    return Dataset(X=np.arange(10, dtype=float), T=T, Y=np.zeros(10)), order


def test_split_sizes_and_partition(interleaved_by_shuffle):
    data, order = interleaved_by_shuffle
    s = dgp.split(data, dgp.SplitSpec(seed=7))
    assert tuple(len(i) for i in s.indices) == (6, 2, 2)
    assert np.array_equal(np.concatenate(s.indices), order)
    assert np.array_equal(np.sort(np.concatenate(s.indices)), np.arange(10))
    assert [int(part.T.sum()) for part in (s.train, s.val, s.test)] == [3, 1, 1]
    assert s.in_sample.n == 8 and s.hold_out.n == 2


def test_split_is_deterministic_and_stream_dependent():
    data = _balanced(200)
    plan = dgp.SplitSpec(seed=4)
    a, b = dgp.split(data, plan), dgp.split(data, plan)
    assert all(np.array_equal(x, y) for x, y in zip(a.indices, b.indices))
    c = dgp.split(data, plan, stream=1)
    assert not np.array_equal(a.indices[0], c.indices[0])


def test_split_rejects_missing_arm():
    data = Dataset(X=np.arange(10, dtype=float), T=[1] + [0] * 9, Y=np.zeros(10))
    with pytest.raises(ConfigError, match="arm"):
        dgp.split(data, dgp.SplitSpec())


def test_split_spec_validation():
    with pytest.raises(ConfigError):
        dgp.SplitSpec(ratios=(0.5, 0.5, 0.5))
    assert dataclasses.astuple(dgp.SplitSpec.from_dict({"seed": 3})) == ((0.6, 0.2, 0.2), 3)
