"""
Data generation and ingestion.

``generate`` draws a synthetic observational study with known propensity and
conditional outcome means. The ``*_scenario`` builders return exact finite
joints for the oracle suites. ``load_csv``/``save_csv`` move datasets through
CSV, and ``split`` cuts a dataset into train/val/test.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import expit

from nsmatch.core import linalg
from nsmatch.core.models.dataset import Dataset
from nsmatch.core.models.joint import DiscreteJoint
from nsmatch.errors import ConfigError, DataFormatError

logger = logging.getLogger(__name__)

PropensityForm = Literal["logistic", "polynomial"]
OutcomeForm = Literal["linear", "exponential"]
ScenarioKind = Literal["balancing", "non_balancing"]

SCALE_FLOOR = 1e-12
OPTIONAL_COLUMNS = ("e", "mu0", "mu1")


@dataclass(frozen=True)
class DgpConfig:
    n: int = 2000
    d_observed: int = 100
    d_latent: int = 5
    treated_fraction_target: float = 0.35
    propensity_form: PropensityForm = "polynomial"
    propensity_degree: int = 3
    propensity_strength: float = 1.0
    outcome_form: OutcomeForm = "exponential"
    base_effect: float = 2.0
    effect_heterogeneity: float = 1.0
    noise_sd: float = 1.0
    covariate_noise_sd: float = 0.5
    overlap_clamp: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ConfigError("n must be >= 2")
        if not 1 <= self.d_latent <= self.d_observed:
            raise ConfigError(f"need 1 <= d_latent <= d_observed, got {self.d_latent} and {self.d_observed}")
        if not 0.0 < self.overlap_clamp < 0.5:
            raise ConfigError("overlap_clamp must lie in (0, 0.5)")
        if not self.overlap_clamp < self.treated_fraction_target < 1.0 - self.overlap_clamp:
            raise ConfigError(
                f"treated_fraction_target {self.treated_fraction_target} is unreachable with "
                f"overlap_clamp {self.overlap_clamp}"
            )
        if self.propensity_form not in ("logistic", "polynomial"):
            raise ConfigError(f"unknown propensity_form {self.propensity_form!r}")
        if self.propensity_form == "polynomial" and self.propensity_degree < 1:
            raise ConfigError("propensity_degree must be >= 1")
        if self.outcome_form not in ("linear", "exponential"):
            raise ConfigError(f"unknown outcome_form {self.outcome_form!r}")
        for name in ("effect_heterogeneity", "noise_sd", "covariate_noise_sd", "propensity_strength"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> DgpConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown dgp config keys: {sorted(unknown)}")
        return cls(**d)


def _assignment_logit(u: np.ndarray, cfg: DgpConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.propensity_form == "logistic":
        return cfg.propensity_strength * u
    coefs = rng.standard_normal(cfg.propensity_degree)
    coefs[0] = abs(coefs[0]) + 0.5
    # u^j / j! keeps higher powers from dominating the tails
    powers = np.stack([u ** (j + 1) / math.factorial(j + 1) for j in range(cfg.propensity_degree)], axis=1)
    return cfg.propensity_strength * (powers @ coefs)


def generate(cfg: DgpConfig) -> Dataset:
    """Synthetic study: a low-dimensional Gaussian latent drives treatment and outcome.

    X = Z Q^T + noise with Q (d_observed x d_latent) orthonormal, so the true
    balancing structure is the linear score Q^T x. The propensity intercept is
    solved so that the mean clamped propensity equals the target fraction.
    """
    rng = np.random.default_rng(cfg.seed)
    Z = rng.standard_normal((cfg.n, cfg.d_latent))
    Q, _ = np.linalg.qr(rng.standard_normal((cfg.d_observed, cfg.d_latent)))
    X = Z @ Q.T + cfg.covariate_noise_sd * rng.standard_normal((cfg.n, cfg.d_observed))
    proj = X @ Q
    proj_sd = math.sqrt(1.0 + cfg.covariate_noise_sd**2)

    theta = rng.standard_normal(cfg.d_latent)
    u = proj @ (theta / np.linalg.norm(theta)) / proj_sd
    g = _assignment_logit(u, cfg, rng)
    lo, hi = cfg.overlap_clamp, 1.0 - cfg.overlap_clamp

    def realized(a: float) -> float:
        return float(np.mean(np.clip(expit(g + a), lo, hi))) - cfg.treated_fraction_target

    intercept = brentq(realized, -60.0, 60.0, xtol=1e-12)
    e = np.clip(expit(g + intercept), lo, hi)
    T = (rng.random(cfg.n) < e).astype(np.int8)
    if T.sum() in (0, cfg.n):
        raise ConfigError(f"degenerate draw: {int(T.sum())} treated of {cfg.n}")

    gamma = rng.standard_normal(cfg.d_latent)
    lin = proj @ gamma / math.sqrt(cfg.d_latent) / proj_sd
    mu0 = np.exp(lin) if cfg.outcome_form == "exponential" else lin
    eta = rng.standard_normal(cfg.d_latent)
    h = proj @ (eta / np.linalg.norm(eta)) / proj_sd
    tau = cfg.base_effect + cfg.effect_heterogeneity * h
    mu1 = mu0 + tau
    Y = np.where(T == 1, mu1, mu0) + cfg.noise_sd * rng.standard_normal(cfg.n)

    logger.info(
        "generated n=%d d=%d: %d treated (target %.3f), intercept %.4f",
        cfg.n, cfg.d_observed, int(T.sum()), cfg.treated_fraction_target, intercept,
    )
    return Dataset(X=X, T=T, Y=Y, e_true=e, mu0=mu0, mu1=mu1)


def _positive(rng: np.random.Generator, n: int) -> np.ndarray:
    w = rng.uniform(0.5, 1.5, n)
    return w / w.sum()


def _level_assignment(rng: np.random.Generator, size: int, levels: int) -> np.ndarray:
    # every level gets at least one point
    assign = np.concatenate([np.arange(levels), rng.integers(0, levels, size - levels)])
    return rng.permutation(assign)


def _split_by_propensity(base: np.ndarray, p_treat: np.ndarray) -> np.ndarray:
    probs = np.column_stack([base * (1.0 - p_treat), base * p_treat])
    return probs / probs.sum()


def _perturbed(rng: np.random.Generator, p_level: np.ndarray, perturbation: float) -> np.ndarray:
    noise = rng.uniform(-1.0, 1.0, p_level.shape[0])
    return np.clip(p_level + perturbation * noise, 0.01, 0.99)


def discrete_scenario(
    kind: ScenarioKind,
    support_size: int,
    score_levels: int,
    seed: int,
    perturbation: float = 0.2,
    covariate_dim: int = 2,
) -> DiscreteJoint:
    """A finite joint with a scalar score taking ``score_levels`` values.

    Balancing: p(t | x) depends on x only through its score level.
    Non-balancing: p(t | x) is moved off its level value by up to
    ``perturbation``; at perturbation 0 the output equals the balancing one.
    """
    if not 1 <= score_levels <= support_size:
        raise ConfigError(f"need 1 <= score_levels <= support_size, got {score_levels} and {support_size}")
    if kind not in ("balancing", "non_balancing"):
        raise ConfigError(f"unknown scenario kind {kind!r}")
    rng = np.random.default_rng(seed)
    support = rng.standard_normal((support_size, covariate_dim))
    level = _level_assignment(rng, support_size, score_levels)
    p_level = _positive(rng, score_levels)
    p_within = rng.uniform(0.5, 1.5, support_size)
    p_within /= np.bincount(level, weights=p_within, minlength=score_levels)[level]
    treat_level = rng.uniform(0.2, 0.8, score_levels)

    p_treat = treat_level[level]
    shifted = _perturbed(rng, p_treat, perturbation)
    if kind == "non_balancing":
        p_treat = shifted
    probs = _split_by_propensity(p_level[level] * p_within, p_treat)
    return DiscreteJoint(support=support, probs=probs, score_map=level.astype(np.float64).reshape(-1, 1))


@dataclass(frozen=True, eq=False)
class LinearScenario:
    """A finite joint whose score map is exactly b(x) = W x."""

    joint: DiscreteJoint
    W: np.ndarray


def linear_scenario(
    kind: ScenarioKind,
    n_levels: int,
    null_points: int,
    dim_in: int,
    dim_score: int,
    seed: int,
    perturbation: float = 0.2,
) -> LinearScenario:
    """Covariates x = W+ beta + n with beta in range(W) and n in ker(W).

    beta and n are drawn independently, so the law of the null-space part is
    the same at every score level. The score map stores beta itself.
    """
    if n_levels < 1 or null_points < 1:
        raise ConfigError("n_levels and null_points must be >= 1")
    if kind not in ("balancing", "non_balancing"):
        raise ConfigError(f"unknown scenario kind {kind!r}")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((dim_score, dim_in))
    W_pinv = linalg.pseudo_inverse(W)
    betas = rng.standard_normal((n_levels, dim_in)) @ W.T
    null = linalg.null_space_basis(W)
    if null.shape[1] == 0:
        offsets = np.zeros((1, dim_in))
    else:
        offsets = rng.standard_normal((null_points, null.shape[1])) @ null.T

    level = np.repeat(np.arange(n_levels), offsets.shape[0])
    which = np.tile(np.arange(offsets.shape[0]), n_levels)
    support = betas[level] @ W_pinv.T + offsets[which]
    base = _positive(rng, n_levels)[level] * _positive(rng, offsets.shape[0])[which]
    p_treat = rng.uniform(0.2, 0.8, n_levels)[level]
    shifted = _perturbed(rng, p_treat, perturbation)
    if kind == "non_balancing":
        p_treat = shifted
    joint = DiscreteJoint(support=support, probs=_split_by_propensity(base, p_treat), score_map=betas[level])
    return LinearScenario(joint=joint, W=W)


@dataclass(frozen=True, eq=False)
class LayeredScenario:
    """A finite joint with propensity e = g(f2(f1(x))) and the score maps of each stage."""

    joint: DiscreteJoint
    score_maps: tuple[np.ndarray, ...] = field(default=())


def layered_scenario(support_size: int, fine_levels: int, coarse_levels: int, seed: int, covariate_dim: int = 2) -> LayeredScenario:
    if not 1 <= coarse_levels <= fine_levels <= support_size:
        raise ConfigError("need 1 <= coarse_levels <= fine_levels <= support_size")
    rng = np.random.default_rng(seed)
    support = rng.standard_normal((support_size, covariate_dim))
    f1 = _level_assignment(rng, support_size, fine_levels)
    f2 = _level_assignment(rng, fine_levels, coarse_levels)
    coarse = f2[f1]
    propensity = np.sort(rng.uniform(0.1, 0.9, coarse_levels))[coarse]
    probs = _split_by_propensity(_positive(rng, support_size), propensity)
    maps = (
        f1.astype(np.float64).reshape(-1, 1),
        coarse.astype(np.float64).reshape(-1, 1),
        propensity.reshape(-1, 1),
    )
    return LayeredScenario(joint=DiscreteJoint(support=support, probs=probs, score_map=maps[0]), score_maps=maps)


def _bad_line(message: str) -> int | None:
    m = re.search(r"line (\d+)", message)
    return int(m.group(1)) - 1 if m else None


def _check_header(columns: list[str]) -> int:
    xs = [c for c in columns if c.startswith("x")]
    expected = [f"x{i}" for i in range(len(xs))]
    if not xs or xs != expected:
        raise DataFormatError(f"covariate columns must be x0..x{{D-1}} in order, got {xs}")
    for required in ("t", "y"):
        if required not in columns:
            raise DataFormatError(f"missing column {required!r}")
    unknown = set(columns) - set(xs) - {"t", "y", *OPTIONAL_COLUMNS}
    if unknown:
        raise DataFormatError(f"unknown columns {sorted(unknown)}")
    return len(xs)


def load_csv(path: str | Path, standardize: bool = False) -> Dataset:
    """Read ``x0..x{D-1}, t, y[, e, mu0, mu1]``; rows are reported 1-based, header excluded.

    With ``standardize`` every non-binary covariate column is centred and
    divided by max(sd, 1e-12); {0, 1}-valued columns are left as they are.
    """
    try:
        raw = pd.read_csv(path, float_precision="round_trip", skipinitialspace=True)
    except pd.errors.ParserError as e:
        raise DataFormatError(f"ragged row: {e}", row=_bad_line(str(e))) from e
    except pd.errors.EmptyDataError as e:
        raise DataFormatError("empty file") from e
    columns = [c.strip() for c in raw.columns]
    raw.columns = columns
    d = _check_header(columns)
    if raw.empty:
        raise DataFormatError("no data rows")

    # float columns pass through untouched; text cells become NaN and are reported below
    frame = raw.apply(pd.to_numeric, errors="coerce")
    values = frame.to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataFormatError(f"column {columns[c]!r} value {raw.iat[r, c]!r} is not a finite number", row=int(r) + 1)
    t = frame["t"].to_numpy()
    not_binary = np.flatnonzero((t != 0) & (t != 1))
    if not_binary.size:
        raise DataFormatError(f"t must be 0 or 1, got {t[not_binary[0]]!r}", row=int(not_binary[0]) + 1)

    X = frame[[f"x{i}" for i in range(d)]].to_numpy(dtype=np.float64)
    if standardize:
        binary = np.all((X == 0.0) | (X == 1.0), axis=0)
        cont = ~binary
        mean = X[:, cont].mean(axis=0)
        sd = np.maximum(X[:, cont].std(axis=0, ddof=0), SCALE_FLOOR)
        X[:, cont] = (X[:, cont] - mean) / sd
        logger.debug("standardized %d continuous columns, left %d binary", int(cont.sum()), int(binary.sum()))

    def optional(name: str) -> np.ndarray | None:
        return frame[name].to_numpy(dtype=np.float64) if name in frame else None

    return Dataset(
        X=X,
        T=t.astype(np.int8),
        Y=frame["y"].to_numpy(dtype=np.float64),
        e_true=optional("e"),
        mu0=optional("mu0"),
        mu1=optional("mu1"),
    )


def save_csv(dataset: Dataset, path: str | Path) -> None:
    """Write ``dataset`` so that ``load_csv`` reads back identical floats."""
    cols: dict[str, np.ndarray] = {f"x{i}": dataset.X[:, i] for i in range(dataset.d)}
    cols["t"] = dataset.T.astype(np.int64)
    cols["y"] = dataset.Y
    for name, arr in (("e", dataset.e_true), ("mu0", dataset.mu0), ("mu1", dataset.mu1)):
        if arr is not None:
            cols[name] = arr
    # float repr is the shortest string that round-trips
    pd.DataFrame(cols).to_csv(path, index=False, float_format=None)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self) -> None:
        r = tuple(float(x) for x in self.ratios)
        if len(r) != 3 or any(x <= 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {self.ratios}")
        object.__setattr__(self, "ratios", r)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SplitSpec:
        unknown = set(d) - {"ratios", "seed"}
        if unknown:
            raise ConfigError(f"unknown split keys: {sorted(unknown)}")
        return cls(ratios=tuple(d.get("ratios", (0.6, 0.2, 0.2))), seed=int(d.get("seed", 0)))  # type: ignore[arg-type]


@dataclass(frozen=True, eq=False)
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset
    indices: tuple[np.ndarray, np.ndarray, np.ndarray]

    @property
    def in_sample(self) -> Dataset:
        return Dataset.concat([self.train, self.val])

    @property
    def hold_out(self) -> Dataset:
        return self.test


def split(dataset: Dataset, plan: SplitSpec, stream: int = 0) -> Splits:
    """Seeded shuffle then contiguous cut; ``stream`` separates datasets sharing one plan."""
    rng = np.random.default_rng([plan.seed, stream])
    order = rng.permutation(dataset.n)
    n_train = int(round(plan.ratios[0] * dataset.n))
    n_val = int(round(plan.ratios[1] * dataset.n))
    parts = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
    out = []
    for name, idx in zip(("train", "val", "test"), parts):
        if idx.size == 0:
            raise ConfigError(f"{name} split is empty for n={dataset.n}")
        sub = dataset.subset(idx)
        n_t = int(sub.T.sum())
        if n_t == 0 or n_t == sub.n:
            raise ConfigError(f"{name} split lacks an arm ({n_t} treated of {sub.n})")
        out.append(sub)
    return Splits(train=out[0], val=out[1], test=out[2], indices=parts)
