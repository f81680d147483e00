from __future__ import annotations

import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from nsmatch.core.models.dataset import Dataset
from nsmatch.core.models.joint import DiscreteJoint
from nsmatch.core.models.weights import MatchWeights
from nsmatch.errors import InfeasibleMatchError, MatchingError, ShapeError

logger = logging.getLogger(__name__)

CHUNK_SIZE = 512


def _score_matrix(scores: np.ndarray, T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    S = np.asarray(scores, dtype=np.float64)
    if S.ndim == 1:
        S = S.reshape(-1, 1)
    t = np.asarray(T).reshape(-1)
    if S.shape[0] != t.shape[0]:
        raise ShapeError(f"{S.shape[0]} score rows for {t.shape[0]} treatment labels")
    return S, t


def knn_match(scores: np.ndarray, T: np.ndarray, k: int = 1, with_replacement: bool = True) -> MatchWeights:
    """Match every treated unit to its k nearest controls in Euclidean score distance.

    Ties go to the lowest control index. Without replacement, treated units are
    served greedily in index order and a control is used at most once.
    """
    S, t = _score_matrix(scores, T)
    if k < 1:
        raise MatchingError("k must be >= 1")
    treated = np.flatnonzero(t == 1)
    controls = np.flatnonzero(t == 0)
    needed = k if with_replacement else k * treated.shape[0]
    if controls.shape[0] < needed:
        raise MatchingError(f"need at least {needed} controls, have {controls.shape[0]}")
    if treated.shape[0] == 0:
        raise MatchingError("no treated units to match")

    S_c = S[controls]
    if with_replacement:
        picks = np.empty((treated.shape[0], k), dtype=np.intp)
        for start in range(0, treated.shape[0], CHUNK_SIZE):
            D = cdist(S[treated[start : start + CHUNK_SIZE]], S_c)
            if k == 1:
                picks[start : start + CHUNK_SIZE, 0] = np.argmin(D, axis=1)
            else:
                picks[start : start + CHUNK_SIZE] = np.argsort(D, axis=1, kind="stable")[:, :k]
    else:
        available = np.ones(controls.shape[0], dtype=bool)
        picks = np.empty((treated.shape[0], k), dtype=np.intp)
        for row, i in enumerate(treated):
            d = cdist(S[i : i + 1], S_c)[0]
            d[~available] = np.inf
            chosen = np.argsort(d, kind="stable")[:k]
            available[chosen] = False
            picks[row] = chosen

    pair_treated = np.repeat(treated, k)
    pair_control = controls[picks.ravel()]
    logger.debug("matched %d treated to %d distinct controls (k=%d)", treated.shape[0], np.unique(pair_control).shape[0], k)
    return MatchWeights.from_pairs(treated, pair_treated, pair_control)


def random_match(treated: int | Sequence[int] | np.ndarray, control_indices: Sequence[int] | np.ndarray, seed: int) -> MatchWeights:
    """Assign each treated unit one control drawn uniformly with replacement."""
    treated_idx = np.arange(treated) if isinstance(treated, (int, np.integer)) else np.asarray(treated, dtype=np.int64)
    controls = np.asarray(control_indices, dtype=np.int64).reshape(-1)
    if controls.shape[0] == 0:
        raise MatchingError("random matching needs at least one control")
    rng = np.random.default_rng(seed)
    draws = controls[rng.integers(0, controls.shape[0], size=treated_idx.shape[0])]
    return MatchWeights.from_pairs(treated_idx, treated_idx, draws)


def estimate_y0(weights: MatchWeights, Y: np.ndarray, i: int) -> float:
    js, ws = weights.matches_of(i)
    if js.shape[0] == 0:
        raise MatchingError(f"treated unit {i} has no match")
    y = np.asarray(Y, dtype=np.float64)
    return float(ws @ y[js] / ws.sum())


def _y0_all(weights: MatchWeights, Y: np.ndarray) -> np.ndarray:
    y = np.asarray(Y, dtype=np.float64)
    pos = np.searchsorted(weights.treated, weights.pair_treated)
    num = np.bincount(pos, weights=weights.pair_weight * y[weights.pair_control], minlength=weights.treated.shape[0])
    den = np.bincount(pos, weights=weights.pair_weight, minlength=weights.treated.shape[0])
    return num / den


def estimate_att(dataset: Dataset, weights: MatchWeights) -> float:
    if weights.treated.shape[0] == 0:
        raise MatchingError("no treated units")
    missing = weights.unmatched_treated()
    if missing.shape[0]:
        raise MatchingError(f"{missing.shape[0]} treated units are unmatched (first: {int(missing[0])})")
    y0 = _y0_all(weights, dataset.Y)
    return float(np.mean(dataset.Y[weights.treated] - y0))


def ground_truth_att(dataset: Dataset) -> float:
    if dataset.mu0 is None or dataset.mu1 is None:
        raise MatchingError("ground-truth ATT needs mu0 and mu1")
    treated = dataset.treated_idx
    if treated.shape[0] == 0:
        raise MatchingError("ground-truth ATT needs at least one treated unit")
    return float(np.mean(dataset.mu1[treated] - dataset.mu0[treated]))


def match_discrete(joint: DiscreteJoint) -> DiscreteJoint:
    """Exact-score matching on a finite joint.

    Treated rows are kept; the control arm is re-weighted so that
    P'(b | T=0) = P(b | T=1) while P'(X | b, T=0) = P(X | b, T=0). Arm masses
    are preserved.
    """
    level_t1 = joint.level_mass(1) / joint.arm_mass(1)
    level_c = joint.level_mass(0)
    for lvl in np.flatnonzero(level_t1 > 0):
        if level_c[lvl] <= 0:
            raise InfeasibleMatchError(tuple(joint.level_values[lvl].tolist()))

    denom = level_c[joint.level_of]
    within = np.divide(joint.probs[:, 0], denom, out=np.zeros(joint.size), where=denom > 0)
    control = level_t1[joint.level_of] * within
    probs = np.column_stack([joint.arm_mass(0) * control, joint.probs[:, 1]])
    probs /= probs.sum()
    return DiscreteJoint(support=joint.support, probs=probs, score_map=joint.score_map)


def weights_to_frames(weights: MatchWeights) -> tuple[pd.DataFrame, pd.DataFrame]:
    pairs = pd.DataFrame(
        {
            "treated_index": weights.pair_treated,
            "control_index": weights.pair_control,
            "w_ij": weights.pair_weight,
        }
    )
    agg = pd.DataFrame({"control_index": weights.agg_control, "w_j": weights.agg_weight})
    return pairs, agg


def save_weights(weights: MatchWeights, pairs_path: str | Path, aggregated_path: str | Path) -> None:
    pairs, agg = weights_to_frames(weights)
    pairs.to_csv(pairs_path, index=False)
    agg.to_csv(aggregated_path, index=False)
