from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from nsmatch.errors import NonFiniteError, ShapeError

PROB_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteJoint:
    """Exact joint p(x, t) on a finite covariate support.

    ``support`` is (S, D); ``probs`` is (S, 2) with column t holding p(x_s, T=t);
    ``score_map`` is (S, k) and gives the deterministic score b(x_s). Rows of
    ``score_map`` that compare equal form one score level.
    """

    support: np.ndarray
    probs: np.ndarray
    score_map: np.ndarray

    def __post_init__(self) -> None:
        support = np.asarray(self.support, dtype=np.float64)
        if support.ndim == 1:
            support = support.reshape(-1, 1)
        probs = np.asarray(self.probs, dtype=np.float64)
        scores = np.asarray(self.score_map, dtype=np.float64)
        if scores.ndim == 1:
            scores = scores.reshape(-1, 1)
        s = support.shape[0]
        if probs.shape != (s, 2):
            raise ShapeError(f"probs must have shape ({s}, 2), got {probs.shape}")
        if scores.shape[0] != s:
            raise ShapeError(f"score_map has {scores.shape[0]} rows, support has {s}")
        if not (np.all(np.isfinite(support)) and np.all(np.isfinite(probs)) and np.all(np.isfinite(scores))):
            raise NonFiniteError("joint contains non-finite values")
        if np.any(probs < 0):
            raise ShapeError("probabilities must be non-negative")
        total = probs.sum()
        if abs(total - 1.0) > PROB_TOL:
            raise ShapeError(f"probabilities sum to {total!r}, expected 1")
        if probs[:, 0].sum() <= 0 or probs[:, 1].sum() <= 0:
            raise ShapeError("both treatment arms need positive mass")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "score_map", scores)

    @property
    def size(self) -> int:
        return self.support.shape[0]

    def arm_mass(self, t: int) -> float:
        return float(self.probs[:, t].sum())

    def conditional(self, t: int) -> np.ndarray:
        """P(x | T=t) over the support."""
        col = self.probs[:, t]
        return col / col.sum()

    def propensity(self) -> np.ndarray:
        """p(T=1 | x); NaN where x has zero mass."""
        marg = self.probs.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(marg > 0, self.probs[:, 1] / marg, np.nan)

    @cached_property
    def _levels(self) -> tuple[np.ndarray, np.ndarray]:
        values, inverse = np.unique(self.score_map, axis=0, return_inverse=True)
        return values, inverse.reshape(-1)

    @property
    def level_values(self) -> np.ndarray:
        return self._levels[0]

    @property
    def level_of(self) -> np.ndarray:
        return self._levels[1]

    @property
    def n_levels(self) -> int:
        return self._levels[0].shape[0]

    def level_mass(self, t: int | None = None) -> np.ndarray:
        """Mass of each score level, jointly with T=t (or marginally when t is None)."""
        col = self.probs.sum(axis=1) if t is None else self.probs[:, t]
        return np.bincount(self.level_of, weights=col, minlength=self.n_levels)

    def with_score_map(self, score_map: np.ndarray) -> DiscreteJoint:
        return DiscreteJoint(support=self.support, probs=self.probs, score_map=score_map)
