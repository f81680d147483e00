from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nsmatch.errors import MatchingError, ShapeError


@dataclass(frozen=True, eq=False)
class MatchWeights:
    """Sparse treated -> control assignment w_ij plus aggregated control weights w_j.

    Pairs are stored in coordinate form, sorted by (treated, control). Treated
    units carry weight 1 implicitly. ``agg_control``/``agg_weight`` hold
    w_j = sum_i w_ij / sum_j' w_ij'.
    """

    treated: np.ndarray
    pair_treated: np.ndarray
    pair_control: np.ndarray
    pair_weight: np.ndarray
    agg_control: np.ndarray
    agg_weight: np.ndarray

    @classmethod
    def from_pairs(
        cls,
        treated: np.ndarray,
        pair_treated: np.ndarray,
        pair_control: np.ndarray,
        pair_weight: np.ndarray | None = None,
    ) -> MatchWeights:
        treated = np.asarray(treated, dtype=np.int64).reshape(-1)
        pt = np.asarray(pair_treated, dtype=np.int64).reshape(-1)
        pc = np.asarray(pair_control, dtype=np.int64).reshape(-1)
        pw = np.ones(pt.shape[0]) if pair_weight is None else np.asarray(pair_weight, dtype=np.float64).reshape(-1)
        if not (pt.shape == pc.shape == pw.shape):
            raise ShapeError("pair arrays must have equal length")
        if np.any(pw <= 0) or not np.all(np.isfinite(pw)):
            raise MatchingError("pair weights must be finite and strictly positive")

        order = np.lexsort((pc, pt))
        pt, pc, pw = pt[order], pc[order], pw[order]

        # normalise each treated row, then accumulate per control
        uniq_t, inverse = np.unique(pt, return_inverse=True)
        row_sum = np.bincount(inverse.reshape(-1), weights=pw, minlength=uniq_t.shape[0])
        share = pw / row_sum[inverse.reshape(-1)]
        agg_c, agg_inv = np.unique(pc, return_inverse=True)
        agg_w = np.bincount(agg_inv.reshape(-1), weights=share, minlength=agg_c.shape[0])

        return cls(
            treated=np.sort(treated),
            pair_treated=pt,
            pair_control=pc,
            pair_weight=pw,
            agg_control=agg_c,
            agg_weight=agg_w,
        )

    @classmethod
    def uniform(cls, treated: np.ndarray, controls: np.ndarray) -> MatchWeights:
        """No matching: every control keeps weight N_t / N_c and no pairs exist."""
        treated = np.sort(np.asarray(treated, dtype=np.int64).reshape(-1))
        controls = np.sort(np.asarray(controls, dtype=np.int64).reshape(-1))
        if controls.shape[0] == 0:
            raise MatchingError("no controls")
        empty_i = np.empty(0, dtype=np.int64)
        return cls(
            treated=treated,
            pair_treated=empty_i,
            pair_control=empty_i,
            pair_weight=np.empty(0),
            agg_control=controls,
            agg_weight=np.full(controls.shape[0], treated.shape[0] / controls.shape[0]),
        )

    @property
    def n_pairs(self) -> int:
        return int(self.pair_treated.shape[0])

    @property
    def pairs(self) -> dict[int, list[tuple[int, float]]]:
        out: dict[int, list[tuple[int, float]]] = {}
        for i, j, w in zip(self.pair_treated.tolist(), self.pair_control.tolist(), self.pair_weight.tolist()):
            out.setdefault(i, []).append((j, w))
        return out

    @property
    def aggregated(self) -> dict[int, float]:
        return dict(zip(self.agg_control.tolist(), self.agg_weight.tolist()))

    def matches_of(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = np.searchsorted(self.pair_treated, [i, i + 1])
        return self.pair_control[lo:hi], self.pair_weight[lo:hi]

    def unmatched_treated(self) -> np.ndarray:
        return np.setdiff1d(self.treated, self.pair_treated)
