from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nsmatch.errors import MatchingError, NonFiniteError, ShapeError


def _as_optional(a: np.ndarray | None, n: int, name: str) -> np.ndarray | None:
    if a is None:
        return None
    arr = np.asarray(a, dtype=np.float64).reshape(-1)
    if arr.shape[0] != n:
        raise ShapeError(f"{name} has {arr.shape[0]} entries, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates X (N x D), binary treatment T, outcome Y and optional ground truth."""

    X: np.ndarray
    T: np.ndarray
    Y: np.ndarray
    e_true: np.ndarray | None = None
    mu0: np.ndarray | None = None
    mu1: np.ndarray | None = None

    def __post_init__(self) -> None:
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise ShapeError(f"X must be 2-D, got shape {X.shape}")
        n = X.shape[0]
        T = np.asarray(self.T).reshape(-1)
        if T.shape[0] != n:
            raise ShapeError(f"T has {T.shape[0]} entries, X has {n} rows")
        if not np.all((T == 0) | (T == 1)):
            raise ShapeError("T must be binary (0/1)")
        if not np.all(np.isfinite(X)):
            raise NonFiniteError("X contains non-finite values")
        Y = _as_optional(self.Y, n, "Y")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "T", T.astype(np.int8))
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "e_true", _as_optional(self.e_true, n, "e_true"))
        object.__setattr__(self, "mu0", _as_optional(self.mu0, n, "mu0"))
        object.__setattr__(self, "mu1", _as_optional(self.mu1, n, "mu1"))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def treated_idx(self) -> np.ndarray:
        return np.flatnonzero(self.T == 1)

    @property
    def control_idx(self) -> np.ndarray:
        return np.flatnonzero(self.T == 0)

    @property
    def has_ground_truth(self) -> bool:
        return self.mu0 is not None and self.mu1 is not None

    @property
    def overlap_ok(self) -> bool | None:
        """True when every true propensity lies strictly inside (0, 1); None without e_true."""
        if self.e_true is None:
            return None
        return bool(np.all((self.e_true > 0.0) & (self.e_true < 1.0)))

    def require_both_arms(self) -> None:
        n_t = int(self.T.sum())
        if n_t == 0 or n_t == self.n:
            raise MatchingError(f"dataset needs both arms, has {n_t} treated of {self.n}")

    def subset(self, idx: np.ndarray) -> Dataset:
        idx = np.asarray(idx, dtype=np.intp)

        def take(a: np.ndarray | None) -> np.ndarray | None:
            return None if a is None else a[idx]

        return Dataset(
            X=self.X[idx],
            T=self.T[idx],
            Y=self.Y[idx],
            e_true=take(self.e_true),
            mu0=take(self.mu0),
            mu1=take(self.mu1),
        )

    @staticmethod
    def concat(parts: list[Dataset]) -> Dataset:
        if not parts:
            raise ShapeError("nothing to concatenate")

        def cat(name: str) -> np.ndarray | None:
            arrays = [getattr(p, name) for p in parts]
            if any(a is None for a in arrays):
                return None
            return np.concatenate(arrays)

        return Dataset(
            X=np.vstack([p.X for p in parts]),
            T=np.concatenate([p.T for p in parts]),
            Y=np.concatenate([p.Y for p in parts]),
            e_true=cat("e_true"),
            mu0=cat("mu0"),
            mu1=cat("mu1"),
        )
