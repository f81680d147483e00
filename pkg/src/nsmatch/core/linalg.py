"""
Dense real matrix primitives.

Every bound constant in nsmatch comes out of here: the operator (spectral)
norm |||W||| = sigma_max(W) and |||W+||| = 1 / sigma_min(W), where sigma_min is
the smallest singular value that survives the rank tolerance.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from nsmatch.errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

EPS = np.finfo(np.float64).eps


@dataclass(frozen=True, eq=False)
class SvdResult:
    u: np.ndarray
    singular_values: np.ndarray
    v_t: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.singular_values) @ self.v_t


def as_matrix(a: object) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        bad = np.argwhere(~np.isfinite(m))[0]
        raise NonFiniteError(f"matrix entry {tuple(int(i) for i in bad)} is not finite")
    return np.ascontiguousarray(m)


def svd(a: object) -> SvdResult:
    m = as_matrix(a)
    try:
        u, s, vt = scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except np.linalg.LinAlgError:
        # gesdd can fail to converge on badly scaled input
        logger.debug("gesdd did not converge on %s matrix, retrying with gesvd", m.shape)
        u, s, vt = scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd", check_finite=False)
    return SvdResult(u=u, singular_values=np.maximum(s, 0.0), v_t=vt)


def operator_norm(a: object) -> float:
    s = svd(a).singular_values
    return float(s[0]) if s.size else 0.0


def default_rank_tol(a: np.ndarray, s: np.ndarray) -> float:
    return float(EPS * max(a.shape) * (s[0] if s.size else 0.0))


def pseudo_inverse(a: object, rank_tol: float | None = None) -> np.ndarray:
    m = as_matrix(a)
    res = svd(m)
    s = res.singular_values
    tol = default_rank_tol(m, s) if rank_tol is None else float(rank_tol)
    if tol < 0:
        raise ValueError("rank_tol must be non-negative")
    keep = s > tol
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (res.v_t.T * s_inv) @ res.u.T


def nonzero_singular_values(a: object, rank_tol: float | None = None) -> np.ndarray:
    m = as_matrix(a)
    s = svd(m).singular_values
    tol = default_rank_tol(m, s) if rank_tol is None else float(rank_tol)
    return s[s > tol]


def sigma_min_nonzero(a: object, rank_tol: float | None = None) -> float:
    s = nonzero_singular_values(a, rank_tol)
    return float(s[-1]) if s.size else 0.0


def pinv_norm(a: object, rank_tol: float | None = None) -> float:
    """|||A+||| = 1 / sigma_min_nonzero(A); 0 for the zero matrix."""
    smin = sigma_min_nonzero(a, rank_tol)
    return 1.0 / smin if smin > 0 else 0.0


def null_space_basis(a: object, rank_tol: float | None = None) -> np.ndarray:
    """Orthonormal columns spanning ker(A)."""
    m = as_matrix(a)
    full_vt = scipy.linalg.svd(m, full_matrices=True, check_finite=False)[2]
    rank = nonzero_singular_values(m, rank_tol).shape[0]
    return full_vt[rank:].T.copy()
