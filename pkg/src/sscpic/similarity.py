"""Pairwise scoring and embedding pre-transforms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EIG_FLOOR = 1e-8


@dataclass(frozen=True)
class SimilarityMatrix:
    scores: np.ndarray
    temporal_weighted: bool = False

    def __array__(self, dtype=None, copy=None):
        return self.scores if dtype is None else self.scores.astype(dtype)

    @property
    def shape(self):
        return self.scores.shape


def _check_rows(Y: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(Y, axis=1)
    bad = np.flatnonzero(~(norms > 0))
    if bad.size:
        raise ValueError(f"row {bad[0]} has zero norm")
    return norms


def unit_normalize(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    return Y / _check_rows(Y)[:, None]


def cosine_matrix(Y) -> SimilarityMatrix:
    """Cosine similarity between all rows of ``Y``."""
    U = unit_normalize(Y)
    S = U @ U.T
    S = 0.5 * (S + S.T)
    np.clip(S, -1.0, 1.0, out=S)
    np.fill_diagonal(S, 1.0)
    return SimilarityMatrix(S)


def temporal_weight(S, beta: float, n_b: int) -> SimilarityMatrix:
    """Damp scores of temporally distant segments.

    ``s'(i, j) = s(i, j) * beta ** min(n_b, |i - j|)``; negative scores are
    shrunk in magnitude the same way.
    """
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if n_b < 0:
        raise ValueError(f"n_b must be non-negative, got {n_b}")
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("similarity matrix must be square")
    n = S.shape[0]
    lag = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return SimilarityMatrix(S * beta ** np.minimum(n_b, lag), temporal_weighted=True)


@dataclass(frozen=True)
class WhiteningTransform:
    mean: np.ndarray
    projection: np.ndarray

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.projection.T


@dataclass(frozen=True)
class PcaTransform:
    basis: np.ndarray
    eigenvalues: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    def apply(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.basis.T


def _sorted_eigh(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, V = np.linalg.eigh(C)
    order = np.argsort(w)[::-1]
    return w[order], V[:, order]


def _sample_cov(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a 2-D data matrix")
    if X.shape[0] < 2:
        raise ValueError(f"need at least 2 rows, got {X.shape[0]}")
    return np.atleast_2d(np.cov(X, rowvar=False))


def fit_whitening(X, eig_floor: float = DEFAULT_EIG_FLOOR) -> WhiteningTransform:
    """Mean removal followed by ``Lambda^-1/2 U^T`` of the sample covariance.

    Eigenvalues are clamped from below at ``eig_floor`` times the largest one.
    """
    X = np.asarray(X, dtype=np.float64)
    w, U = _sorted_eigh(_sample_cov(X))
    floor = eig_floor * max(w[0], 0.0)
    w = np.maximum(w, floor if floor > 0 else eig_floor)
    return WhiteningTransform(X.mean(axis=0), U.T / np.sqrt(w)[:, None])


def fit_pca(X, dim: int | None = None, energy: float | None = None) -> PcaTransform:
    """Top eigenvectors of the sample covariance of ``X``.

    Give either ``dim`` or ``energy``; with ``energy`` the output size is the
    smallest ``k`` whose leading eigenvalues hold that share of the total.
    The projection does not subtract the mean.
    """
    if (dim is None) == (energy is None):
        raise ValueError("give exactly one of dim or energy")
    X = np.asarray(X, dtype=np.float64)
    w, U = _sorted_eigh(_sample_cov(X))
    D = w.size
    if dim is not None:
        if not 1 <= dim <= D:
            raise ValueError(f"PCA dimension {dim} outside [1, {D}]")
        d = dim
    else:
        if not 0 < energy <= 1:
            raise ValueError(f"energy fraction must lie in (0, 1], got {energy}")
        w_pos = np.clip(w, 0, None)
        share = np.cumsum(w_pos) / w_pos.sum()
        d = int(np.searchsorted(share, energy - 1e-12) + 1)
        d = min(d, D)
    return PcaTransform(np.ascontiguousarray(U[:, :d].T), w[:d])
