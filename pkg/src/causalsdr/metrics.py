"""Subspace accuracy metric and the variance-only baseline."""

from __future__ import annotations

import warnings

import numpy as np

from .errors import RankDeficient

_COND_SWITCH = 1e8  # above this, build projectors from an orthonormal factor


class DegenerateSpectrumWarning(UserWarning):
    """Eigenvalue tie at the retained/discarded boundary of a PCA fit."""


def column_space_projector(b: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the column space of a full-rank matrix."""
    b = np.asarray(b, dtype=np.float64)
    sv = np.linalg.svd(b, compute_uv=False)
    if sv[-1] <= b.shape[0] * np.finfo(np.float64).eps * sv[0]:
        raise RankDeficient(f"matrix of shape {b.shape} is not full column rank")
    if sv[0] / sv[-1] > _COND_SWITCH:
        q, _ = np.linalg.qr(b)
        return q @ q.T
    return b @ np.linalg.solve(b.T @ b, b.T)


def projection_distance(beta_hat: np.ndarray, beta_true: np.ndarray) -> float:
    """Frobenius distance between the two column-space projectors.

    Invariant to right-multiplying either argument by any invertible d x d
    matrix; ranges over [0, sqrt(2 d)].
    """
    beta_hat = np.asarray(beta_hat, dtype=np.float64)
    beta_true = np.asarray(beta_true, dtype=np.float64)
    if beta_hat.shape != beta_true.shape:
        raise ValueError(f"shape mismatch: {beta_hat.shape} vs {beta_true.shape}")
    diff = column_space_projector(beta_hat) - column_space_projector(beta_true)
    return float(np.linalg.norm(diff, "fro"))


def pca_directions(a: np.ndarray, d: int) -> np.ndarray:
    """Top-d eigenvectors of the sample covariance of the treatment matrix.

    Columns are orthonormal, ordered by decreasing eigenvalue, and sign-fixed
    so the largest-magnitude entry of each column is positive.  A tie (within
    1e-10) between the d-th and (d+1)-th eigenvalues is resolved by eigenvalue
    index and reported with :class:`DegenerateSpectrumWarning`.
    """
    a = np.asarray(a, dtype=np.float64)
    n, p = a.shape
    if n <= p:
        raise ValueError(f"need more rows than columns, got {a.shape}")
    if not 1 <= d <= p:
        raise ValueError(f"d must be in [1, {p}], got {d}")
    eigval, eigvec = np.linalg.eigh(np.cov(a, rowvar=False))
    order = np.argsort(eigval)[::-1]
    if d < p and abs(eigval[order[d - 1]] - eigval[order[d]]) < 1e-10:
        warnings.warn(
            "eigenvalue tie at the retained/discarded boundary; directions are "
            "an arbitrary (but deterministic) choice",
            DegenerateSpectrumWarning,
        )
    directions = eigvec[:, order[:d]].copy()
    for j in range(d):
        k = int(np.argmax(np.abs(directions[:, j])))
        if directions[k, j] < 0:
            directions[:, j] = -directions[:, j]
    return directions
