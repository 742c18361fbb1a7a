"""Orthogonal projections and least squares.

Matrices are plain ``numpy.ndarray`` objects in numpy's default (row-major)
layout, shape ``(rows, cols)``.  Every projection goes through an orthonormal
basis built by modified Gram-Schmidt with one reorthogonalization pass; Gram
matrices ``D^T D`` are never formed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

DEFAULT_RANK_TOL = 1e-10


class LinopsError(ValueError):
    """Base class for linear-algebra contract violations."""


class EmptyBasisError(LinopsError):
    pass


class RankDeficiencyError(LinopsError):
    def __init__(self, message: str, dropped: Sequence[int] = ()):
        super().__init__(message)
        self.dropped = tuple(dropped)


class DimensionMismatchError(LinopsError):
    pass


@dataclass(frozen=True)
class OrthonormalBasis:
    """Orthonormal basis stored column-wise in ``vectors`` (m x rank).

    ``source_cols`` are the indices of the input columns that contributed a
    basis vector, ``dropped`` the ones found numerically dependent.
    """

    vectors: np.ndarray
    source_cols: tuple[int, ...] = ()
    dropped: tuple[int, ...] = ()

    @property
    def rank(self) -> int:
        return self.vectors.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def empty(cls, ambient_dim: int) -> "OrthonormalBasis":
        return cls(np.zeros((ambient_dim, 0)))


def as_matrix(columns) -> np.ndarray:
    """Return a 2-D float array view of ``columns`` (1-D input is one column)."""
    a = np.asarray(columns, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def _gram_schmidt(a: np.ndarray, rank_tol: float):
    m, n = a.shape
    q = np.empty((m, n))
    r = np.zeros((n, n))
    kept: list[int] = []
    dropped: list[int] = []
    for j in range(n):
        v = a[:, j].copy()
        norm0 = np.linalg.norm(v)
        k = len(kept)
        # two passes of MGS ("twice is enough")
        for _ in range(2):
            for i in range(k):
                c = q[:, i] @ v
                r[i, j] += c
                v -= c * q[:, i]
        nv = np.linalg.norm(v)
        if norm0 == 0.0 or nv <= rank_tol * norm0:
            dropped.append(j)
            continue
        q[:, k] = v / nv
        r[k, j] = nv
        kept.append(j)
    return q[:, : len(kept)], r[: len(kept)], kept, dropped


def orthonormal_basis(columns, rank_tol: float = DEFAULT_RANK_TOL) -> OrthonormalBasis:
    """Orthonormalize the columns of ``columns``.

    A column whose residual after projection onto the previously accepted
    basis vectors has norm ``<= rank_tol * ||column||`` is dropped and its
    index recorded in ``dropped``.

    Raises
    ------
    EmptyBasisError
        If no column survives (e.g. an all-zero matrix).
    """
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    a = as_matrix(columns)
    if not np.all(np.isfinite(a)):
        raise LinopsError("matrix has non-finite entries")
    q, _, kept, dropped = _gram_schmidt(a, rank_tol)
    if not kept:
        raise EmptyBasisError("input matrix spans the zero subspace")
    return OrthonormalBasis(q, tuple(kept), tuple(dropped))


def column_basis(D, cols: Iterable[int], rank_tol: float = DEFAULT_RANK_TOL) -> OrthonormalBasis:
    """Basis of ``span(D[:, cols])``; an empty ``cols`` gives the empty basis."""
    a = as_matrix(D)
    cols = list(cols)
    if not cols:
        return OrthonormalBasis.empty(a.shape[0])
    b = orthonormal_basis(a[:, cols], rank_tol)
    return OrthonormalBasis(b.vectors, tuple(cols[i] for i in b.source_cols),
                            tuple(cols[i] for i in b.dropped))


def project(basis: OrthonormalBasis, y) -> np.ndarray:
    """Orthogonal projection of ``y`` (vector or m x k block) onto ``span(basis)``."""
    y = np.asarray(y, dtype=float)
    if y.shape[0] != basis.ambient_dim:
        raise DimensionMismatchError(
            f"vector of length {y.shape[0]} does not live in R^{basis.ambient_dim}")
    if basis.rank == 0:
        return np.zeros_like(y)
    u = basis.vectors
    return u @ (u.T @ y)


def residual(basis: OrthonormalBasis, y) -> np.ndarray:
    """``y - P y`` computed with a reorthogonalization pass."""
    y = np.asarray(y, dtype=float)
    if basis.rank == 0:
        return y.copy()
    u = basis.vectors
    r = y - u @ (u.T @ y)
    return r - u @ (u.T @ r)


def _qr_solve(a: np.ndarray, y: np.ndarray, rank_tol: float) -> np.ndarray:
    q, r = np.linalg.qr(a)
    col_norms = np.linalg.norm(a, axis=0)
    diag = np.abs(np.diag(r))
    bad = np.flatnonzero((col_norms == 0) | (diag <= rank_tol * col_norms))
    if bad.size:
        raise RankDeficiencyError(
            f"matrix is numerically rank deficient (dependent columns {bad.tolist()})",
            bad.tolist())
    x = _back_substitute(r, q.T @ y)
    # one step of iterative refinement on the residual
    res = y - a @ x
    dx = _back_substitute(r, q.T @ res)
    return x + dx


def _back_substitute(r: np.ndarray, b: np.ndarray) -> np.ndarray:
    return solve_triangular(r, b, lower=False)


def least_squares(D, y, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Return ``argmin ||D xi - y||`` for a full-column-rank ``D``.

    ``y`` may be a vector or an ``m x k`` block of right-hand sides.

    Raises
    ------
    RankDeficiencyError
        If a column of ``D`` is numerically dependent on the preceding ones.
        There is no minimum-norm fallback.
    """
    a = as_matrix(D)
    y = np.asarray(y, dtype=float)
    if y.shape[0] != a.shape[0]:
        raise DimensionMismatchError(f"D has {a.shape[0]} rows but y has {y.shape[0]}")
    return _qr_solve(a, y, rank_tol)


def restricted_least_squares(D, support: Iterable[int], y,
                             rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Least squares with the solution constrained to vanish off ``support``.

    The result has full length ``D.shape[1]``.  An empty support returns the
    zero vector.
    """
    a = as_matrix(D)
    y = np.asarray(y, dtype=float)
    support = sorted(set(int(i) for i in support))
    out = np.zeros((a.shape[1],) + y.shape[1:])
    if not support:
        return out
    if support[0] < 0 or support[-1] >= a.shape[1]:
        raise IndexError(f"support {support} out of range for {a.shape[1]} columns")
    try:
        out[support] = least_squares(a[:, support], y, rank_tol)
    except RankDeficiencyError as err:
        raise RankDeficiencyError(
            f"columns {support} are numerically rank deficient",
            [support[i] for i in err.dropped]) from None
    return out


def support(x, tol: float = 0.0) -> tuple[int, ...]:
    """Indices of entries of ``x`` with magnitude above ``tol``."""
    return tuple(int(i) for i in np.flatnonzero(np.abs(np.asarray(x)) > tol))
