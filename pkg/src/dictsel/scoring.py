"""Projected, Pareto and cross-validation scores of sub-dictionaries.

For a dictionary matrix ``D``, target ``y`` and a set ``S`` of removed
columns::

    projected(S) = ||(P_D - P_{D minus S}) y|| / ||y||
    pareto(S)    = ||y - P_{D minus S} y|| / ||y||

with the convention that the projection onto the empty set is zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
import logging
from typing import Iterable, Sequence

import numpy as np

from .library import EvaluatedLibrary
from .linops import (DEFAULT_RANK_TOL, RankDeficiencyError, as_matrix, column_basis,
                     orthonormal_basis, project, residual)

PROJECTED = "projected"
PARETO = "pareto"
CROSS_VALIDATION = "cross_validation"
SUM = "sum"
SUM_OF_SQUARES = "sum_of_squares"

# relative scores below this are round-off; ratios use it as the smallest denominator
NOISE_FLOOR = 100 * np.finfo(float).eps

log = logging.getLogger(__name__)


class ScoringError(ValueError):
    pass


def design_matrix(D) -> np.ndarray:
    """The numeric matrix behind ``D`` (an ``EvaluatedLibrary`` or array)."""
    if isinstance(D, EvaluatedLibrary):
        return D.matrix
    return as_matrix(D)


def labels_of(D) -> tuple[str, ...]:
    if isinstance(D, EvaluatedLibrary):
        return D.labels
    return tuple(f"d{i}" for i in range(design_matrix(D).shape[1]))


def _target(y, m: int) -> tuple[np.ndarray, float]:
    y = np.asarray(y, dtype=float)
    if y.shape != (m,):
        raise ScoringError(f"target must be a vector of length {m}, got shape {y.shape}")
    ny = float(np.linalg.norm(y))
    if ny == 0.0:
        raise ScoringError("target vector is zero; scores are undefined")
    return y, ny


def _removed(removed: Iterable[int], n: int) -> tuple[int, ...]:
    out = tuple(sorted(set(int(i) for i in removed)))
    if out and (out[0] < 0 or out[-1] >= n):
        raise IndexError(f"removed set {out} out of range for {n} columns")
    return out


def full_basis(D, rank_tol: float = DEFAULT_RANK_TOL, strict: bool = False):
    """Orthonormal basis of ``span(D)``.

    Scores only depend on spans, so dependent columns are simply skipped
    unless ``strict`` is set, in which case they raise.
    """
    a = design_matrix(D)
    basis = orthonormal_basis(a, rank_tol)
    if basis.dropped:
        if strict:
            raise RankDeficiencyError(
                f"dictionary is numerically rank deficient (dependent columns {list(basis.dropped)})",
                basis.dropped)
        log.debug("dictionary columns %s are numerically dependent", list(basis.dropped))
    return basis


def score_subset(removed: Iterable[int], D, y, rank_tol: float = DEFAULT_RANK_TOL) -> float:
    """Projected score of the removed set; 0 for an empty set and
    ``||P_D y|| / ||y||`` when every column is removed."""
    a = design_matrix(D)
    y, ny = _target(y, a.shape[0])
    removed = _removed(removed, a.shape[1])
    if not removed:
        return 0.0
    full = full_basis(a, rank_tol)
    kept = [j for j in range(a.shape[1]) if j not in removed]
    # (P_D - P_K) y = P_D (y - P_K y) since span(K) lies inside span(D)
    diff = project(full, residual(column_basis(a, kept, rank_tol), y))
    return float(np.linalg.norm(diff) / ny)


def score_single(i: int, D, y, rank_tol: float = DEFAULT_RANK_TOL) -> float:
    """Projected score of a single dictionary item."""
    return score_subset([i], D, y, rank_tol)


def pareto_score(removed: Iterable[int], D, y, rank_tol: float = DEFAULT_RANK_TOL) -> float:
    """Relative residual of ``y`` against the columns that remain."""
    a = design_matrix(D)
    y, ny = _target(y, a.shape[0])
    removed = _removed(removed, a.shape[1])
    kept = [j for j in range(a.shape[1]) if j not in removed]
    return float(np.linalg.norm(residual(column_basis(a, kept, rank_tol), y)) / ny)


@dataclass(frozen=True)
class SubsetScore:
    removed: tuple[int, ...]
    value: float
    kind: str = PROJECTED
    per_coordinate: tuple[float, ...] = ()


def aggregate(values: Sequence[float], mode: str = SUM) -> float:
    v = np.asarray(values, dtype=float)
    if mode == SUM:
        return float(v.sum())
    if mode == SUM_OF_SQUARES:
        return float((v ** 2).sum())
    raise ScoringError(f"unknown aggregation {mode!r}")


def multi_target_score(removed: Iterable[int], D, targets: Sequence, mode: str = SUM,
                       kind: str = PROJECTED) -> SubsetScore:
    """Aggregate score over several target coordinates (plain sum by default)."""
    if len(targets) == 0:
        raise ScoringError("need at least one target")
    fn = {PROJECTED: score_subset, PARETO: pareto_score}[kind]
    removed = tuple(sorted(set(int(i) for i in removed)))
    per = tuple(fn(removed, D, y) for y in targets)
    return SubsetScore(removed, aggregate(per, mode), kind, per)


# ---------------------------------------------------------------------------
# batched evaluation in the coordinates of an orthonormal basis of D


class SubsetScorer:
    """Evaluate many removed sets against a fixed ``D`` and targets.

    ``D`` is orthonormalized once, ``D = Q R``; a kept set ``K`` then only
    needs the span of ``R[:, K]`` in R^n, since
    ``||(P_D - P_K) y|| = ||z - P_{R_K} z||`` with ``z = Q^T y``.  Kept sets
    of equal size are processed together by a vectorized Gram-Schmidt.
    """

    def __init__(self, D, targets: Sequence, kind: str = PROJECTED, mode: str = SUM,
                 rank_tol: float = DEFAULT_RANK_TOL, chunk: int = 20000):
        a = design_matrix(D)
        self.n = a.shape[1]
        self.labels = labels_of(D)
        if len(targets) == 0:
            raise ScoringError("need at least one target")
        ys, norms = zip(*(_target(y, a.shape[0]) for y in targets))
        Y = np.column_stack(ys)
        basis = full_basis(a, rank_tol)
        Q = basis.vectors
        self.R = Q.T @ a
        self.Z = Q.T @ Y
        # squared norm of the part of y outside span(D), used by the Pareto score
        self.outside2 = np.sum(residual(basis, Y) ** 2, axis=0)
        self.norms = np.asarray(norms)
        if kind not in (PROJECTED, PARETO):
            raise ScoringError(f"unknown score kind {kind!r}")
        self.kind = kind
        self.mode = mode
        self.rank_tol = rank_tol
        self.chunk = chunk

    def per_coordinate(self, kept_sets) -> np.ndarray:
        """Scores for a ``(B, k)`` integer array of kept sets; returns
        ``(B, n_targets)``."""
        kept_sets = np.asarray(kept_sets, dtype=int)
        if kept_sets.ndim == 1:
            kept_sets = kept_sets[None, :]
        out = np.empty((kept_sets.shape[0], self.Z.shape[1]))
        for s in range(0, kept_sets.shape[0], self.chunk):
            block = kept_sets[s:s + self.chunk]
            res = _batched_residual(self.R, self.Z, block, self.rank_tol)
            out[s:s + self.chunk] = res
        if self.kind == PARETO:
            out = np.sqrt(out ** 2 + self.outside2)
        return out / self.norms

    def aggregate(self, per: np.ndarray) -> np.ndarray:
        if self.mode == SUM:
            return per.sum(axis=1)
        if self.mode == SUM_OF_SQUARES:
            return (per ** 2).sum(axis=1)
        raise ScoringError(f"unknown aggregation {self.mode!r}")

    def kept_from_removed(self, removed: Iterable[int]) -> list[int]:
        r = set(removed)
        return [j for j in range(self.n) if j not in r]

    def score(self, removed: Iterable[int]) -> SubsetScore:
        removed = tuple(sorted(set(int(i) for i in removed)))
        per = self.per_coordinate([self.kept_from_removed(removed)])
        if not removed and self.kind == PROJECTED:
            per = np.zeros_like(per)
        return SubsetScore(removed, float(self.aggregate(per)[0]), self.kind, tuple(per[0]))

    def all_kept(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Every kept set of size ``k`` in lexicographic order with its
        per-coordinate scores.

        Sets sharing a prefix share its orthonormalization, so each set costs
        one Gram-Schmidt step instead of ``k``.
        """
        if k < 0 or k > self.n:
            raise ScoringError(f"kept-set size {k} outside 0..{self.n}")
        if k == 0:
            return np.zeros((1, 0), dtype=int), self.per_coordinate(np.zeros((1, 0), dtype=int))
        n, T = self.n, self.Z.shape[1]
        sets = np.zeros((1, 0), dtype=int)
        Q = np.zeros((0, 1, self.R.shape[0]))
        resid = self.Z.T[:, None, :].copy()  # (T, sets, dim)
        for level in range(1, k + 1):
            last = sets[:, -1] if level > 1 else np.full(1, -1)
            hi = n - (k - level)  # leave room for the remaining picks
            counts = np.maximum(hi - (last + 1), 0)
            parent = np.repeat(np.arange(sets.shape[0]), counts)
            first = np.repeat(last + 1 - np.cumsum(counts) + counts, counts)
            new = first + np.arange(parent.size)
            sets, Q, resid = self._extend(sets, Q, resid, parent, new, level == k)
        per = np.sqrt(np.einsum("tbn,tbn->bt", resid, resid))
        if self.kind == PARETO:
            per = np.sqrt(per ** 2 + self.outside2)
        return sets, per / self.norms

    def _extend(self, sets, Q, resid, parent, new, final):
        out_Q = None if final else np.empty((Q.shape[0] + 1, parent.size, Q.shape[2]))
        out_r = np.empty((resid.shape[0], parent.size, resid.shape[2]))
        for s in range(0, parent.size, self.chunk):
            sl = slice(s, s + self.chunk)
            par = parent[sl]
            Qp = Q[:, par]
            v = self.R[:, new[sl]].T.copy()
            n0 = np.sqrt(np.einsum("bn,bn->b", v, v))
            for _ in range(2):
                for i in range(Qp.shape[0]):
                    v -= np.einsum("bn,bn->b", Qp[i], v)[:, None] * Qp[i]
            nv = np.sqrt(np.einsum("bn,bn->b", v, v))
            ok = nv > self.rank_tol * n0
            q = v * np.where(ok, 1.0 / np.where(ok, nv, 1.0), 0.0)[:, None]
            r = resid[:, par]
            for _ in range(2):
                r -= np.einsum("bn,tbn->tb", q, r)[:, :, None] * q[None]
            out_r[:, sl] = r
            if not final:
                out_Q[:-1, sl] = Qp
                out_Q[-1, sl] = q
        return np.column_stack([sets[parent], new]), out_Q, out_r


def _batched_residual(R: np.ndarray, Z: np.ndarray, kept: np.ndarray, rank_tol: float) -> np.ndarray:
    """Norms of ``z - P_{span R[:, K]} z`` for every row ``K`` of ``kept``;
    returns ``(B, T)``."""
    B, k = kept.shape
    n, T = Z.shape
    # batch-contiguous layouts: columns (k, B, n), residuals (T, B, n)
    resid = np.repeat(Z.T[:, None, :], B, axis=1)
    if k == 0:
        return np.linalg.norm(resid, axis=2).T
    cols = np.ascontiguousarray(np.transpose(R[:, kept], (2, 1, 0)))
    Q = np.empty((k, B, n))
    for j in range(k):
        v = cols[j]
        n0 = np.sqrt(np.einsum("bn,bn->b", v, v))
        for _ in range(2):
            for i in range(j):
                v -= np.einsum("bn,bn->b", Q[i], v)[:, None] * Q[i]
        nv = np.sqrt(np.einsum("bn,bn->b", v, v))
        ok = nv > rank_tol * n0
        Q[j] = v * np.where(ok, 1.0 / np.where(ok, nv, 1.0), 0.0)[:, None]
    for _ in range(2):
        for j in range(k):
            for t in range(T):
                resid[t] -= np.einsum("bn,bn->b", Q[j], resid[t])[:, None] * Q[j]
    return np.sqrt(np.einsum("tbn,tbn->bt", resid, resid))


# ---------------------------------------------------------------------------
# cross validation


def contiguous_folds(m: int, k: int, shuffle: bool = False, seed: int = 0) -> list[np.ndarray]:
    idx = np.arange(m)
    if shuffle:
        idx = np.random.default_rng(seed).permutation(m)
    return [np.sort(f) for f in np.array_split(idx, k)]


def cross_validation_scores(D, y, k: int, seed: int = 0, shuffle: bool = False,
                            include_empty: bool = True, min_norm: bool = False) -> np.ndarray:
    """k-fold cross-validation error ``delta[i]`` of the SSR path.

    ``delta[i]^2 = (1/k) sum_l ||y_A - D_A xi_i(B)||^2`` where ``xi_i(B)`` is
    the SSR coefficient vector with ``i`` items removed, fitted on the
    training rows ``B`` of fold ``l``.  Folds are contiguous blocks unless
    ``shuffle`` is set.  With ``include_empty`` the entry ``i = n`` (every item
    removed, zero model) is appended.
    """
    from .regressors import ssr

    a = design_matrix(D)
    y, _ = _target(y, a.shape[0])
    m, n = a.shape
    if k < 2 or k > m:
        raise ScoringError(f"need 2 <= k <= m (k={k}, m={m})")
    folds = contiguous_folds(m, k, shuffle, seed)
    n_levels = n + 1 if include_empty else n
    err = np.zeros(n_levels)
    for test in folds:
        train = np.setdiff1d(np.arange(m), test)
        if train.size < n:
            raise ScoringError(
                f"training block of {train.size} rows is smaller than the {n} dictionary columns")
        path = ssr(a[train], y[train], min_norm=min_norm)
        if include_empty:
            path = path + [np.zeros(n)]
        for i, xi in enumerate(path):
            err[i] += np.sum((y[test] - a[test] @ xi) ** 2)
    return np.sqrt(err / k)


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True)
class TraceLevel:
    level: int
    removed: tuple[int, ...]
    score: float
    ratio: float | None = None
    per_coordinate: tuple[float, ...] = ()


def relative_ratios(scores: Sequence[float], floor: float = 0.0) -> list[float | None]:
    """``s_i / max(s_{i-1}, floor)``; undefined for the first entry and, when
    ``floor`` is 0, for non-positive predecessors."""
    out: list[float | None] = [None]
    for prev, cur in zip(scores[:-1], scores[1:]):
        den = max(prev, floor)
        out.append(float(cur / den) if den > 0 else None)
    return out


@dataclass
class ScoreTrace:
    """Per-level record of a selection run.

    ``levels[i].removed`` is the removed set at that level (for ``gfsr`` it is
    the complement of the kept set).  Levels count removed items, except for
    ``gfsr`` where they count kept items.
    """

    levels: list[TraceLevel]
    regressor: str
    labels: tuple[str, ...]
    kind: str = PROJECTED
    aggregate: str = SUM
    coordinates: tuple[str, ...] = ()

    @classmethod
    def from_scores(cls, scores: Sequence[float], removed: Sequence[Sequence[int]] | None = None,
                    regressor: str = "custom", labels: Sequence[str] = (),
                    kind: str = PROJECTED, first_level: int = 1,
                    per_coordinate: Sequence[Sequence[float]] | None = None,
                    aggregate: str = SUM, coordinates: Sequence[str] = (),
                    floor: float = NOISE_FLOOR) -> "ScoreTrace":
        scores = [float(s) for s in scores]
        ratios = relative_ratios(scores, floor)
        levels = []
        for i, s in enumerate(scores):
            rem = tuple(removed[i]) if removed is not None else ()
            per = tuple(per_coordinate[i]) if per_coordinate is not None else ()
            levels.append(TraceLevel(first_level + i, rem, s, ratios[i], per))
        return cls(levels, regressor, tuple(labels), kind, aggregate, tuple(coordinates))

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def scores(self) -> np.ndarray:
        return np.array([lv.score for lv in self.levels])

    @property
    def level_numbers(self) -> list[int]:
        return [lv.level for lv in self.levels]

    @property
    def ratios(self) -> list[float | None]:
        return [lv.ratio for lv in self.levels]

    def at(self, level: int) -> TraceLevel:
        for lv in self.levels:
            if lv.level == level:
                return lv
        raise KeyError(f"trace has no level {level}")

    def removed_at(self, level: int) -> tuple[int, ...]:
        if level == 0:
            return ()
        return self.at(level).removed

    def retained_at(self, level: int) -> tuple[int, ...]:
        rem = set(self.removed_at(level))
        return tuple(i for i in range(len(self.labels)) if i not in rem)

    def retained_labels(self, level: int) -> list[str]:
        return [self.labels[i] for i in self.retained_at(level)]

    def removal_order(self) -> list[int]:
        """Order in which items leave the dictionary (nested traces only)."""
        order: list[int] = []
        for lv in self.levels:
            order.extend(i for i in lv.removed if i not in order)
        return order

    def rows(self) -> list[dict]:
        out = []
        coord = self.coordinates[0] if len(self.coordinates) == 1 else "all"
        for lv in self.levels:
            base = {"level": lv.level,
                    "removed_labels": ";".join(self.labels[i] for i in lv.removed),
                    "kind": self.kind}
            out.append(dict(base, score=lv.score, relative_ratio=lv.ratio, coordinate=coord))
            if len(lv.per_coordinate) > 1:
                names = self.coordinates or tuple(f"c{c}" for c in range(len(lv.per_coordinate)))
                for name, s in zip(names, lv.per_coordinate):
                    out.append(dict(base, score=s, relative_ratio=None, coordinate=name))
        return out

    def to_csv(self, path) -> None:
        cols = ["level", "removed_labels", "score", "relative_ratio", "kind", "coordinate"]
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in self.rows():
                row = dict(row)
                row["score"] = repr(float(row["score"]))
                row["relative_ratio"] = "" if row["relative_ratio"] is None \
                    else repr(float(row["relative_ratio"]))
                w.writerow(row)


def read_trace_csv(path) -> list[dict]:
    with Path(path).open() as fh:
        return list(csv.DictReader(fh))
