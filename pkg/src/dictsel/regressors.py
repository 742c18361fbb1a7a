"""Sparse regressors: STLS, SSR, score-driven stepwise selection, OMP."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Sequence

import numpy as np

from .library import EvaluatedLibrary
from .linops import (DEFAULT_RANK_TOL, column_basis, least_squares, residual,
                     restricted_least_squares)
from .scoring import (PARETO, PROJECTED, SUM, ScoreTrace, ScoringError, SubsetScorer,
                      NOISE_FLOOR, TraceLevel, design_matrix, labels_of, relative_ratios, score_subset)

# above this the prefix-sharing enumeration would hold too much in memory
_PREFIX_BYTES = 1 << 28
DEFAULT_ESR_CAP = 2_000_000


class RegressorError(ValueError):
    pass


class BudgetExceededError(RegressorError):
    pass


class NoJumpError(RegressorError):
    pass


def _targets(targets) -> list[np.ndarray]:
    if isinstance(targets, np.ndarray) and targets.ndim == 1:
        return [targets]
    if isinstance(targets, np.ndarray) and targets.ndim == 2:
        return [targets[:, c] for c in range(targets.shape[1])]
    return [np.asarray(t, dtype=float) for t in targets]


def _raw(D, coef: np.ndarray) -> np.ndarray:
    if isinstance(D, EvaluatedLibrary):
        return D.to_raw_coefficients(coef)
    return coef


def _raw_matrix(D) -> np.ndarray:
    if isinstance(D, EvaluatedLibrary):
        return D.raw_matrix()
    return design_matrix(D)


def _tiebreak(candidates: Sequence[tuple[int, ...]], labels: Sequence[str]) -> tuple[int, ...]:
    return min(candidates, key=lambda s: tuple(sorted(labels[i] for i in s)))


# ---------------------------------------------------------------------------
# models


@dataclass
class SparseModel:
    """Coefficients (``n_terms x n_coordinates``) in the raw column scale."""

    coefficients: np.ndarray
    labels: tuple[str, ...]
    residual_norm: np.ndarray
    coordinates: tuple[str, ...] = ()
    regressor: str = ""
    hyperparameters: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.ndim == 1:
            self.coefficients = self.coefficients[:, None]
        self.residual_norm = np.atleast_1d(np.asarray(self.residual_norm, dtype=float))
        if not self.coordinates:
            self.coordinates = tuple(f"c{i}" for i in range(self.coefficients.shape[1]))

    @property
    def n_coordinates(self) -> int:
        return self.coefficients.shape[1]

    def coefficient(self, coordinate: int | str = 0) -> np.ndarray:
        if isinstance(coordinate, str):
            coordinate = self.coordinates.index(coordinate)
        return self.coefficients[:, coordinate]

    def support(self, coordinate: int | str = 0) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.coefficient(coordinate)))

    def support_labels(self, coordinate: int | str = 0) -> list[str]:
        return [self.labels[i] for i in self.support(coordinate)]

    def terms(self, coordinate: int | str = 0) -> dict[str, float]:
        c = self.coefficient(coordinate)
        return {self.labels[i]: float(c[i]) for i in self.support(coordinate)}

    def residuals(self, D, targets) -> np.ndarray:
        a = _raw_matrix(D)
        ys = _targets(targets)
        return np.array([np.linalg.norm(a @ self.coefficients[:, c] - y) for c, y in enumerate(ys)])

    def to_dict(self) -> list[dict]:
        return [{"coordinate": name,
                 "terms": [{"label": lab, "coefficient": coef}
                           for lab, coef in self.terms(c).items()],
                 "residual": float(self.residual_norm[c]),
                 "regressor": self.regressor,
                 "hyperparameters": self.hyperparameters}
                for c, name in enumerate(self.coordinates)]

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, default=_json_default)

    @classmethod
    def from_dict(cls, entries: list[dict], labels: Sequence[str]) -> "SparseModel":
        labels = tuple(labels)
        coef = np.zeros((len(labels), len(entries)))
        for c, e in enumerate(entries):
            for t in e["terms"]:
                coef[labels.index(t["label"]), c] = t["coefficient"]
        first = entries[0] if entries else {}
        return cls(coef, labels, [e["residual"] for e in entries],
                   tuple(e["coordinate"] for e in entries), first.get("regressor", ""),
                   first.get("hyperparameters", {}))

    @classmethod
    def stack(cls, models: Sequence["SparseModel"], coordinates: Sequence[str] = ()) -> "SparseModel":
        coef = np.hstack([m.coefficients for m in models])
        res = np.concatenate([m.residual_norm for m in models])
        coords = tuple(coordinates) or tuple(c for m in models for c in m.coordinates)
        first = models[0]
        prov = {"per_coordinate": [m.provenance for m in models]}
        return cls(coef, first.labels, res, coords, first.regressor, first.hyperparameters, prov)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(f"not serializable: {type(o)}")


def _model(D, coef: np.ndarray, y: np.ndarray, regressor: str, hyper: dict,
           coordinate: str = "", provenance: dict | None = None) -> SparseModel:
    raw = _raw(D, coef)
    res = np.linalg.norm(_raw_matrix(D) @ raw - y)
    return SparseModel(raw, labels_of(D), [res], (coordinate,) if coordinate else (),
                       regressor, hyper, provenance or {})


# ---------------------------------------------------------------------------
# STLS


@dataclass(frozen=True)
class StlsIterate:
    support: tuple[int, ...]
    coefficients: np.ndarray
    objective: float


@dataclass
class StlsTrace:
    iterations: list[StlsIterate]
    threshold: float

    @property
    def objectives(self) -> np.ndarray:
        return np.array([it.objective for it in self.iterations])


def l0_objective(a: np.ndarray, xi: np.ndarray, y: np.ndarray, alpha: float) -> float:
    """``||a xi - y||^2 + alpha^2 ||xi||_0``."""
    return float(np.sum((a @ xi - y) ** 2) + alpha ** 2 * np.count_nonzero(xi))


def stls(D, y, lam: float, max_iter: int = 20,
         rank_tol: float = DEFAULT_RANK_TOL, coordinate: str = "") -> tuple[SparseModel, StlsTrace]:
    """Sequentially thresholded least squares.

    Starts from ``xi = D^+ y``, keeps ``S = {j : |xi_j| >= lam}``, refits on
    ``S`` and repeats until the support stops changing.  The threshold acts on
    coefficients of ``D.matrix`` (the normalized columns when ``D`` carries
    scales); the returned model is in the raw scale.
    """
    if lam < 0:
        raise RegressorError("threshold must be nonnegative")
    a = design_matrix(D)
    y = np.asarray(y, dtype=float)
    xi = least_squares(a, y, rank_tol)
    iters = [StlsIterate(tuple(range(a.shape[1])), xi, l0_objective(a, xi, y, lam))]
    prev = tuple(int(j) for j in np.flatnonzero(np.abs(xi) >= lam))
    converged = False
    for _ in range(max_iter):
        if not prev:
            xi = np.zeros(a.shape[1])
            iters.append(StlsIterate((), xi, l0_objective(a, xi, y, lam)))
            converged = True
            break
        xi = restricted_least_squares(a, prev, y, rank_tol)
        iters.append(StlsIterate(prev, xi, l0_objective(a, xi, y, lam)))
        nxt = tuple(int(j) for j in np.flatnonzero(np.abs(xi) >= lam))
        if nxt == prev:
            converged = True
            break
        prev = nxt
    model = _model(D, xi, y, "stls", {"lambda": lam, "max_iter": max_iter}, coordinate,
                   {"converged": converged, "iterations": len(iters) - 1})
    return model, StlsTrace(iters, lam)


# ---------------------------------------------------------------------------
# SSR


def _min_norm_fit(a: np.ndarray, cols: Sequence[int], y: np.ndarray) -> np.ndarray:
    xi = np.zeros(a.shape[1])
    xi[list(cols)] = np.linalg.lstsq(a[:, list(cols)], y, rcond=None)[0]
    return xi


def ssr(D, y, rank_tol: float = DEFAULT_RANK_TOL, min_norm: bool = False) -> list[np.ndarray]:
    """Stepwise sparse regression path ``xi^0 .. xi^{n-1}``.

    Each step drops the surviving index with the smallest ``|xi_j|`` and
    refits on the rest.  Rank deficiency raises unless ``min_norm`` is set,
    in which case every fit is the minimum-norm (pseudo-inverse) solution.
    """
    a = design_matrix(D)
    labels = labels_of(D)
    y = np.asarray(y, dtype=float)
    n = a.shape[1]
    alive = list(range(n))
    if min_norm:
        def fit(cols):
            return _min_norm_fit(a, cols, y)
    else:
        def fit(cols):
            return restricted_least_squares(a, cols, y, rank_tol)
    xi = fit(alive) if min_norm else least_squares(a, y, rank_tol)
    path = [xi]
    while len(alive) > 1:
        mags = np.abs(xi[alive])
        low = mags.min()
        ties = [(alive[k],) for k in np.flatnonzero(mags == low)]
        drop = _tiebreak(ties, labels)[0]
        alive.remove(drop)
        xi = fit(alive)
        path.append(xi)
    return path


def ssr_removal_order(path: Sequence[np.ndarray]) -> list[int]:
    order = []
    for prev, cur in zip(path[:-1], path[1:]):
        gone = set(np.flatnonzero(prev)) - set(np.flatnonzero(cur))
        order.extend(int(i) for i in sorted(gone))
    return order


def ssr_cv_trace(D, y, k: int = 5, seed: int = 0, shuffle: bool = False,
                 coordinate: str = "", min_norm: bool = False) -> ScoreTrace:
    """Cross-validation scores along the SSR path, as a trace indexed by the
    number of removed items (level ``n`` is the empty model)."""
    from .scoring import CROSS_VALIDATION, cross_validation_scores

    delta = cross_validation_scores(D, y, k, seed, shuffle, min_norm=min_norm)
    order = ssr_removal_order(ssr(D, y, min_norm=min_norm))
    n = design_matrix(D).shape[1]
    order = order + [i for i in range(n) if i not in order]
    removed = [tuple(sorted(order[:i])) for i in range(1, n + 1)]
    floor = NOISE_FLOOR * float(np.linalg.norm(y))
    return ScoreTrace.from_scores(delta[1:], removed, "ssr_cv", labels_of(D), CROSS_VALIDATION,
                                  first_level=1, coordinates=(coordinate,) if coordinate else (),
                                  floor=floor)


# ---------------------------------------------------------------------------
# score-driven selection


def esr(D, targets, max_remove: int | None = None, levels: Iterable[int] | None = None,
        cap: int = DEFAULT_ESR_CAP, kind: str = PROJECTED, mode: str = SUM,
        coordinates: Sequence[str] = ()) -> ScoreTrace:
    """Exhaustive search: for each level ``i`` the removed set of size ``i``
    with the smallest score.

    ``levels`` overrides ``1..max_remove``.  The total number of subsets
    evaluated may not exceed ``cap``.  Ties go to the lexicographically
    smallest set of labels.
    """
    ys = _targets(targets)
    n = design_matrix(D).shape[1]
    if levels is None:
        if max_remove is None:
            max_remove = n
        if max_remove > n or max_remove < 0:
            raise RegressorError(f"max_remove={max_remove} outside 0..{n}")
        levels = range(1, max_remove + 1)
    levels = sorted(set(int(i) for i in levels))
    if levels and (levels[0] < 1 or levels[-1] > n):
        raise RegressorError(f"levels must lie in 1..{n}")
    total = 0
    for lv in levels:
        total += comb(n, lv)
        if total > cap:
            raise BudgetExceededError(
                f"level {lv} would raise the subset count to {total}, above the cap of {cap}")
    labels = labels_of(D)
    out = []
    if levels:
        scorer = SubsetScorer(D, ys, kind, mode)
    for lv in levels:
        k = n - lv
        if comb(n, k) * max(k, 1) * scorer.R.shape[0] * 8 <= _PREFIX_BYTES:
            kept_sets, per = scorer.all_kept(k)
        else:
            kept_sets = np.array(list(itertools.combinations(range(n), k)), dtype=int).reshape(-1, k)
            per = scorer.per_coordinate(kept_sets)
        agg = scorer.aggregate(per)
        best = agg.min()
        hits = np.flatnonzero(agg == best)
        cands = [tuple(sorted(set(range(n)) - set(kept_sets[h]))) for h in hits]
        choice = _tiebreak(cands, labels)
        h = hits[cands.index(choice)]
        out.append((lv, choice, float(best), tuple(per[h])))
    ratios = relative_ratios([o[2] for o in out], NOISE_FLOOR)
    trace_levels = [TraceLevel(lv, rem, s, r if out and i > 0 and out[i - 1][0] == lv - 1 else None, per)
                    for i, ((lv, rem, s, per), r) in enumerate(zip(out, ratios))]
    return ScoreTrace(trace_levels, "esr", labels, kind, mode, tuple(coordinates))


def best_kept_subset(D, targets, k: int, kind: str = PROJECTED, mode: str = SUM) -> tuple[int, ...]:
    """Kept set of size ``k`` whose complement has the smallest score."""
    n = design_matrix(D).shape[1]
    trace = esr(D, targets, levels=[n - k], cap=max(DEFAULT_ESR_CAP, comb(n, k)), kind=kind, mode=mode)
    return trace.retained_at(n - k)


def gbsr(D, targets, kind: str = PROJECTED, mode: str = SUM,
         coordinates: Sequence[str] = ()) -> ScoreTrace:
    """Greedy backward selection: grow the removed set one item at a time,
    each time adding the item that keeps the score of the removed set
    smallest."""
    ys = _targets(targets)
    labels = labels_of(D)
    n = design_matrix(D).shape[1]
    scorer = SubsetScorer(D, ys, kind, mode)
    removed: list[int] = []
    levels = []
    for lv in range(1, n + 1):
        cand = [j for j in range(n) if j not in removed]
        kept_sets = np.array([[i for i in cand if i != j] for j in cand], dtype=int).reshape(len(cand), -1)
        per = scorer.per_coordinate(kept_sets)
        agg = scorer.aggregate(per)
        best = agg.min()
        hits = np.flatnonzero(agg == best)
        choice = _tiebreak([tuple(sorted(removed + [cand[h]])) for h in hits], labels)
        h = next(h for h in hits if tuple(sorted(removed + [cand[h]])) == choice)
        removed.append(cand[h])
        levels.append((lv, tuple(sorted(removed)), float(best), tuple(per[h])))
    ratios = relative_ratios([lv[2] for lv in levels], NOISE_FLOOR)
    return ScoreTrace([TraceLevel(lv, rem, s, r, per) for (lv, rem, s, per), r in zip(levels, ratios)],
                      "gbsr", labels, kind, mode, tuple(coordinates))


def gfsr(D, targets, kind: str = PROJECTED, mode: str = SUM,
         coordinates: Sequence[str] = ()) -> ScoreTrace:
    """Greedy forward selection: grow the kept set, each time adding the item
    whose inclusion leaves the smallest score for the complement.

    Level ``i`` of the trace has ``i`` kept items; ``removed`` holds the
    complement.
    """
    ys = _targets(targets)
    labels = labels_of(D)
    n = design_matrix(D).shape[1]
    scorer = SubsetScorer(D, ys, kind, mode)
    kept: list[int] = []
    levels = []
    for lv in range(1, n + 1):
        cand = [j for j in range(n) if j not in kept]
        kept_sets = np.array([sorted(kept + [j]) for j in cand], dtype=int)
        per = scorer.per_coordinate(kept_sets)
        if lv == n and kind == PROJECTED:
            per = np.zeros_like(per)
        agg = scorer.aggregate(per)
        best = agg.min()
        hits = np.flatnonzero(agg == best)
        comps = [tuple(i for i in range(n) if i not in kept and i != cand[h]) for h in hits]
        choice = _tiebreak(comps, labels) if comps[0] else ()
        h = hits[comps.index(choice)] if comps[0] else hits[0]
        kept.append(cand[h])
        levels.append((lv, tuple(i for i in range(n) if i not in kept), float(best), tuple(per[h])))
    ratios = relative_ratios([lv[2] for lv in levels], NOISE_FLOOR)
    return ScoreTrace([TraceLevel(lv, rem, s, r, per) for (lv, rem, s, per), r in zip(levels, ratios)],
                      "gfsr", labels, kind, mode, tuple(coordinates))


def gfsr_selection_order(trace: ScoreTrace) -> list[int]:
    order: list[int] = []
    n = len(trace.labels)
    for lv in trace.levels:
        kept = [i for i in range(n) if i not in lv.removed]
        order.extend(i for i in kept if i not in order)
    return order


# ---------------------------------------------------------------------------
# OMP


def omp(D, y, delta: float, max_terms: int | None = None, debug: bool = False,
        norm_tol: float = 1e-8, coordinate: str = "") -> SparseModel:
    """Orthogonal matching pursuit on unit-norm columns.

    Stops once the residual norm is ``<= delta`` or ``max_terms`` items are
    selected.  With ``debug`` each selection is checked against the identity
    ``|<d_i, r>| = score(d_i; D_{S+i}) ||y|| ||(I - P_S) d_i||``.
    """
    a = design_matrix(D)
    y = np.asarray(y, dtype=float)
    if delta <= 0:
        raise RegressorError("delta must be positive")
    norms = np.linalg.norm(a, axis=0)
    if np.any(np.abs(norms - 1.0) > norm_tol):
        raise RegressorError("OMP needs unit-norm columns; normalize the library first")
    n = a.shape[1]
    max_terms = n if max_terms is None else min(max_terms, n)
    S: list[int] = []
    xi = np.zeros(n)
    r = y.copy()
    history = []
    while np.linalg.norm(r) > delta and len(S) < max_terms:
        corr = np.abs(a.T @ r)
        corr[S] = -np.inf
        gamma = int(np.argmax(corr))
        if debug:
            _check_omp_identity(a, S, gamma, y, r)
        S.append(gamma)
        xi = restricted_least_squares(a, S, y)
        r = y - a @ xi
        history.append(gamma)
    return _model(D, xi, y, "omp", {"delta": delta, "max_terms": max_terms}, coordinate,
                  {"selection_order": history})


def _check_omp_identity(a, S, i, y, r):
    ny = np.linalg.norm(y)
    cols = S + [i]
    sc = score_subset([len(cols) - 1], a[:, cols], y)
    perp = np.linalg.norm(residual(column_basis(a, S), a[:, i]))
    lhs = abs(a[:, i] @ r)
    rhs = sc * ny * perp
    coef = least_squares(a[:, cols], y)[-1]
    ok = abs(lhs - rhs) <= 1e-8 * max(ny, 1e-300) and \
        abs(sc * ny / perp - abs(coef)) <= 1e-8 * max(abs(coef), ny / perp, 1e-300)
    if not ok:
        raise AssertionError(f"OMP score identity violated at index {i}: {lhs} vs {rhs}")


# ---------------------------------------------------------------------------
# sparsity level, refit, screening


def score_jump(trace: ScoreTrace) -> int:
    """Level with the largest relative ratio ``s_i / s_{i-1}`` (first on ties)."""
    best, best_level = None, None
    for lv in trace.levels:
        if lv.ratio is None:
            continue
        if best is None or lv.ratio > best:
            best, best_level = lv.ratio, lv.level
    if best is None:
        raise NoJumpError("trace has no positive consecutive scores; use the threshold policy")
    if best <= 1.0:
        raise NoJumpError("scores never increase along the trace; use the threshold policy")
    return best_level


def select_sparsity(trace: ScoreTrace, policy: str = "max_ratio", eps: float | None = None) -> int:
    """Number of removed items in the chosen model.

    ``max_ratio``: one less than the jump level found by :func:`score_jump`.
    ``threshold``: the largest level whose score is below ``eps`` (0 if none).
    """
    if policy == "max_ratio":
        return score_jump(trace) - 1
    if policy == "threshold":
        if eps is None or eps <= 0:
            raise RegressorError("threshold policy needs eps > 0")
        below = [lv.level for lv in trace.levels if lv.score < eps]
        return max(below) if below else 0
    raise RegressorError(f"unknown policy {policy!r}")


def refit(D, keep: Iterable[int], y, rank_tol: float = DEFAULT_RANK_TOL,
          coordinate: str = "") -> SparseModel:
    """Least squares on the kept columns, reported in the raw column scale."""
    keep = sorted(set(int(i) for i in keep))
    y = np.asarray(y, dtype=float)
    xi = restricted_least_squares(design_matrix(D), keep, y, rank_tol)
    return _model(D, xi, y, "refit", {"keep": [labels_of(D)[i] for i in keep]}, coordinate)


def screen_then_stls(D, targets, keep_fraction: float, lam: float, mode: str = SUM,
                     max_iter: int = 20, true_support: Sequence[str] | None = None,
                     coordinates: Sequence[str] = ()) -> SparseModel:
    """Drop the items GBSR removes first, then run STLS per coordinate on the
    ``round(keep_fraction * n)`` items that remain."""
    ys = _targets(targets)
    n = design_matrix(D).shape[1]
    if not 0 < keep_fraction <= 1:
        raise RegressorError("keep_fraction must lie in (0, 1]")
    n_keep = int(round(keep_fraction * n))
    if n_keep < 1:
        raise RegressorError("keep_fraction * n must be at least 1")
    labels = labels_of(D)
    if n_keep == n:
        keep = list(range(n))
    else:
        trace = gbsr(D, ys, mode=mode)
        keep = list(trace.retained_at(n - n_keep))
    sub = D.select(keep) if isinstance(D, EvaluatedLibrary) else \
        EvaluatedLibrary(design_matrix(D)[:, keep], tuple(labels[i] for i in keep))
    coords = tuple(coordinates) or tuple(f"c{i}" for i in range(len(ys)))
    models = [stls(sub, y, lam, max_iter, coordinate=c)[0] for y, c in zip(ys, coords)]
    coef = np.zeros((n, len(ys)))
    for c, m in enumerate(models):
        coef[keep, c] = m.coefficients[:, 0]
    prov = {"keep_fraction": keep_fraction, "kept": [labels[i] for i in keep],
            "dropped": [labels[i] for i in range(n) if i not in keep]}
    if true_support is not None:
        lost = sorted(set(true_support) - {labels[i] for i in keep})
        prov["dropped_true_terms"] = lost
        prov["over_pruned"] = bool(lost)
    return SparseModel(coef, labels, np.concatenate([m.residual_norm for m in models]), coords,
                       "screen_then_stls", {"keep_fraction": keep_fraction, "lambda": lam,
                                            "aggregate": mode}, prov)
