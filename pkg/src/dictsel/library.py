"""Symbolic dictionaries and their evaluation on state data."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from math import comb
from typing import Sequence

import numpy as np

MONOMIAL = "monomial"
SINE = "sine"
COSINE = "cosine"
PDE_TRIAL = "pde_trial"
KINDS = (MONOMIAL, SINE, COSINE, PDE_TRIAL)


class LibraryError(ValueError):
    pass


def default_variable_names(state_dim: int) -> tuple[str, ...]:
    if state_dim <= 3:
        return ("x", "y", "z")[:state_dim]
    return tuple(f"x{i + 1}" for i in range(state_dim))


def _monomial_label(exponents: Sequence[int], names: Sequence[str]) -> str:
    parts = []
    for name, e in zip(names, exponents):
        if e == 1:
            parts.append(name)
        elif e > 1:
            parts.append(f"{name}^{e}")
    if not parts:
        return "1"
    sep = "" if all(len(n) == 1 for n in names) else "*"
    return sep.join(parts)


@dataclass(frozen=True)
class Term:
    """One dictionary item.

    ``exponents`` holds the monomial exponents (for ``pde_trial`` terms, the
    exponents of the trial function before differentiation).  Trig terms use
    ``frequency`` and ``variable``.
    """

    kind: str
    exponents: tuple[int, ...] = ()
    frequency: int | None = None
    variable: int | None = None
    derivative_order: int = 0
    names: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LibraryError(f"unknown term kind {self.kind!r}")
        if any(e < 0 for e in self.exponents):
            raise LibraryError("exponents must be nonnegative")
        if self.kind in (SINE, COSINE):
            if self.frequency is None or self.frequency < 1:
                raise LibraryError("trig frequency must be a positive integer")
            if self.variable is None:
                raise LibraryError("trig term needs a variable index")
        if self.derivative_order < 0:
            raise LibraryError("derivative order must be nonnegative")

    @property
    def label(self) -> str:
        names = self.names or default_variable_names(max(len(self.exponents), 1 + (self.variable or 0)))
        if self.kind == MONOMIAL:
            return _monomial_label(self.exponents, names)
        if self.kind in (SINE, COSINE):
            fn = "sin" if self.kind == SINE else "cos"
            f = "" if self.frequency == 1 else str(self.frequency)
            return f"{fn}({f}{names[self.variable]})"
        inner = _monomial_label(self.exponents, names)
        if self.derivative_order == 0:
            return inner
        return f"d{'x' * self.derivative_order}({inner})"

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    def evaluate(self, states: np.ndarray) -> np.ndarray:
        """Evaluate on an ``(m, d)`` state array.  ``pde_trial`` terms return
        the trial function value; differentiation is left to the weak form."""
        if self.kind in (MONOMIAL, PDE_TRIAL):
            out = np.ones(states.shape[0])
            for j, e in enumerate(self.exponents):
                if e:
                    out = out * states[:, j] ** e
            return out
        arg = self.frequency * states[:, self.variable]
        return np.sin(arg) if self.kind == SINE else np.cos(arg)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "exponents": list(self.exponents), "label": self.label}
        if self.kind in (SINE, COSINE):
            d["frequency"] = self.frequency
            d["variable"] = self.variable
        if self.kind == PDE_TRIAL:
            d["derivative_order"] = self.derivative_order
        return d


@dataclass(frozen=True)
class Dictionary:
    terms: tuple[Term, ...]
    state_dim: int
    variable_names: tuple[str, ...] = ()

    def __post_init__(self):
        labels = self.labels
        if len(set(labels)) != len(labels):
            dup = sorted({lab for lab in labels if labels.count(lab) > 1})
            raise LibraryError(f"duplicate term labels: {dup}")

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.terms]

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def indices(self, labels: Sequence[str]) -> list[int]:
        lookup = {lab: i for i, lab in enumerate(self.labels)}
        try:
            return [lookup[lab] for lab in labels]
        except KeyError as err:
            raise LibraryError(f"unknown term label {err.args[0]!r}") from None

    def to_json(self) -> str:
        return json.dumps([t.to_dict() for t in self.terms], indent=1)

    @classmethod
    def from_json(cls, text: str, state_dim: int | None = None,
                  variable_names: Sequence[str] = ()) -> "Dictionary":
        raw = json.loads(text)
        if state_dim is None:
            state_dim = max([len(r.get("exponents", [])) for r in raw]
                            + [r.get("variable", -1) + 1 for r in raw] + [1])
        names = tuple(variable_names) or default_variable_names(state_dim)
        terms = []
        for r in raw:
            exps = tuple(r.get("exponents", ()))
            if r["kind"] in (SINE, COSINE) and not exps:
                exps = (0,) * state_dim
            t = Term(r["kind"], exps, r.get("frequency"), r.get("variable"),
                     r.get("derivative_order", 0), names)
            if "label" in r and r["label"] != t.label:
                raise LibraryError(f"label {r['label']!r} does not match fields ({t.label!r})")
            terms.append(t)
        return cls(tuple(terms), state_dim, names)


def _monomials(state_dim: int, max_degree: int, names, kind=MONOMIAL, derivative_order=0):
    terms = []
    for deg in range(max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(state_dim), deg):
            exps = [0] * state_dim
            for v in combo:
                exps[v] += 1
            terms.append(Term(kind, tuple(exps), derivative_order=derivative_order, names=names))
    return terms


def build_polynomial_library(state_dim: int, max_degree: int,
                             variable_names: Sequence[str] = ()) -> Dictionary:
    """All monomials of total degree ``<= max_degree`` in graded-lex order."""
    if state_dim < 1 or max_degree < 0:
        raise LibraryError("need state_dim >= 1 and max_degree >= 0")
    names = tuple(variable_names) or default_variable_names(state_dim)
    terms = _monomials(state_dim, max_degree, names)
    assert len(terms) == comb(state_dim + max_degree, state_dim)
    return Dictionary(tuple(terms), state_dim, names)


def build_trig_terms(state_dim: int, frequencies: Sequence[int],
                     variable_names: Sequence[str] = ()) -> list[Term]:
    """sin/cos pairs, frequency-major, then variable, sine before cosine."""
    names = tuple(variable_names) or default_variable_names(state_dim)
    out = []
    for f in frequencies:
        for v in range(state_dim):
            for kind in (SINE, COSINE):
                out.append(Term(kind, (0,) * state_dim, f, v, names=names))
    return out


def build_polytrig_library(state_dim: int, max_degree: int, frequencies: Sequence[int] = (1, 2),
                           variable_names: Sequence[str] = ()) -> Dictionary:
    poly = build_polynomial_library(state_dim, max_degree, variable_names)
    trig = build_trig_terms(state_dim, frequencies, poly.variable_names)
    return Dictionary(poly.terms + tuple(trig), state_dim, poly.variable_names)


def build_lorenz_polytrig_library() -> Dictionary:
    """The 32-term Lorenz dictionary: 20 cubic monomials in (x, y, z) followed
    by sin/cos of each variable at frequencies 1 and 2."""
    return build_polytrig_library(3, 3, (1, 2))


def build_pde_trial_library(max_power: int, max_derivative: int, min_power: int = 1,
                            field_name: str = "u") -> Dictionary:
    """Trial terms ``d^a/dx^a (u^p)`` for ``min_power <= p <= max_power``,
    ``0 <= a <= max_derivative``; derivative-major order."""
    names = (field_name,)
    terms = [Term(PDE_TRIAL, (p,), derivative_order=a, names=names)
             for a in range(max_derivative + 1)
             for p in range(min_power, max_power + 1)]
    return Dictionary(tuple(terms), 1, names)


@dataclass(frozen=True)
class EvaluatedLibrary:
    """Design matrix with column labels.

    When ``scales`` is set, ``matrix`` holds the normalized columns and the
    original column ``j`` equals ``matrix[:, j] * scales[j]``.
    """

    matrix: np.ndarray
    labels: tuple[str, ...]
    scales: np.ndarray | None = None

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[1] != len(self.labels):
            raise LibraryError(
                f"matrix shape {self.matrix.shape} does not match {len(self.labels)} labels")
        if self.scales is not None and (np.shape(self.scales) != (len(self.labels),)
                                        or np.any(np.asarray(self.scales) <= 0)):
            raise LibraryError("scales must be positive, one per column")

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def normalized(self) -> bool:
        return self.scales is not None

    def raw_matrix(self) -> np.ndarray:
        if self.scales is None:
            return self.matrix
        return self.matrix * self.scales

    def unnormalize(self) -> "EvaluatedLibrary":
        return EvaluatedLibrary(self.raw_matrix(), self.labels)

    def to_raw_coefficients(self, coef) -> np.ndarray:
        """Map coefficients fitted on ``matrix`` to the unnormalized columns."""
        coef = np.asarray(coef, dtype=float)
        if self.scales is None:
            return coef.copy()
        s = self.scales if coef.ndim == 1 else self.scales[:, None]
        return coef / s

    def select(self, cols: Sequence[int]) -> "EvaluatedLibrary":
        cols = list(cols)
        return replace(self, matrix=self.matrix[:, cols],
                       labels=tuple(self.labels[i] for i in cols),
                       scales=None if self.scales is None else self.scales[cols])

    def indices(self, labels: Sequence[str]) -> list[int]:
        lookup = {lab: i for i, lab in enumerate(self.labels)}
        try:
            return [lookup[lab] for lab in labels]
        except KeyError as err:
            raise LibraryError(f"unknown term label {err.args[0]!r}") from None


def _state_array(states) -> np.ndarray:
    x = getattr(states, "states", states)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def evaluate(dictionary: Dictionary, states) -> EvaluatedLibrary:
    """Evaluate every term on the samples of ``states`` (a ``TrajectoryDataset``
    or an ``(m, d)`` array).  Column order follows the dictionary."""
    x = _state_array(states)
    if x.shape[1] != dictionary.state_dim:
        raise LibraryError(
            f"dictionary expects {dictionary.state_dim} state variables, data has {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise LibraryError("state data contains non-finite values")
    mat = np.column_stack([t.evaluate(x) for t in dictionary.terms])
    return EvaluatedLibrary(mat, tuple(dictionary.labels))


def normalize_columns(lib: EvaluatedLibrary) -> EvaluatedLibrary:
    """Scale every column to unit Euclidean norm, recording the scales.

    Normalizing an already-normalized library composes the scales.
    """
    norms = np.linalg.norm(lib.matrix, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise LibraryError(f"cannot normalize zero column(s): {[lib.labels[i] for i in zero]}")
    scales = norms if lib.scales is None else norms * lib.scales
    return EvaluatedLibrary(lib.matrix / norms, lib.labels, scales)
