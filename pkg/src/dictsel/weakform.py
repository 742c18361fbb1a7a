"""Weak-form (integration by parts) assembly with polynomial bump test functions.

A test function is ``phi(t) = C (t - a)^p (b - t)^q`` on ``[a, b]`` and zero
elsewhere, with ``C`` chosen so that its maximum over the sample grid is 1.
All integrals use the composite trapezoid rule on the uniform sample grid.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from math import comb, factorial
from pathlib import Path

import numpy as np

from .library import PDE_TRIAL, Dictionary, EvaluatedLibrary

QUADRATURE = "trapezoid"


class WeakFormError(ValueError):
    pass


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def _falling(n: int, k: int) -> float:
    return factorial(n) / factorial(n - k) if k <= n else 0.0


@dataclass(frozen=True)
class TestFunctionBank:
    """``K`` bump functions sampled on ``grid``.

    ``supports[k] = (a_k, b_k)``; ``values`` and ``derivatives`` are
    ``K x m`` matrices of ``phi_k(t_j)`` and ``phi_k'(t_j)``; ``scales`` holds
    the normalization constants ``C_k`` expressed for the unit-length
    reference ``((t-a)/L)^p ((b-t)/L)^q``.
    """

    __test__ = False  # not a pytest class

    grid: np.ndarray
    supports: tuple[tuple[float, float], ...]
    p: int
    q: int
    values: np.ndarray
    derivatives: np.ndarray
    scales: np.ndarray

    def __len__(self) -> int:
        return len(self.supports)

    @property
    def K(self) -> int:
        return len(self.supports)

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def derivative_matrix(self, order: int) -> np.ndarray:
        """``K x m`` matrix of the ``order``-th derivative, computed analytically."""
        if order == 0:
            return self.values
        if order == 1:
            return self.derivatives
        return _bump_derivative(self.grid, self.supports, self.p, self.q, self.scales, order)

    def weighted(self, order: int = 0) -> np.ndarray:
        """Derivative matrix times trapezoid weights, ready for ``@ data``."""
        return self.derivative_matrix(order) * trapezoid_weights(self.grid.size, self.spacing)

    def summary(self) -> dict:
        return {"K": self.K, "p": self.p, "q": self.q,
                "supports": [list(s) for s in self.supports],
                "centers": [0.5 * (a + b) for a, b in self.supports]}


def _bump_derivative(grid, supports, p, q, scales, order):
    out = np.zeros((len(supports), grid.size))
    for k, (a, b) in enumerate(supports):
        L = b - a
        inside = (grid >= a) & (grid <= b)
        s = (grid[inside] - a) / L
        r = (b - grid[inside]) / L
        acc = np.zeros(s.size)
        # Leibniz rule on s^p r^q with ds/dt = 1/L, dr/dt = -1/L
        for j in range(order + 1):
            i = order - j
            if j > p or i > q:
                continue
            acc += comb(order, j) * _falling(p, j) * s ** (p - j) \
                * (-1) ** i * _falling(q, i) * r ** (q - i)
        out[k, inside] = scales[k] * acc / L ** order
    return out


def build_test_bank(time_grid, K: int, p: int, q: int | None = None,
                    support_len: float | None = None) -> TestFunctionBank:
    """Place ``K`` equally spaced supports of length ``support_len`` inside
    the grid.

    Support endpoints are snapped to grid nodes.  ``support_len`` defaults to
    a quarter of the record.  ``q`` defaults to ``p``.
    """
    grid = np.asarray(time_grid, dtype=float)
    q = p if q is None else q
    if p < 1 or q < 1:
        raise WeakFormError("test-function degrees p and q must be positive integers "
                            "(the function must vanish at both ends of its support)")
    if K < 1:
        raise WeakFormError("need at least one test function")
    m = grid.size
    h = float(grid[1] - grid[0])
    span = grid[-1] - grid[0]
    if support_len is None:
        support_len = 0.25 * span
    n_len = int(round(support_len / h))
    if n_len + 1 < p + q + 2:
        raise WeakFormError(f"support of {n_len + 1} grid points is shorter than p+q+2 = {p + q + 2}")
    if n_len > m - 1:
        raise WeakFormError("support longer than the record")
    free = m - 1 - n_len
    if K == 1:
        starts = [free // 2]
    else:
        starts = [int(round(k * free / (K - 1))) for k in range(K)]
    supports = tuple((float(grid[s]), float(grid[s + n_len])) for s in starts)
    values = np.zeros((K, m))
    scales = np.empty(K)
    for k, (s0, (a, b)) in enumerate(zip(starts, supports)):
        idx = slice(s0, s0 + n_len + 1)
        L = b - a
        raw = ((grid[idx] - a) / L) ** p * ((b - grid[idx]) / L) ** q
        scales[k] = 1.0 / raw.max()
        values[k, idx] = raw * scales[k]
        # endpoints are exactly zero by construction
        values[k, s0] = values[k, s0 + n_len] = 0.0
    derivs = _bump_derivative(grid, supports, p, q, scales, 1)
    return TestFunctionBank(grid, supports, p, q, values, derivs, scales)


@dataclass(frozen=True)
class WeakSystem:
    """``G`` (K x n) and right-hand sides ``b`` (K x d) of the weak problem
    ``G xi ~= b``."""

    G: np.ndarray
    b: np.ndarray
    labels: tuple[str, ...]
    bank: object
    quadrature: str = QUADRATURE
    coordinates: tuple[str, ...] = ()

    def library(self) -> EvaluatedLibrary:
        return EvaluatedLibrary(self.G, self.labels)

    def target(self, coordinate: int | str = 0) -> np.ndarray:
        if isinstance(coordinate, str):
            coordinate = self.coordinates.index(coordinate)
        return self.b[:, coordinate]

    def targets(self) -> list[np.ndarray]:
        return [self.b[:, c] for c in range(self.b.shape[1])]

    def to_csv(self, path) -> None:
        path = Path(path)
        coords = self.coordinates or tuple(f"b{c + 1}" for c in range(self.b.shape[1]))
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(self.labels) + [f"b_{c}" for c in coords])
            for row in np.hstack([self.G, self.b]):
                w.writerow([repr(float(v)) for v in row])


def weak_transform_ode(lib: EvaluatedLibrary, states, bank: TestFunctionBank) -> WeakSystem:
    """``G[k, j] = int phi_k d_j dt`` and ``b[k, c] = -int phi_k' x_c dt``."""
    x = np.asarray(getattr(states, "states", states), dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    m = bank.grid.size
    if lib.matrix.shape[0] != m or x.shape[0] != m:
        raise WeakFormError(
            f"grid mismatch: bank has {m} nodes, library {lib.matrix.shape[0]}, data {x.shape[0]}")
    dt = getattr(states, "dt", None)
    if dt is not None and abs(dt - bank.spacing) > 1e-9 * dt:
        raise WeakFormError(f"data spacing {dt} differs from bank spacing {bank.spacing}")
    w = trapezoid_weights(m, bank.spacing)
    G = (bank.values * w) @ lib.raw_matrix()
    b = -(bank.derivatives * w) @ x
    names = tuple(getattr(states, "names", ())) or tuple(f"x{i + 1}" for i in range(x.shape[1]))
    return WeakSystem(G, b, lib.labels, bank, QUADRATURE, names)


@dataclass(frozen=True)
class TensorBank:
    """Separable space-time test functions ``phi_x[k](x) * phi_t[l](t)``."""

    space: TestFunctionBank
    time: TestFunctionBank

    def __len__(self) -> int:
        return self.space.K * self.time.K

    def summary(self) -> dict:
        return {"space": self.space.summary(), "time": self.time.summary()}


def weak_transform_pde_1d(data, dictionary: Dictionary, space_bank: TestFunctionBank,
                          time_bank: TestFunctionBank, field: str = "u") -> WeakSystem:
    """Weak system for ``u_t = sum_j w_j d^a_j/dx^a_j f_j(u)``.

    Rows are indexed by ``(k, l)`` pairs flattened space-major.  The spatial
    derivatives are moved onto the test function:
    ``G[(k,l), j] = (-1)^a <d^a psi_kl, f_j(u)>`` and
    ``b[(k,l)] = -<d_t psi_kl, u>``.
    """
    U = data.values[field]
    if space_bank.grid.size != U.shape[0] or time_bank.grid.size != U.shape[1]:
        raise WeakFormError(f"grid mismatch between field {U.shape} and test banks "
                            f"({space_bank.grid.size}, {time_bank.grid.size})")
    wt = time_bank.weighted(0)
    b = -(space_bank.weighted(0) @ U @ time_bank.weighted(1).T).ravel()
    cols = []
    for term in dictionary.terms:
        if term.kind != PDE_TRIAL:
            raise WeakFormError(f"term {term.label!r} is not a PDE trial term")
        a = term.derivative_order
        if a > space_bank.p or a > space_bank.q:
            raise WeakFormError(f"derivative order {a} of {term.label!r} exceeds test-function "
                                f"smoothness (p={space_bank.p}, q={space_bank.q})")
        F = U ** term.exponents[0]
        cols.append(((-1) ** a * space_bank.weighted(a) @ F @ wt.T).ravel())
    G = np.column_stack(cols)
    return WeakSystem(G, b[:, None], tuple(dictionary.labels), TensorBank(space_bank, time_bank),
                      QUADRATURE, (field,))


def bank_to_json(bank) -> str:
    return json.dumps(bank.summary(), indent=1)
