"""Benchmark trajectories, inviscid Burgers fields, derivatives and noise."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np


class DataError(ValueError):
    pass


class IntegrationError(RuntimeError):
    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class NoiseMeta:
    eta: float
    seed: int
    base_rms: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"eta": self.eta, "seed": self.seed, "base_rms": list(self.base_rms)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NoiseMeta":
        return cls(float(d["eta"]), int(d["seed"]), tuple(float(v) for v in d["base_rms"]))


@dataclass(frozen=True)
class TrajectoryDataset:
    """States sampled on the uniform grid ``t0 + dt * arange(m)``."""

    t0: float
    dt: float
    states: np.ndarray
    derivatives: np.ndarray | None = None
    noise_meta: NoiseMeta | None = None
    variable_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.states.ndim != 2:
            raise DataError("states must be an (m, d) array")
        if self.dt <= 0:
            raise DataError("dt must be positive")
        if not np.all(np.isfinite(self.states)):
            raise DataError("states contain non-finite values")
        if self.derivatives is not None and self.derivatives.shape != self.states.shape:
            raise DataError("derivatives must have the same shape as states")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def names(self) -> tuple[str, ...]:
        if self.variable_names:
            return self.variable_names
        d = self.state_dim
        return ("x", "y", "z")[:d] if d <= 3 else tuple(f"x{i + 1}" for i in range(d))

    def to_csv(self, path) -> None:
        """Write ``t, x1..xd`` (plus ``dx1..dxd``) with a JSON sidecar for
        names and noise metadata."""
        path = Path(path)
        d = self.state_dim
        header = ["t"] + [f"x{i + 1}" for i in range(d)]
        cols = [self.times[:, None], self.states]
        if self.derivatives is not None:
            header += [f"dx{i + 1}" for i in range(d)]
            cols.append(self.derivatives)
        data = np.hstack(cols)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in data:
                w.writerow([repr(float(v)) for v in row])
        meta = {"t0": self.t0, "dt": self.dt, "variable_names": list(self.names),
                "noise_meta": None if self.noise_meta is None else self.noise_meta.to_dict()}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=1))

    @classmethod
    def from_csv(cls, path) -> "TrajectoryDataset":
        path = Path(path)
        with path.open() as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        if header[0] != "t":
            raise DataError("trajectory CSV must start with a 't' column")
        xcols = [i for i, h in enumerate(header) if h.startswith("x")]
        dcols = [i for i, h in enumerate(header) if h.startswith("dx")]
        t = body[:, 0]
        steps = np.diff(t)
        if steps.size and np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])):
            raise DataError("time grid is not uniform")
        meta_path = path.with_suffix(".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        dt = float(meta.get("dt", steps[0] if steps.size else 1.0))
        noise = meta.get("noise_meta")
        return cls(float(meta.get("t0", t[0])), dt, body[:, xcols],
                   body[:, dcols] if dcols else None,
                   NoiseMeta.from_dict(noise) if noise else None,
                   tuple(meta.get("variable_names", ())))


@dataclass(frozen=True)
class GridDataset:
    """Fields sampled on a uniform ``x_grid`` x ``t_grid`` tensor grid;
    ``values[name]`` has shape ``(len(x_grid), len(t_grid))``."""

    x_grid: np.ndarray
    t_grid: np.ndarray
    values: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for g, name in ((self.x_grid, "x"), (self.t_grid, "t")):
            if g.ndim != 1 or g.size < 2:
                raise DataError(f"{name}_grid must be a 1-D grid with >= 2 nodes")
            h = np.diff(g)
            if np.any(h <= 0) or np.max(np.abs(h - h[0])) > 1e-9 * abs(h[0]):
                raise DataError(f"{name}_grid is not uniform")
        for k, v in self.values.items():
            if v.shape != (self.x_grid.size, self.t_grid.size):
                raise DataError(f"field {k!r} has shape {v.shape}")
            if not np.all(np.isfinite(v)):
                raise DataError(f"field {k!r} has non-finite values")

    @property
    def dx(self) -> float:
        return float(self.x_grid[1] - self.x_grid[0])

    @property
    def dt(self) -> float:
        return float(self.t_grid[1] - self.t_grid[0])

    def to_csv(self, path) -> None:
        """Flat ``x, t, <field>...`` CSV plus a JSON sidecar with grid metadata."""
        path = Path(path)
        names = list(self.values)
        X, T = np.meshgrid(self.x_grid, self.t_grid, indexing="ij")
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "t"] + names)
            flat = [X.ravel(), T.ravel()] + [self.values[n].ravel() for n in names]
            for row in zip(*flat):
                w.writerow([repr(float(v)) for v in row])
        sidecar = {"nx": int(self.x_grid.size), "nt": int(self.t_grid.size),
                   "x0": float(self.x_grid[0]), "dx": self.dx,
                   "t0": float(self.t_grid[0]), "dt": self.dt, "fields": names,
                   "meta": self.meta}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, default=float))

    @classmethod
    def from_csv(cls, path) -> "GridDataset":
        path = Path(path)
        side = json.loads(path.with_suffix(".json").read_text())
        nx, nt = side["nx"], side["nt"]
        with path.open() as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        if body.shape[0] != nx * nt:
            raise DataError(f"expected {nx * nt} rows, found {body.shape[0]}")
        values = {name: body[:, header.index(name)].reshape(nx, nt) for name in side["fields"]}
        x = side["x0"] + side["dx"] * np.arange(nx)
        t = side["t0"] + side["dt"] * np.arange(nt)
        return cls(x, t, values, side.get("meta", {}))


# ---------------------------------------------------------------------------
# benchmark systems


@dataclass(frozen=True)
class OdeSystem:
    """Right-hand side plus the true sparse model, keyed by term label."""

    name: str
    params: dict
    rhs: Callable[[np.ndarray], np.ndarray]
    true_terms: tuple[dict, ...]
    variable_names: tuple[str, ...]

    def __call__(self, x):
        return self.rhs(x)

    @property
    def state_dim(self) -> int:
        return len(self.variable_names)


def lorenz(sigma: float = 10.0, rho: float = 26.0, beta: float = 8.0 / 3.0) -> OdeSystem:
    def rhs(s):
        x, y, z = s
        return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])

    true = ({"x": -sigma, "y": sigma},
            {"x": rho, "y": -1.0, "xz": -1.0},
            {"xy": 1.0, "z": -beta})
    return OdeSystem("lorenz", {"sigma": sigma, "rho": rho, "beta": beta}, rhs, true,
                     ("x", "y", "z"))


def hopf(mu: float = -1e-5, omega: float = 1.0) -> OdeSystem:
    def rhs(s):
        x, y = s
        r2 = x * x + y * y
        return np.array([mu * x - omega * y - x * r2, omega * x + mu * y - y * r2])

    true = ({"x": mu, "y": -omega, "x^3": -1.0, "xy^2": -1.0},
            {"x": omega, "y": mu, "x^2y": -1.0, "y^3": -1.0})
    return OdeSystem("hopf", {"mu": mu, "omega": omega}, rhs, true, ("x", "y"))


def pitchfork(mu: float = 0.5) -> OdeSystem:
    def rhs(s):
        x, y = s
        return np.array([mu * x - x ** 3, -y])

    true = ({"x": mu, "x^3": -1.0}, {"y": -1.0})
    return OdeSystem("pitchfork", {"mu": mu}, rhs, true, ("x", "y"))


SYSTEMS = {"lorenz": lorenz, "hopf": hopf, "pitchfork": pitchfork}


def make_system(name: str, **params) -> OdeSystem:
    try:
        factory = SYSTEMS[name]
    except KeyError:
        raise DataError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None
    return factory(**params)


def integrate_rk4(system, x0, t_span: tuple[float, float], dt: float) -> TrajectoryDataset:
    """Classical fixed-step RK4, sampling every step.

    The number of steps is ``round((T - t0) / dt)``, so ``T = 10, dt = 0.01``
    yields 1001 samples including both endpoints.
    """
    t0, T = map(float, t_span)
    if dt <= 0 or T <= t0:
        raise DataError("need dt > 0 and T > t0")
    n = int(round((T - t0) / dt))
    f = system.rhs if isinstance(system, OdeSystem) else system
    out = np.empty((n + 1, len(x0)))
    x = np.asarray(x0, dtype=float)
    out[0] = x
    h = dt
    for i in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"state became non-finite at t={t0 + (i + 1) * h:g}",
                                   t0 + (i + 1) * h)
        out[i + 1] = x
    names = system.variable_names if isinstance(system, OdeSystem) else ()
    return TrajectoryDataset(t0, dt, out, variable_names=names)


def finite_difference_derivative(data: TrajectoryDataset) -> TrajectoryDataset:
    """Second-order central differences inside, second-order one-sided at
    the ends."""
    if data.n_samples < 3:
        raise DataError("need at least 3 samples for finite differences")
    dx = np.gradient(data.states, data.dt, axis=0, edge_order=2)
    return replace(data, derivatives=dx)


def rms(values: np.ndarray, axis=0) -> np.ndarray:
    return np.sqrt(np.mean(np.asarray(values) ** 2, axis=axis))


def add_noise(data, eta: float, seed: int):
    """Add ``eta * rms * N(0, 1)`` noise, the RMS taken per coordinate (per
    field for grid data) over the whole record.

    Works on ``TrajectoryDataset`` and ``GridDataset``.  ``eta = 0`` returns
    the input unchanged.  The generator is numpy's PCG64 seeded with ``seed``.
    """
    if eta < 0:
        raise DataError("eta must be nonnegative")
    rng = np.random.default_rng(seed)
    if isinstance(data, GridDataset):
        if eta == 0:
            return data
        values = {}
        base = {}
        for k, v in data.values.items():
            s = float(rms(v, axis=None))
            base[k] = s
            values[k] = v + eta * s * rng.standard_normal(v.shape)
        meta = dict(data.meta, noise={"eta": eta, "seed": seed, "base_rms": base})
        return GridDataset(data.x_grid, data.t_grid, values, meta)
    base = rms(data.states)
    meta = NoiseMeta(float(eta), int(seed), tuple(float(b) for b in base))
    if eta == 0:
        return replace(data, noise_meta=meta)
    noisy = data.states + eta * base * rng.standard_normal(data.states.shape)
    return replace(data, states=noisy, derivatives=None, noise_meta=meta)


def replicate_seed(base_seed: int, replicate: int) -> int:
    """Seed for replicate ``r`` of a sweep: ``base_seed + r``."""
    return int(base_seed) + int(replicate)


# ---------------------------------------------------------------------------
# inviscid Burgers


def shock_time(u0: Callable, x_grid: np.ndarray, u0_prime: Callable | None = None) -> float:
    """``-1 / min u0'``, with ``u0'`` sampled on a 16x refined grid when no
    derivative is supplied.  ``inf`` if ``u0`` is nowhere decreasing."""
    fine = np.linspace(x_grid[0], x_grid[-1], 16 * (x_grid.size - 1) + 1)
    if u0_prime is not None:
        slope = np.min(u0_prime(fine))
    else:
        slope = np.min(np.gradient(u0(fine), fine))
    return np.inf if slope >= 0 else -1.0 / slope


def burgers_1d(x_grid, t_grid, u0: Callable, u0_prime: Callable | None = None,
               tol: float = 1e-12) -> GridDataset:
    """Exact pre-shock solution of ``u_t + (u^2 / 2)_x = 0``.

    Each node solves ``u = u0(x - u t)`` by bisection on
    ``[min u0, max u0]`` to width ``tol``.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    ts = shock_time(u0, x_grid, u0_prime)
    if np.max(t_grid) >= ts:
        raise DataError(f"requested time {np.max(t_grid):g} is not before the shock time {ts:g}")
    probe = u0(np.linspace(x_grid[0], x_grid[-1], 16 * x_grid.size))
    lo0, hi0 = float(np.min(probe)), float(np.max(probe))
    X, T = np.meshgrid(x_grid, t_grid, indexing="ij")
    lo = np.full(X.shape, lo0 - 1e-9)
    hi = np.full(X.shape, hi0 + 1e-9)
    if hi0 - lo0 <= 0:
        u = np.full(X.shape, lo0)
    else:
        # g(u) = u - u0(x - u t) is increasing in u before the shock
        n_iter = int(np.ceil(np.log2((hi0 - lo0 + 2e-9) / tol))) + 1
        for _ in range(n_iter):
            mid = 0.5 * (lo + hi)
            g = mid - u0(X - mid * T)
            pos = g > 0
            hi = np.where(pos, mid, hi)
            lo = np.where(pos, lo, mid)
        u = 0.5 * (lo + hi)
    meta = {"equation": "inviscid_burgers", "shock_time": ts}
    return GridDataset(x_grid, t_grid, {"u": u}, meta)
