"""End-to-end pipelines: simulate, identify, noise sweeps, screening and the
1-D Burgers weak PDE identification.

Every run writes into one output directory and finishes with
``manifest.json``, which echoes the resolved config, package versions, wall
time, whether columns were normalized, and every file written.  When a stage
fails the files of that run are removed and :class:`StageError` names the
stage.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from . import datagen, library, regressors, scoring, weakform
from .config import (IdentifyConfig, LibraryConfig, PdeConfig, ScreenConfig, SearchConfig,
                     SelectionConfig, SimulateConfig, SweepConfig, SystemConfig, WeakConfig)
from .library import EvaluatedLibrary
from .regressors import SparseModel
from .scoring import ScoreTrace

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunReport:
    out_dir: Path | None
    manifest: dict
    traces: dict[str, ScoreTrace] = field(default_factory=dict)
    model: SparseModel | None = None
    table: list[dict] = field(default_factory=list)


class _Run:
    """Tracks written files, wraps stages and writes the manifest."""

    def __init__(self, command: str, config, out_dir, normalized: bool | None):
        self.command = command
        self.config = config
        self.out = Path(out_dir) if out_dir is not None else None
        self.files: list[str] = []
        self.normalized = normalized
        self.extra: dict = {}
        self.t0 = time.perf_counter()
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)

    @contextmanager
    def stage(self, name: str):
        log.info("%s: %s", self.command, name)
        try:
            yield
        except StageError:
            self.cleanup()
            raise
        except Exception as err:
            self.cleanup()
            raise StageError(name, err) from err

    def path(self, name: str) -> Path | None:
        if self.out is None:
            return None
        self.files.append(name)
        return self.out / name

    def cleanup(self) -> None:
        if self.out is None:
            return
        for name in self.files + ["manifest.json"]:
            p = self.out / name
            if p.exists():
                p.unlink()
            sidecar = p.with_suffix(".json")
            if name.endswith(".csv") and sidecar.exists():
                sidecar.unlink()
        self.files = []

    def finish(self) -> dict:
        manifest = {
            "command": self.command,
            "config": self.config.model_dump(mode="json"),
            "normalized": self.normalized,
            "versions": {"dictsel": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
            "wall_time_s": time.perf_counter() - self.t0,
            "files": list(self.files),
        }
        manifest.update(self.extra)
        if self.out is not None:
            with (self.out / "manifest.json").open("w") as fh:
                json.dump(manifest, fh, indent=1, default=_json_default)
        return manifest


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# ---------------------------------------------------------------------------
# building blocks


def simulate_system(cfg: SystemConfig) -> datagen.TrajectoryDataset:
    system = datagen.make_system(cfg.name, **cfg.params)
    return datagen.integrate_rk4(system, cfg.x0, (cfg.t_start, cfg.t_end), cfg.dt)


def build_dictionary(cfg: LibraryConfig, state_dim: int, names: Sequence[str] = ()) -> library.Dictionary:
    if cfg.kind == "polynomial":
        return library.build_polynomial_library(state_dim, cfg.max_degree, names)
    return library.build_polytrig_library(state_dim, cfg.max_degree, cfg.frequencies, names)


def _n_test(cfg: WeakConfig, n_terms: int) -> int:
    return cfg.K if cfg.K is not None else max(1, int(round(cfg.k_factor * n_terms)))


def test_bank(cfg: WeakConfig, grid, n_terms: int) -> weakform.TestFunctionBank:
    return weakform.build_test_bank(grid, _n_test(cfg, n_terms), cfg.p, cfg.q, cfg.support_len)


def regression_problem(data: datagen.TrajectoryDataset, dictionary: library.Dictionary,
                       weak: WeakConfig, normalize: bool,
                       bank: weakform.TestFunctionBank | None = None):
    """Design matrix and per-coordinate targets, weak or strong form."""
    lib = library.evaluate(dictionary, data)
    if weak.enabled:
        bank = bank or test_bank(weak, data.times, len(dictionary))
        ws = weakform.weak_transform_ode(lib, data, bank)
        D, targets = ws.library(), ws.targets()
    else:
        dx = data.derivatives if data.derivatives is not None \
            else datagen.finite_difference_derivative(data).derivatives
        D, targets = lib, [dx[:, c] for c in range(dx.shape[1])]
    if normalize:
        D = library.normalize_columns(D)
    return D, targets


def score_trace(D, targets: Sequence[np.ndarray], sel: SelectionConfig,
                coordinates: Sequence[str] = ()) -> ScoreTrace:
    if sel.regressor == "gbsr":
        return regressors.gbsr(D, targets, sel.kind, sel.aggregate, coordinates)
    if sel.regressor == "esr":
        return regressors.esr(D, targets, cap=sel.esr_cap, kind=sel.kind, mode=sel.aggregate,
                              coordinates=coordinates)
    if sel.regressor == "gfsr":
        return regressors.gfsr(D, targets, sel.kind, sel.aggregate, coordinates)
    if len(targets) != 1:
        raise ValueError("ssr_cv scores one coordinate at a time")
    return regressors.ssr_cv_trace(D, targets[0], sel.cv_folds, min_norm=sel.cv_min_norm,
                                   coordinate=coordinates[0] if coordinates else "")


def retained(trace: ScoreTrace, sel: SelectionConfig) -> tuple[int, ...] | None:
    """Kept column indices chosen by the policy, or None for policy 'none'."""
    if sel.policy == "none":
        return None
    if trace.regressor == "gfsr":
        below = [lv.level for lv in trace.levels if lv.score < sel.eps]
        k = min(below) if below else len(trace.labels)
        return tuple(sorted(set(range(len(trace.labels))) - set(trace.removed_at(k) if k else ())))
    level = regressors.select_sparsity(trace, sel.policy, sel.eps)
    return trace.retained_at(level)


def _write_trace(run: _Run, trace: ScoreTrace, coord: str) -> None:
    p = run.path(f"trace_{coord}.csv")
    if p is not None:
        trace.to_csv(p)


def _write_model(run: _Run, model: SparseModel) -> None:
    p = run.path("model.json")
    if p is not None:
        p.write_text(model.to_json())


def _map_replicates(fn: Callable, jobs: Sequence, threads: int) -> list:
    """Apply ``fn`` to every job; results come back in job order regardless
    of scheduling."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def _write_rows(path: Path | None, rows: list[dict], cols: Sequence[str]) -> None:
    if path is None:
        return
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(cols))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in r.items() if k in cols})


# ---------------------------------------------------------------------------
# simulate


def run_simulate(cfg: SimulateConfig, out_dir=None) -> RunReport:
    run = _Run("simulate", cfg, out_dir, None)
    with run.stage("simulate"):
        if cfg.system is not None:
            data = simulate_system(cfg.system)
            if cfg.derivatives:
                data = datagen.finite_difference_derivative(data)
        else:
            data = burgers_data(cfg.burgers)
    with run.stage("noise"):
        data = datagen.add_noise(data, cfg.noise.eta, cfg.noise.seed)
        if cfg.system is not None and cfg.derivatives and cfg.noise.eta > 0:
            data = datagen.finite_difference_derivative(data)
    with run.stage("write"):
        p = run.path("data.csv")
        if p is not None:
            data.to_csv(p)
            run.files.append("data.json")
    return RunReport(run.out, run.finish())


# ---------------------------------------------------------------------------
# identify


def run_identify(cfg: IdentifyConfig, out_dir=None) -> RunReport:
    """Simulate, transform, score, select and refit one system."""
    run = _Run("identify", cfg, out_dir, cfg.library.normalize)
    with run.stage("simulate" if cfg.input is None else "ingest"):
        data = simulate_system(cfg.system) if cfg.input is None \
            else datagen.TrajectoryDataset.from_csv(cfg.input)
    with run.stage("noise"):
        data = datagen.add_noise(data, cfg.noise.eta, cfg.noise.seed)
    with run.stage("library"):
        dictionary = build_dictionary(cfg.library, data.state_dim, data.names)
    with run.stage("weak_form" if cfg.weak.enabled else "derivatives"):
        D, targets = regression_problem(data, dictionary, cfg.weak, cfg.library.normalize)
        if cfg.weak.enabled:
            run.extra["test_functions"] = test_bank(cfg.weak, data.times, len(dictionary)).summary()
    coords = data.names
    sel = cfg.selection
    traces: dict[str, ScoreTrace] = {}
    keeps: dict[str, tuple[int, ...] | None] = {}
    with run.stage("selection"):
        if sel.scope == "all":
            trace = score_trace(D, targets, sel, coords)
            traces["all"] = trace
            keep = retained(trace, sel)
            keeps = {c: keep for c in coords}
        else:
            cv_D = None
            for c, y in zip(coords, targets):
                if sel.regressor == "ssr_cv":
                    # cross validation splits time samples, so it works on the strong form
                    if cv_D is None:
                        cv_D, cv_y = regression_problem(data, dictionary, WeakConfig(enabled=False),
                                                        cfg.library.normalize)
                    trace = score_trace(cv_D, [cv_y[coords.index(c)]], sel, (c,))
                else:
                    trace = score_trace(D, [y], sel, (c,))
                traces[c] = trace
                keeps[c] = retained(trace, sel)
        run.extra["retained"] = {c: (None if k is None else [D.labels[i] for i in k])
                                 for c, k in keeps.items()}
    model = None
    with run.stage("refit"):
        if all(k is not None for k in keeps.values()):
            model = SparseModel.stack([regressors.refit(D, keeps[c], y, coordinate=c)
                                       for c, y in zip(coords, targets)], coords)
    with run.stage("write"):
        for name, tr in traces.items():
            _write_trace(run, tr, name)
        if model is not None:
            _write_model(run, model)
    return RunReport(run.out, run.finish(), traces, model)


# ---------------------------------------------------------------------------
# noise sweep


def _true_support(system: datagen.OdeSystem, coords: Sequence[int]) -> set[str]:
    return set().union(*(set(system.true_terms[c]) for c in coords))


def _search(D, targets, coords: list[int], s: SearchConfig, truth: set[str]) -> set[str]:
    ys = [targets[c] for c in coords]
    if s.method == "exhaustive":
        k = s.subset_size or len(truth)
        keep = regressors.best_kept_subset(D, ys, k)
    else:
        trace = regressors.gbsr(D, ys)
        keep = trace.retained_at(regressors.select_sparsity(trace))
    return {D.labels[i] for i in keep}


def run_noise_sweep(cfg: SweepConfig, out_dir=None, threads: int = 1) -> RunReport:
    """Support-recovery success rate per noise level and search.

    Replicate ``r`` uses noise seed ``base_seed + r``; a replicate that raises
    counts as a failure.  Noise-free data do not depend on the seed, so
    ``eta = 0`` is evaluated once and shared by all replicates.
    """
    run = _Run("sweep", cfg, out_dir, cfg.library.normalize)
    with run.stage("simulate"):
        system = datagen.make_system(cfg.system.name, **cfg.system.params)
        data = simulate_system(cfg.system)
    with run.stage("library"):
        dictionary = build_dictionary(cfg.library, data.state_dim, data.names)
        bank = test_bank(cfg.weak, data.times, len(dictionary)) if cfg.weak.enabled else None
        names = list(data.names)
        plans = []
        for s in cfg.searches:
            coords = list(range(len(names))) if s.coordinates == "all" \
                else [names.index(c) for c in s.coordinates]
            truth = set(s.true_support) if s.true_support else _true_support(system, coords)
            plans.append((s, coords, truth))

    def replicate(job):
        eta, r = job
        seed = datagen.replicate_seed(cfg.base_seed, r)
        try:
            noisy = datagen.add_noise(data, eta, seed)
            D, targets = regression_problem(noisy, dictionary, cfg.weak, cfg.library.normalize, bank)
        except Exception as err:  # a failed replicate is a non-success
            log.warning("eta=%g replicate %d failed: %s", eta, r, err)
            return [(False, str(err))] * len(plans)
        out = []
        for s, coords, truth in plans:
            try:
                out.append((_search(D, targets, coords, s, truth) == truth, ""))
            except Exception as err:
                log.warning("eta=%g replicate %d search %s failed: %s", eta, r, s.name, err)
                out.append((False, str(err)))
        return out

    rows, detail = [], []
    with run.stage("sweep"):
        for eta in cfg.etas:
            if eta == 0:
                once = replicate((0.0, 0))
                results = [once] * cfg.replicates
            else:
                results = _map_replicates(replicate, [(eta, r) for r in range(cfg.replicates)], threads)
            for i, (s, _, truth) in enumerate(plans):
                ok = [res[i][0] for res in results]
                errors = sum(1 for res in results if res[i][1])
                rows.append({"eta": float(eta), "search": s.name, "replicates": cfg.replicates,
                             "successes": int(sum(ok)), "success_rate": float(np.mean(ok)),
                             "errors": errors})
                for r, res in enumerate(results):
                    detail.append({"eta": float(eta), "search": s.name, "replicate": r,
                                   "seed": datagen.replicate_seed(cfg.base_seed, r),
                                   "success": bool(res[i][0]), "error": res[i][1]})
    with run.stage("write"):
        _write_rows(run.path("sweep.csv"), rows,
                    ["eta", "search", "replicates", "successes", "success_rate", "errors"])
        _write_rows(run.path("sweep_replicates.csv"), detail,
                    ["eta", "search", "replicate", "seed", "success", "error"])
        run.extra["true_support"] = {s.name: sorted(t) for s, _, t in plans}
    return RunReport(run.out, run.finish(), table=rows)


# ---------------------------------------------------------------------------
# screening


def true_coefficients(system: datagen.OdeSystem, labels: Sequence[str]) -> np.ndarray:
    out = np.zeros((len(labels), system.state_dim))
    for c, terms in enumerate(system.true_terms):
        for lab, v in terms.items():
            out[list(labels).index(lab), c] = v
    return out


def run_screening_study(cfg: ScreenConfig, out_dir=None, threads: int = 1) -> RunReport:
    """Coefficient error of STLS after score-based screening, per keep
    fraction, over noise replicates.  The error of one replicate is the
    Frobenius norm of the raw-scale coefficient difference."""
    run = _Run("screen", cfg, out_dir, cfg.library.normalize)
    with run.stage("simulate"):
        system = datagen.make_system(cfg.system.name, **cfg.system.params)
        data = simulate_system(cfg.system)
    with run.stage("library"):
        dictionary = build_dictionary(cfg.library, data.state_dim, data.names)
        bank = test_bank(cfg.weak, data.times, len(dictionary)) if cfg.weak.enabled else None
        C = true_coefficients(system, dictionary.labels)
        truth = sorted(_true_support(system, range(system.state_dim)))

    def replicate(r):
        noisy = datagen.add_noise(data, cfg.eta, datagen.replicate_seed(cfg.base_seed, r))
        D, targets = regression_problem(noisy, dictionary, cfg.weak, cfg.library.normalize, bank)
        out = []
        for kf in cfg.keep_fractions:
            m = regressors.screen_then_stls(D, targets, kf, cfg.lam, cfg.aggregate, cfg.max_iter,
                                            truth, data.names)
            out.append((float(np.linalg.norm(m.coefficients - C)),
                        bool(m.provenance.get("over_pruned", False))))
        return out

    with run.stage("screen"):
        results = _map_replicates(replicate, list(range(cfg.replicates)), threads)
    rows = []
    for i, kf in enumerate(cfg.keep_fractions):
        err = np.array([res[i][0] for res in results])
        rows.append({"keep_fraction": float(kf), "n_kept": int(round(kf * len(dictionary))),
                     "replicates": cfg.replicates, "mean_error": float(err.mean()),
                     "std_error": float(err.std()), "over_pruned": int(sum(res[i][1] for res in results))})
    with run.stage("write"):
        _write_rows(run.path("screen.csv"), rows,
                    ["keep_fraction", "n_kept", "replicates", "mean_error", "std_error", "over_pruned"])
    return RunReport(run.out, run.finish(), table=rows)


# ---------------------------------------------------------------------------
# 1-D Burgers


def burgers_data(cfg) -> datagen.GridDataset:
    x = np.linspace(0.0, cfg.x_length, cfg.n_x, endpoint=False)
    t_shock = datagen.shock_time(np.sin, x, np.cos)
    t = np.linspace(0.0, cfg.shock_fraction * t_shock, cfg.n_steps + 1)
    data = datagen.burgers_1d(x, t, np.sin, np.cos)
    data.meta["shock_time"] = t_shock
    return data


def pde_problem(data: datagen.GridDataset, cfg: PdeConfig):
    dictionary = library.build_pde_trial_library(cfg.max_power, cfg.max_derivative)
    n = len(dictionary)
    sb = weakform.build_test_bank(data.x_grid, _n_test(cfg.space, n), cfg.space.p, cfg.space.q,
                                  cfg.space.support_len)
    tb = weakform.build_test_bank(data.t_grid, _n_test(cfg.time, n), cfg.time.p, cfg.time.q,
                                  cfg.time.support_len)
    ws = weakform.weak_transform_pde_1d(data, dictionary, sb, tb)
    D = ws.library()
    if cfg.normalize:
        D = library.normalize_columns(D)
    return D, ws


def _pde_identify(data, cfg: PdeConfig):
    D, ws = pde_problem(data, cfg)
    y = ws.b[:, 0]
    trace = score_trace(D, [y], cfg.selection, ("u",))
    keep = retained(trace, cfg.selection)
    model = None if keep is None else regressors.refit(D, keep, y, coordinate="u")
    return D, ws, trace, keep, model


def run_pde_identify(cfg: PdeConfig, out_dir=None, threads: int = 1) -> RunReport:
    """Weak identification of the inviscid Burgers equation from its
    characteristics solution, plus an optional noise-replicate study."""
    run = _Run("pde-identify", cfg, out_dir, cfg.normalize)
    with run.stage("simulate" if cfg.input is None else "ingest"):
        data = burgers_data(cfg.burgers) if cfg.input is None \
            else datagen.GridDataset.from_csv(cfg.input)
        if "shock_time" in data.meta:
            run.extra["shock_time"] = data.meta["shock_time"]
    with run.stage("weak_form"):
        D, ws = pde_problem(data, cfg)
        run.extra["test_functions"] = ws.bank.summary()
    with run.stage("selection"):
        _, _, trace, keep, model = _pde_identify(data, cfg)
        run.extra["retained"] = None if keep is None else [D.labels[i] for i in keep]
    truth = set(cfg.true_support)

    def replicate(job):
        eta, r = job
        try:
            noisy = datagen.add_noise(data, eta, datagen.replicate_seed(cfg.base_seed, r))
            _, _, _, k, _ = _pde_identify(noisy, cfg)
            return k is not None and {D.labels[i] for i in k} == truth
        except Exception as err:
            log.warning("eta=%g replicate %d failed: %s", eta, r, err)
            return False

    rows = []
    with run.stage("sweep"):
        for eta in cfg.noise_etas:
            ok = _map_replicates(replicate, [(eta, r) for r in range(cfg.replicates)], threads)
            rows.append({"eta": float(eta), "search": "gbsr", "replicates": cfg.replicates,
                         "successes": int(sum(ok)), "success_rate": float(np.mean(ok)), "errors": 0})
    with run.stage("write"):
        _write_trace(run, trace, "u")
        if model is not None:
            _write_model(run, model)
        if rows:
            _write_rows(run.path("sweep.csv"), rows,
                        ["eta", "search", "replicates", "successes", "success_rate", "errors"])
    return RunReport(run.out, run.finish(), {"u": trace}, model, rows)
