"""Validated experiment configurations.

Every model rejects unknown keys.  ``model_dump()`` of a validated config is
the fully resolved form echoed into run manifests.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

__all__ = ["ConfigError", "SystemConfig", "LibraryConfig", "WeakConfig", "SelectionConfig",
           "NoiseConfig", "SimulateConfig", "IdentifyConfig", "SearchConfig", "SweepConfig",
           "ScreenConfig", "BurgersConfig", "PdeConfig", "load_config", "TABLE1"]


class ConfigError(ValueError):
    pass


# initial conditions and time spans of the benchmark trajectories
TABLE1 = {
    "lorenz": {"x0": [-8.0, 7.0, 27.0], "t_end": 10.0, "dt": 0.01},
    "hopf": {"x0": [5.0, 0.0], "t_end": 100.0, "dt": 0.01},
    "pitchfork": {"x0": [-1.5, 1.0], "t_end": 10.0, "dt": 0.01},
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemConfig(_Strict):
    name: Literal["lorenz", "hopf", "pitchfork"]
    params: dict[str, float] = Field(default_factory=dict)
    x0: list[float] | None = None
    t_start: float = 0.0
    t_end: float | None = None
    dt: float | None = None

    @model_validator(mode="after")
    def _fill(self):
        base = TABLE1[self.name]
        if self.x0 is None:
            self.x0 = list(base["x0"])
        if self.t_end is None:
            self.t_end = base["t_end"]
        if self.dt is None:
            self.dt = base["dt"]
        if self.dt <= 0 or self.t_end <= self.t_start:
            raise ValueError("need dt > 0 and t_end > t_start")
        return self


class LibraryConfig(_Strict):
    kind: Literal["polynomial", "polytrig"] = "polynomial"
    max_degree: int = Field(3, ge=0)
    frequencies: list[int] = Field(default_factory=lambda: [1, 2])
    normalize: bool = True


class WeakConfig(_Strict):
    enabled: bool = True
    # number of test functions; when unset it is k_factor times the library size
    K: int | None = Field(None, ge=1)
    k_factor: float = Field(2.0, gt=0)
    p: int = Field(8, ge=1)
    q: int | None = Field(None, ge=1)
    support_len: float | None = Field(None, gt=0)


class SelectionConfig(_Strict):
    regressor: Literal["gbsr", "esr", "gfsr", "ssr_cv"] = "gbsr"
    kind: Literal["projected", "pareto"] = "projected"
    aggregate: Literal["sum", "sum_of_squares"] = "sum"
    scope: Literal["all", "per_coordinate"] = "all"
    policy: Literal["none", "max_ratio", "threshold"] = "max_ratio"
    eps: float | None = Field(None, gt=0)
    esr_cap: int = Field(2_000_000, ge=1)
    cv_folds: int = Field(5, ge=2)
    cv_min_norm: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.policy == "threshold" and self.eps is None:
            raise ValueError("threshold policy needs eps")
        if self.regressor == "gfsr" and self.policy == "max_ratio":
            raise ValueError("gfsr traces shrink as items are kept; use policy none or threshold")
        if self.regressor == "ssr_cv" and self.scope == "all":
            raise ValueError("ssr_cv scores one coordinate at a time; use scope=per_coordinate")
        return self


class NoiseConfig(_Strict):
    eta: float = Field(0.0, ge=0)
    seed: int = 0


class BurgersConfig(_Strict):
    n_x: int = Field(256, ge=8)
    n_steps: int = Field(200, ge=2)
    x_length: float = 2 * math.pi
    shock_fraction: float = Field(0.8, gt=0, lt=1)
    u0: Literal["sin"] = "sin"


class SimulateConfig(_Strict):
    system: SystemConfig | None = None
    burgers: BurgersConfig | None = None
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    derivatives: bool = True

    @model_validator(mode="after")
    def _one(self):
        if (self.system is None) == (self.burgers is None):
            raise ValueError("give exactly one of 'system' or 'burgers'")
        return self


class IdentifyConfig(_Strict):
    system: SystemConfig | None = None
    # trajectory CSV (t, x1..xd) to ingest instead of simulating
    input: str | None = None
    library: LibraryConfig = Field(default_factory=LibraryConfig)
    weak: WeakConfig = Field(default_factory=WeakConfig)
    selection: SelectionConfig = Field(default_factory=SelectionConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)

    @model_validator(mode="after")
    def _one(self):
        if (self.system is None) == (self.input is None):
            raise ValueError("give exactly one of 'system' or 'input'")
        return self


class SearchConfig(_Strict):
    name: str
    method: Literal["exhaustive", "gbsr"] = "exhaustive"
    coordinates: list[str] | Literal["all"] = "all"
    # kept-set size for exhaustive search; defaults to the size of the true support
    subset_size: int | None = Field(None, ge=1)
    true_support: list[str] | None = None


class SweepConfig(_Strict):
    system: SystemConfig
    library: LibraryConfig = Field(default_factory=LibraryConfig)
    weak: WeakConfig = Field(default_factory=lambda: WeakConfig(k_factor=4.0))
    etas: list[float] = Field(default_factory=lambda: [0.001, 0.01, 0.05, 0.1])
    replicates: int = Field(100, ge=1)
    base_seed: int = 0
    searches: list[SearchConfig]

    @field_validator("etas")
    @classmethod
    def _etas(cls, v):
        if not v:
            raise ValueError("eta list must not be empty")
        if any(e < 0 for e in v):
            raise ValueError("noise levels must be nonnegative")
        return v

    @field_validator("searches")
    @classmethod
    def _searches(cls, v):
        if not v:
            raise ValueError("need at least one search")
        names = [s.name for s in v]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate search names {names}")
        return v


class ScreenConfig(_Strict):
    system: SystemConfig
    library: LibraryConfig = Field(default_factory=lambda: LibraryConfig(normalize=False))
    weak: WeakConfig = Field(default_factory=lambda: WeakConfig(k_factor=4.0))
    eta: float = Field(0.05, ge=0)
    keep_fractions: list[float] = Field(default_factory=lambda: [1.0, 0.75, 0.5])
    replicates: int = Field(50, ge=1)
    base_seed: int = 0
    lam: float = Field(..., ge=0)
    max_iter: int = Field(20, ge=1)
    aggregate: Literal["sum", "sum_of_squares"] = "sum"

    @field_validator("keep_fractions")
    @classmethod
    def _fractions(cls, v):
        if not v or any(not 0 < f <= 1 for f in v):
            raise ValueError("keep fractions must lie in (0, 1]")
        return v


class PdeConfig(_Strict):
    burgers: BurgersConfig = Field(default_factory=BurgersConfig)
    # grid CSV (x, t, u) with its JSON sidecar; replaces the Burgers solver when set
    input: str | None = None
    max_power: int = Field(3, ge=1)
    max_derivative: int = Field(2, ge=0)
    space: WeakConfig = Field(default_factory=lambda: WeakConfig(K=16, p=4, support_len=1.5))
    time: WeakConfig = Field(default_factory=lambda: WeakConfig(K=8, p=4, support_len=0.3))
    normalize: bool = True
    selection: SelectionConfig = Field(default_factory=SelectionConfig)
    true_support: list[str] = Field(default_factory=lambda: ["dx(u^2)"])
    noise_etas: list[float] = Field(default_factory=list)
    replicates: int = Field(20, ge=1)
    base_seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.selection.regressor == "ssr_cv":
            raise ValueError("ssr_cv is not available for the PDE pipeline")
        return self


def load_config(source, model: type[BaseModel]) -> BaseModel:
    """Validate a JSON file path, JSON string or dict against ``model``."""
    if isinstance(source, (str, Path)) and Path(source).is_file():
        text = Path(source).read_text()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{source}: invalid JSON ({err})") from None
    elif isinstance(source, str):
        try:
            raw = json.loads(source)
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid JSON config ({err})") from None
    else:
        raw = source
    try:
        return model.model_validate(raw)
    except ValidationError as err:
        raise ConfigError(str(err)) from None
