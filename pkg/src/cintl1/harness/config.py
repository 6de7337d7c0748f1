"""Experiment configuration files.

A config is a JSON object with a ``scenario`` block (the fields of
:class:`~cintl1.scenario.Scenario`) and experiment settings.  Source
cross-ranges, mesh steps and separations are given in cross-range units
(see :func:`~cintl1.scenario.cross_range_unit`).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from ..scenario import Scenario, ScenarioError
from ..solver import SolverOptions


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class SourceConfig:
    cross_range_units: tuple[float, ...] = (-0.93, 1.07)
    range_offsets: tuple[float, ...] | None = None
    amplitudes: tuple[float, ...] | None = None
    random_phases: bool = True


@dataclass(frozen=True)
class MomentConfig:
    n: int = 10_000
    n_modes: int = 4096
    offset_over_Xd: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario = field(default_factory=Scenario)
    sources: SourceConfig = field(default_factory=SourceConfig)
    n_modes: int = 4096
    unit: str = "angular"
    homogeneous: bool = False
    kernel_constant: float | None = None
    calibration_realizations: int = 20
    delta_rel: float = 0.05
    threshold_frac: float = 0.33
    direct_l1: bool = True
    n_realizations: int = 100
    mesh_H_units: tuple[float, ...] = (1.0, 0.5, 0.25, 0.125)
    aggregation_units: float = 0.25
    separations_units: tuple[float, ...] = (0.75, 1.0, 2.0)
    sample_step_units: float | None = None
    solver: SolverOptions = field(default_factory=lambda: SolverOptions(tol=1e-7))
    moments: MomentConfig = field(default_factory=MomentConfig)

    def __post_init__(self) -> None:
        if self.n_modes < 1:
            raise ConfigError("n_modes must be positive")
        if self.unit not in ("angular", "literal"):
            raise ConfigError("unit must be 'angular' or 'literal'")
        if not 0 < self.threshold_frac < 1:
            raise ConfigError("threshold_frac must lie in (0, 1)")
        if self.delta_rel < 0:
            raise ConfigError("delta_rel must be nonnegative")
        if self.n_realizations < 1:
            raise ConfigError("n_realizations must be at least 1")
        if not self.mesh_H_units or any(h <= 0 for h in self.mesh_H_units):
            raise ConfigError("mesh_H_units must be a nonempty list of positive steps")
        if any(s <= 0 for s in self.separations_units):
            raise ConfigError("separations must be positive")
        if self.calibration_realizations < 1:
            raise ConfigError("calibration_realizations must be at least 1")
        if self.solver.method not in ("admm", "pdhg"):
            raise ConfigError(f"unknown solver method {self.solver.method!r}")

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["scenario"] = self.scenario.to_dict()
        return out

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, scenario=self.scenario.replace(master_seed=int(seed)))


def _build(cls, raw: dict, name: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"'{name}' must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown fields in '{name}': {sorted(unknown)}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**vals)
    except TypeError as exc:
        raise ConfigError(f"bad '{name}' block: {exc}") from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    try:
        scen = Scenario.from_dict(raw.pop("scenario", {}))
    except (ScenarioError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    src = _build(SourceConfig, raw.pop("sources", {}), "sources")
    sol = _build(SolverOptions, raw.pop("solver", {"tol": 1e-7}), "solver")
    mom = _build(MomentConfig, raw.pop("moments", {}), "moments")
    cfg = _build(ExperimentConfig, raw, "config")
    return replace(cfg, scenario=scen, sources=src, solver=sol, moments=mom)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return config_from_dict(raw)
