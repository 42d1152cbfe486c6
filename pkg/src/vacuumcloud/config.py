"""Strict TOML run configuration.

Every block is optional except ``[eos]`` and ``[scenario]``; unknown keys
anywhere are rejected.  All module invariants are re-checked on load and
reported as :class:`~vacuumcloud.scenarios.ConfigError`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .core import DomainError, EquationOfState
from .diagnostics import Thresholds
from .grid import CartesianGrid
from .scenarios import ConfigError, ScenarioConfig, VelocityMode

__all__ = [
    "ControlSettings",
    "DiagnosticsSettings",
    "GridSettings",
    "OutputSettings",
    "RunConfig",
    "load_config",
    "parse_config",
]


@dataclass(frozen=True)
class GridSettings:
    n: int = 32
    lower: float = -1.0
    upper: float = 1.0

    def build(self) -> CartesianGrid:
        return CartesianGrid.cube(self.n, self.lower, self.upper)


@dataclass(frozen=True)
class ControlSettings:
    cfl: float = 0.4
    t_end: float = 0.3
    dt_min: Optional[float] = None
    floor: Optional[float] = None  # absolute; default is floor_relative * max(alpha0)
    floor_relative: float = 1e-12
    dissipation: float = 0.0
    gravity: str = "fft"
    max_steps: Optional[int] = None


@dataclass(frozen=True)
class DiagnosticsSettings:
    cadence: int = 1
    epsilon_cells: Tuple[float, ...] = (2.0, 3.0, 5.0)
    primary_epsilon: float = 3.0
    window: int = 8
    thresholds: Thresholds = field(default_factory=Thresholds)
    boundary_markers: int = 100
    interior_markers: int = 100
    seed: int = 0
    sobolev_order: int = 3


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "run"
    snapshot_interval: float = 0.0  # 0 keeps only the initial and final snapshots
    figures: bool = True


@dataclass(frozen=True)
class RunConfig:
    grid: GridSettings
    eos: EquationOfState
    scenario: ScenarioConfig
    control: ControlSettings
    diagnostics: DiagnosticsSettings
    output: OutputSettings
    raw: Dict[str, Any] = field(default_factory=dict, compare=False)


def _take(block: Dict[str, Any], cls, where: str, convert: Optional[Dict[str, Any]] = None):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(block) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kwargs = dict(block)
    for key, fn in (convert or {}).items():
        if key in kwargs:
            kwargs[key] = fn(kwargs[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


def _check_keys(block: Dict[str, Any], allowed, where: str) -> None:
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")


def parse_config(data: Dict[str, Any]) -> RunConfig:
    _check_keys(data, ("grid", "eos", "scenario", "control", "diagnostics", "output"), "top level")
    for required in ("eos", "scenario"):
        if required not in data:
            raise ConfigError(f"missing [{required}] block")

    grid = _take(data.get("grid", {}), GridSettings, "grid")
    try:
        grid_obj = grid.build()
    except ValueError as exc:
        raise ConfigError(f"[grid]: {exc}") from exc

    eos_block = dict(data["eos"])
    _check_keys(eos_block, ("K", "gamma", "case"), "eos")
    try:
        eos = EquationOfState(float(eos_block.get("K", 1.0)), float(eos_block.get("gamma", 2.0)),
                              eos_block.get("case"))
    except (DomainError, TypeError) as exc:
        raise ConfigError(f"[eos]: {exc}") from exc

    sc = dict(data["scenario"])
    vel = _take(sc.pop("velocity", {}), VelocityMode, "scenario.velocity")
    _check_keys(sc, ("profile", "amplitude", "radius", "center", "smoothness"), "scenario")
    if "center" in sc:
        sc["center"] = tuple(float(c) for c in sc["center"])
        if len(sc["center"]) != 3:
            raise ConfigError("[scenario]: center needs three coordinates")
    try:
        scenario = ScenarioConfig(eos=eos, velocity=vel, **sc)
    except TypeError as exc:
        raise ConfigError(f"[scenario]: {exc}") from exc

    control = _take(data.get("control", {}), ControlSettings, "control")
    if not 0.0 < control.cfl <= 1.0:
        raise ConfigError(f"[control]: cfl must lie in (0, 1], got {control.cfl}")
    if control.t_end < 0:
        raise ConfigError("[control]: t_end must be non-negative")
    if control.dt_min is not None and not control.dt_min > 0:
        raise ConfigError("[control]: dt_min must be positive")
    if control.floor is not None and control.floor < 0:
        raise ConfigError("[control]: floor must be non-negative")
    if control.gravity not in ("fft", "direct", "none"):
        raise ConfigError(f"[control]: gravity must be fft, direct or none, got {control.gravity!r}")

    diag_block = dict(data.get("diagnostics", {}))
    thr = diag_block.pop("thresholds", {})
    thresholds = _take(thr, Thresholds, "diagnostics.thresholds")
    diag = _take(diag_block, DiagnosticsSettings, "diagnostics",
                 {"epsilon_cells": lambda v: tuple(float(e) for e in v)})
    diag = dataclasses.replace(diag, thresholds=thresholds)
    if diag.cadence < 1 or diag.window < 2:
        raise ConfigError("[diagnostics]: cadence must be >= 1 and window >= 2")
    if not diag.epsilon_cells or min(diag.epsilon_cells) <= 0:
        raise ConfigError("[diagnostics]: epsilon_cells must be a non-empty list of positive values")
    if diag.primary_epsilon not in diag.epsilon_cells:
        raise ConfigError("[diagnostics]: primary_epsilon must be one of epsilon_cells")
    if diag.boundary_markers < 0 or diag.interior_markers < 0:
        raise ConfigError("[diagnostics]: marker counts must be non-negative")
    if not 1 <= diag.sobolev_order <= 4:
        raise ConfigError("[diagnostics]: sobolev_order must be between 1 and 4")

    output = _take(data.get("output", {}), OutputSettings, "output")
    if output.snapshot_interval < 0:
        raise ConfigError("[output]: snapshot_interval must be non-negative")

    cfg = RunConfig(grid, eos, scenario, control, diag, output, raw=data)
    # the initial support margin is a scenario invariant
    from .scenarios import make_scenario

    make_scenario(scenario, grid_obj)
    return cfg


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)
