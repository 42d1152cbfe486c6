"""Initial data generators and the spherical free-fall collapse oracle.

Gravity follows ``laplacian(phi) = rho``, so a shell of radius ``r`` around
mass ``M`` feels ``r'' = -mu / r**2`` with ``mu = M / (4 pi)`` (no ``4 pi G``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import integrate

from .core import EquationOfState, makino_to_density
from .grid import CartesianGrid, support_mask
from .hyper import SystemState

__all__ = [
    "CollapseTrajectory",
    "ConfigError",
    "ScenarioConfig",
    "VelocityMode",
    "central_freefall_time",
    "collapse_oracle",
    "enclosed_mass",
    "make_scenario",
]


class ConfigError(ValueError):
    """Scenario or run configuration violates an invariant."""


PROFILES = ("diffuse_bump", "physical_vacuum_bump")
VELOCITY_KINDS = ("rest", "homologous", "rotation", "random_solenoidal")


@dataclass(frozen=True)
class VelocityMode:
    kind: str = "rest"
    H: float = 0.0
    omega: float = 0.0
    amplitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in VELOCITY_KINDS:
            raise ConfigError(f"unknown velocity mode {self.kind!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    """``amplitude`` is the peak Makino density for ``diffuse_bump`` and the
    peak density for ``physical_vacuum_bump``."""

    eos: EquationOfState
    profile: str = "diffuse_bump"
    amplitude: float = 1.0
    radius: float = 0.5
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    smoothness: int = 4
    velocity: VelocityMode = field(default_factory=VelocityMode)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        if not self.amplitude > 0:
            raise ConfigError("amplitude must be positive")
        if not self.radius > 0:
            raise ConfigError("radius must be positive")
        if self.smoothness < 1:
            raise ConfigError("smoothness k must be >= 1")
        if self.profile == "diffuse_bump":
            need = {"A": 3, "B": 4}.get(self.eos.regularity_case, 1)
            if self.smoothness < need:
                raise ConfigError(
                    f"case {self.eos.regularity_case} data need smoothness k >= {need}, "
                    f"got {self.smoothness}")


def _profile_alpha(cfg: ScenarioConfig, r: np.ndarray) -> np.ndarray:
    q = np.clip(1.0 - (r / cfg.radius) ** 2, 0.0, None)
    if cfg.profile == "diffuse_bump":
        return cfg.amplitude * q ** cfg.smoothness
    rho = cfg.amplitude * q
    return cfg.eos.makino_factor * rho ** cfg.eos.half_gm1


def _solenoidal(grid: CartesianGrid, cfg: ScenarioConfig) -> np.ndarray:
    # w = curl(A) with A a few random smooth Fourier modes times a Gaussian
    # envelope; evaluated analytically so div w vanishes up to roundoff.
    rng = np.random.default_rng(cfg.velocity.seed)
    x, y, z = grid.mesh()
    c = cfg.center
    X = [x - c[0], y - c[1], z - c[2]]
    R = cfg.radius
    env = np.exp(-(X[0] ** 2 + X[1] ** 2 + X[2] ** 2) / R ** 2)
    denv = [-2.0 * Xi / R ** 2 * env for Xi in X]
    A = []
    dA = []
    for comp in range(3):
        k = rng.normal(size=(3, 3)) * (2.0 / R)
        ph = rng.uniform(0, 2 * math.pi, size=3)
        amp = rng.normal(size=3)
        val = np.zeros_like(x)
        grad = [np.zeros_like(x) for _ in range(3)]
        for m in range(3):
            arg = k[m, 0] * X[0] + k[m, 1] * X[1] + k[m, 2] * X[2] + ph[m]
            val += amp[m] * np.sin(arg)
            for d in range(3):
                grad[d] += amp[m] * k[m, d] * np.cos(arg)
        A.append(val * env)
        dA.append([grad[d] * env + val * denv[d] for d in range(3)])
    w = np.stack([dA[2][1] - dA[1][2], dA[0][2] - dA[2][0], dA[1][0] - dA[0][1]])
    scale = cfg.velocity.amplitude / max(np.max(np.abs(w)), 1e-300)
    return w * scale


def make_scenario(cfg: ScenarioConfig, grid: CartesianGrid, check_margin: bool = True) -> SystemState:
    """Build the initial :class:`SystemState` for ``cfg`` on ``grid``."""
    r = grid.radius(cfg.center)
    alpha = _profile_alpha(cfg, r)
    x, y, z = grid.mesh()
    X = np.stack([x - cfg.center[0], y - cfg.center[1], z - cfg.center[2]])
    vm = cfg.velocity
    if vm.kind == "rest":
        w = np.zeros_like(X)
    elif vm.kind == "homologous":
        w = vm.H * X
    elif vm.kind == "rotation":
        w = np.stack([-vm.omega * X[1], vm.omega * X[0], np.zeros_like(x)])
    else:
        w = _solenoidal(grid, cfg)
    state = SystemState(grid, alpha, w, cfg.eos, 0.0)
    state.fill_ghosts()
    if check_margin:
        margin = grid.margin_cells(support_mask(alpha, 0.0, grid))
        if margin < 2:
            raise ConfigError(f"initial support is only {margin} cells from the box edge (need 2)")
    return state


# ---------------------------------------------------------------------------
# collapse oracle


@dataclass
class CollapseTrajectory:
    t: np.ndarray
    r: np.ndarray
    v: np.ndarray
    t_collapse: Optional[float]
    mu: float

    def energy(self) -> np.ndarray:
        return 0.5 * self.v ** 2 - self.mu / self.r


def collapse_oracle(M: float, r0: float, v0: float = 0.0, t_max: Optional[float] = None,
                    r_stop: float = 1e-6) -> CollapseTrajectory:
    """Integrate ``r'' = -M / (4 pi r**2)`` from ``r(0) = r0, r'(0) = v0``.

    Stops when ``r`` drops below ``r_stop * r0`` (collapse; ``t_collapse`` is
    the time ``r`` reaches zero, extrapolated from the terminal
    ``r ~ (t_c - t)**(2/3)`` law) or at ``t_max`` (default: 20 free-fall times).
    """
    if not (M > 0 and r0 > 0):
        raise ValueError("M and r0 must be positive")
    mu = M / (4.0 * math.pi)
    t_ff = 0.5 * math.pi * r0 ** 1.5 / math.sqrt(2.0 * mu)
    if t_max is None:
        t_max = 20.0 * t_ff

    def f(t, y):
        return [y[1], -mu / y[0] ** 2]

    def hit(t, y):
        return y[0] - r_stop * r0

    hit.terminal = True
    hit.direction = -1
    sol = integrate.solve_ivp(f, (0.0, t_max), [r0, v0], method="DOP853", rtol=1e-13,
                              atol=1e-15 * r0, events=hit, dense_output=False)
    t, r, v = sol.t, sol.y[0], sol.y[1]
    t_c = None
    if sol.t_events[0].size:
        # near collapse r = (9 mu / 2)^(1/3) (t_c - t)^(2/3)
        re = sol.y_events[0][0][0]
        t_c = float(sol.t_events[0][0] + re ** 1.5 / (1.5 * math.sqrt(2.0 * mu)))
    return CollapseTrajectory(t, r, v, t_c, mu)


def freefall_time(M: float, r0: float) -> float:
    """Closed form for the cold collapse time ``(pi/2) r0**1.5 / sqrt(2 mu)``."""
    return 0.5 * math.pi * r0 ** 1.5 / math.sqrt(2.0 * M / (4.0 * math.pi))


def enclosed_mass(cfg: ScenarioConfig, r: float) -> float:
    """Mass of the analytic profile inside radius ``r`` (radial quadrature)."""

    def dens(s):
        a = _profile_alpha(cfg, np.asarray(s))
        return makino_to_density(a, cfg.eos) * 4.0 * math.pi * s * s

    upper = min(r, cfg.radius)
    val, _ = integrate.quad(dens, 0.0, upper, epsabs=0.0, epsrel=1e-12, limit=200)
    return float(val)


def central_freefall_time(cfg: ScenarioConfig, fraction: float = 1.0 / 16.0) -> float:
    """Pressureless collapse time of the shell at ``fraction * radius``.

    For centrally concentrated profiles the innermost shells collapse first,
    so this is the earliest singularity time of cold collapse.
    """
    r0 = fraction * cfg.radius
    traj = collapse_oracle(enclosed_mass(cfg, r0), r0, 0.0)
    return traj.t_collapse
