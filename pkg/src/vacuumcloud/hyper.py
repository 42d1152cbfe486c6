"""Method-of-lines evolution of the Makino-variable Euler-Poisson system.

Unknowns are the Makino density ``alpha`` and the velocity ``w`` on the whole
box; vacuum needs no special treatment because the system stays regular at
``alpha = 0`` and the velocity there obeys pure free fall.

Spatial discretisation (second order, central):

    d_t alpha = -(1 - s) w.D(alpha) - s D.(alpha w) - (theta - s) alpha D.w
    d_t w^k   = -w.D(w^k) - theta alpha D_k(alpha) + g^k

with ``theta = (gamma-1)/2`` and split weight ``s = min(theta, 1)``.  For
``gamma = 2`` this is the skew-symmetric split of the alpha transport, under
which the central scheme conserves ``sum(alpha**2)`` (hence mass) exactly.
An optional fourth-difference (Kreiss-Oliger) term with coefficient
``dissipation`` damps grid-scale modes.  Time stepping is the three-stage
third-order SSP Runge-Kutta method with a fresh gravity solve per stage.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from .core import EquationOfState
from .grid import CartesianGrid, ContractViolation, fill_ghosts
from .gravity import GravityDomainError, solve_potential

log = logging.getLogger(__name__)

__all__ = [
    "BlowupSuspected",
    "GravitySolver",
    "RunResult",
    "StepControl",
    "SystemState",
    "density",
    "fft_gravity",
    "mms_residual",
    "rhs",
    "run",
    "stable_dt",
    "step",
]

COMPLETED = "completed"
BLOWUP = "blowup-suspected"
CORRUPTED = "corrupted-state"


class BlowupSuspected(RuntimeError):
    """The stable time step fell below ``dt_min``."""


@dataclass
class SystemState:
    grid: CartesianGrid
    alpha: np.ndarray
    w: np.ndarray
    eos: EquationOfState
    time: float = 0.0
    boundary: str = "vacuum"
    clipped_mass: float = 0.0

    def __post_init__(self):
        if self.alpha.shape != self.grid.shape or self.w.shape != (3,) + self.grid.shape:
            raise ValueError("state arrays do not match the grid")
        if self.boundary not in ("vacuum", "periodic"):
            raise ValueError(f"unknown boundary mode {self.boundary!r}")

    def copy(self) -> "SystemState":
        return replace(self, alpha=self.alpha.copy(), w=self.w.copy())

    def fill_ghosts(self) -> "SystemState":
        g = self.grid.ghost
        if self.boundary == "periodic":
            fill_ghosts(self.alpha, g, "periodic")
            fill_ghosts(self.w, g, "periodic")
        else:
            fill_ghosts(self.alpha, g, "zero")
            fill_ghosts(self.w, g, "extrapolate")
        return self

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.alpha)) and np.all(np.isfinite(self.w)))


def density(alpha: np.ndarray, eos: EquationOfState) -> np.ndarray:
    """Density from (possibly slightly negative) Makino density; negatives map to 0."""
    return eos.density_scale * np.maximum(alpha, 0.0) ** eos.density_exponent


@dataclass
class StepControl:
    cfl: float = 0.4
    t_end: float = 1.0
    dt_min: Optional[float] = None
    floor: float = 0.0
    dissipation: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.cfl <= 1.0):
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.dt_min is not None and not self.dt_min > 0:
            raise ValueError("dt_min must be positive")
        if self.floor < 0:
            raise ValueError("floor must be non-negative")
        if self.dissipation < 0:
            raise ValueError("dissipation must be non-negative")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")


# A gravity solver maps a density array to an acceleration field (3, *shape),
# or is None for gravity-free runs.
GravitySolver = Optional[Callable[[np.ndarray, CartesianGrid], np.ndarray]]


def fft_gravity(rho: np.ndarray, grid: CartesianGrid) -> np.ndarray:
    # the support margin is checked once per step by the driver, not per stage
    return solve_potential(rho, grid, "fft", check_margin=False).g.values


def _diff(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.zeros_like(a)
    src = np.moveaxis(a, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    dst[1:-1] = (src[2:] - src[:-2]) * (0.5 / h)
    return out


def _fourth_diff(a: np.ndarray, axis: int) -> np.ndarray:
    out = np.zeros_like(a)
    src = np.moveaxis(a, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    dst[2:-2] = src[:-4] - 4.0 * src[1:-3] + 6.0 * src[2:-2] - 4.0 * src[3:-1] + src[4:]
    return out


def char_speeds(state: SystemState) -> np.ndarray:
    """Per-axis maximum of ``|w^i| + (gamma-1)/2 alpha`` over the physical cells."""
    sl = state.grid.interior
    cs = state.eos.half_gm1 * np.abs(state.alpha[sl])
    return np.array([np.max(np.abs(state.w[d][sl]) + cs) for d in range(3)])


def rhs(state: SystemState, g: Optional[np.ndarray], dissipation: float = 0.0):
    """Semi-discrete time derivative ``(d alpha/dt, d w/dt)``.

    Ghosts of ``state`` must already be filled.  ``g`` is the gravitational
    acceleration ``-grad(phi)`` on the ghosted array, or ``None``.
    """
    alpha, w = state.alpha, state.w
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(w))):
        raise ContractViolation("non-finite values in state")
    if g is not None and not np.all(np.isfinite(g)):
        raise ContractViolation("non-finite values in gravity field")
    grid = state.grid
    h = grid.spacing
    theta = state.eos.half_gm1
    s = min(theta, 1.0)

    div_w = np.zeros_like(alpha)
    adv = np.zeros_like(alpha)
    div_flux = np.zeros_like(alpha)
    dw = np.zeros_like(w)
    grad_alpha = [_diff(alpha, d, h[d]) for d in range(3)]
    for d in range(3):
        div_w += _diff(w[d], d, h[d])
        adv += w[d] * grad_alpha[d]
        div_flux += _diff(alpha * w[d], d, h[d])
    dalpha = -(1.0 - s) * adv - s * div_flux
    if theta != s:
        dalpha -= (theta - s) * alpha * div_w

    for k in range(3):
        acc = np.zeros_like(alpha)
        for d in range(3):
            acc += w[d] * _diff(w[k], d, h[d])
        dw[k] = -acc - theta * alpha * grad_alpha[k]
        if g is not None:
            dw[k] += g[k]

    if dissipation > 0.0:
        speeds = char_speeds(state)
        for d in range(3):
            coef = dissipation * speeds[d] / (16.0 * h[d])
            if coef == 0.0:
                continue
            dalpha -= coef * _fourth_diff(alpha, d)
            for k in range(3):
                dw[k] -= coef * _fourth_diff(w[k], d)

    # ghost layers carry no valid tendency
    mask = np.ones(grid.shape, dtype=bool)
    mask[grid.interior] = False
    dalpha[mask] = 0.0
    dw[:, mask] = 0.0
    return dalpha, dw


def stable_dt(state: SystemState, control: StepControl, t_stop: Optional[float] = None,
              g: Optional[np.ndarray] = None) -> float:
    """CFL step ``cfl / sum_i(lambda_i / h_i)``, capped at the next stop time.

    With a gravity field ``g`` the step is also limited to
    ``cfl * sqrt(h_min / max|g|)``, so a cold cloud starting at rest does not
    take one huge first step.
    """
    speeds = char_speeds(state)
    if not np.all(np.isfinite(speeds)):
        raise BlowupSuspected("non-finite characteristic speed")
    rate = float(sum(lam / h for lam, h in zip(speeds, state.grid.spacing)))
    dt = control.cfl / rate if rate > 0 else math.inf
    if g is not None:
        gmax = float(np.max(np.sqrt(np.sum(g[(slice(None),) + state.grid.interior] ** 2, axis=0))))
        if not math.isfinite(gmax):
            raise BlowupSuspected("non-finite gravitational acceleration")
        if gmax > 0:
            dt = min(dt, control.cfl * math.sqrt(state.grid.min_spacing / gmax))
    if control.dt_min is not None and dt < control.dt_min:
        raise BlowupSuspected(f"stable dt {dt:.3e} fell below dt_min {control.dt_min:.3e}")
    stop = control.t_end if t_stop is None else min(t_stop, control.t_end)
    remaining = stop - state.time
    if remaining > 0:
        dt = min(dt, remaining)
    return dt


def _stage(state: SystemState, gravity: GravitySolver, dissipation: float, source, t: float, g=None):
    state.fill_ghosts()
    if g is None and gravity is not None:
        g = gravity(density(state.alpha, state.eos), state.grid)
    da, dw = rhs(state, g, dissipation)
    if source is not None:
        sa, sw = source(t, state.grid)
        da = da + sa
        dw = dw + sw
    return da, dw


def step(state: SystemState, control: StepControl, gravity: GravitySolver,
         dt: Optional[float] = None, source=None, g0: Optional[np.ndarray] = None) -> SystemState:
    """Advance one SSPRK3 step and clip ``alpha`` below ``control.floor`` to zero.

    ``source(t, grid) -> (s_alpha, s_w)`` adds a forcing term (used by the
    manufactured-solution harness).  ``g0`` is a precomputed gravity field
    for the first stage.
    """
    if dt is None:
        dt = stable_dt(state, control)
    t0 = state.time
    sigma = control.dissipation
    u0 = state.copy()

    da, dw = _stage(u0, gravity, sigma, source, t0, g0)
    u1 = replace(u0, alpha=u0.alpha + dt * da, w=u0.w + dt * dw)
    da, dw = _stage(u1, gravity, sigma, source, t0 + dt)
    u2 = replace(u0, alpha=0.75 * u0.alpha + 0.25 * (u1.alpha + dt * da),
                 w=0.75 * u0.w + 0.25 * (u1.w + dt * dw))
    da, dw = _stage(u2, gravity, sigma, source, t0 + 0.5 * dt)
    alpha = u0.alpha / 3.0 + 2.0 / 3.0 * (u2.alpha + dt * da)
    w = u0.w / 3.0 + 2.0 / 3.0 * (u2.w + dt * dw)

    clip = alpha < control.floor if control.floor > 0 else alpha < 0.0
    clipped = 0.0
    if np.any(clip):
        lost = np.abs(alpha[clip])
        clipped = float(np.sum(state.eos.density_scale * lost ** state.eos.density_exponent))
        clipped *= state.grid.cell_volume
        alpha[clip] = 0.0
    out = replace(u0, alpha=alpha, w=w, time=t0 + dt, clipped_mass=state.clipped_mass + clipped)
    return out.fill_ghosts()


# ---------------------------------------------------------------------------
# driver


@dataclass
class RunResult:
    final: SystemState
    verdict: str
    reason: str = ""
    steps: int = 0
    times: List[float] = field(default_factory=list)


Hook = Callable[[SystemState, int, float], Optional[str]]


def run(initial: SystemState, control: StepControl, hooks: Sequence[Hook] = (),
        gravity: GravitySolver = fft_gravity, cadence: int = 1,
        stop_times: Sequence[float] = (), max_steps: Optional[int] = None) -> RunResult:
    """Step ``initial`` to ``control.t_end`` or until a verdict.

    Hooks are called as ``hook(state, step_index, dt)`` on the initial state
    (with ``dt = 0``), every ``cadence`` steps, and on the final state.  A hook
    returning a non-empty string halts the run with verdict
    ``blowup-suspected`` and that string as reason.  ``stop_times`` are
    landed on exactly (snapshot times).
    """
    state = initial.copy().fill_ghosts()
    times = [state.time]
    stops = sorted(t for t in stop_times if t > state.time)

    def call_hooks(s, n, dt):
        for hook in hooks:
            reason = hook(s, n, dt)
            if reason:
                return reason
        return None

    reason = call_hooks(state, 0, 0.0)
    if reason:
        return RunResult(state, BLOWUP, reason, 0, times)

    ctl = control
    if ctl.dt_min is None and state.time < ctl.t_end:
        g_init = gravity(density(state.alpha, state.eos), state.grid) if gravity is not None else None
        dt0 = stable_dt(state, replace(ctl, dt_min=None), g=g_init)
        ctl = replace(ctl, dt_min=1e-10 * dt0)

    n = 0
    last_hooked = 0
    eps_t = 1e-12 * max(1.0, abs(ctl.t_end))
    while state.time < ctl.t_end - eps_t:
        if max_steps is not None and n >= max_steps:
            break
        while stops and stops[0] <= state.time + eps_t:
            stops.pop(0)
        try:
            g0 = gravity(density(state.alpha, state.eos), state.grid) if gravity is not None else None
            dt = stable_dt(state, ctl, stops[0] if stops else None, g0)
            new = step(state, ctl, gravity, dt, g0=g0)
        except BlowupSuspected as exc:
            return RunResult(state, BLOWUP, f"dt-underflow: {exc}", n, times)
        except GravityDomainError as exc:
            return RunResult(state, CORRUPTED, f"gravity: {exc}", n, times)
        if not new.is_finite():
            return RunResult(state, CORRUPTED, "non-finite values after step", n, times)
        if new.boundary == "vacuum" and gravity is not None:
            if new.grid.margin_cells(new.alpha[new.grid.interior] > 0) < 2:
                return RunResult(state, CORRUPTED, "support reached box edge", n, times)
        n += 1
        if abs(new.time - ctl.t_end) <= eps_t:
            new.time = ctl.t_end
        for t in stops:
            if abs(new.time - t) <= eps_t:
                new.time = t
        state = new
        times.append(state.time)
        if n % cadence == 0 or state.time >= ctl.t_end - eps_t:
            last_hooked = n
            reason = call_hooks(state, n, dt)
            if reason:
                return RunResult(state, BLOWUP, reason, n, times)
    if last_hooked != n:
        reason = call_hooks(state, n, 0.0)
        if reason:
            return RunResult(state, BLOWUP, reason, n, times)
    return RunResult(state, COMPLETED, "", n, times)

def mms_residual(resolutions, solution_id: str = "trig", **kwargs):
    """See :func:`vacuumcloud.mms.mms_residual`."""
    from .mms import mms_residual as _mms

    return _mms(resolutions, solution_id, **kwargs)
