"""Manufactured-solution verification of the gravity-free evolution operator.

Each registered solution supplies exact fields and the forcing that makes
them solve the forced system on the periodic unit box.  ``mms_residual``
evolves the exact initial data with that forcing and reports the error at
the final time for a sequence of resolutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import sympy as sp

from .core import EquationOfState
from .grid import CartesianGrid

__all__ = ["MMSTable", "ManufacturedSolution", "mms_residual", "registered_solutions"]


@dataclass(frozen=True)
class ManufacturedSolution:
    name: str
    gamma: float
    exact: Callable[[float, CartesianGrid], Tuple[np.ndarray, np.ndarray]]
    source: Callable[[float, CartesianGrid], Tuple[np.ndarray, np.ndarray]]
    t_end: float


@dataclass
class MMSTable:
    solution: str
    resolutions: List[int]
    l1: List[float] = field(default_factory=list)
    linf: List[float] = field(default_factory=list)
    order_l1: List[float] = field(default_factory=list)
    order_linf: List[float] = field(default_factory=list)

    def rows(self) -> List[dict]:
        out = []
        for i, n in enumerate(self.resolutions):
            row = {"n": n, "l1": self.l1[i], "linf": self.linf[i]}
            if i > 0:
                row["order_l1"] = self.order_l1[i - 1]
                row["order_linf"] = self.order_linf[i - 1]
            out.append(row)
        return out


def _trig_fields():
    x, y, z, t = sp.symbols("x y z t", real=True)
    tp = 2 * sp.pi
    alpha = 1 + sp.Rational(1, 5) * sp.sin(tp * x + t) * sp.cos(tp * y) + sp.Rational(1, 10) * sp.cos(tp * z - 2 * t)
    w = [
        sp.Rational(1, 5) * sp.sin(tp * y - t) + sp.Rational(1, 10) * sp.cos(tp * z),
        sp.Rational(3, 20) * sp.cos(tp * x + 2 * t) * sp.sin(tp * z),
        sp.Rational(1, 10) * sp.sin(tp * (x + y) + t),
    ]
    return (x, y, z, t), alpha, w


@lru_cache(maxsize=None)
def _trig_solution(gamma: float) -> ManufacturedSolution:
    (x, y, z, t), alpha, w = _trig_fields()
    X = (x, y, z)
    theta = sp.nsimplify(gamma - 1) / 2
    div_w = sum(sp.diff(w[i], X[i]) for i in range(3))
    s_alpha = sp.diff(alpha, t) + sum(w[i] * sp.diff(alpha, X[i]) for i in range(3)) + theta * alpha * div_w
    s_w = [sp.diff(w[k], t) + sum(w[i] * sp.diff(w[k], X[i]) for i in range(3))
           + theta * alpha * sp.diff(alpha, X[k]) for k in range(3)]
    args = (x, y, z, t)
    f_exact = sp.lambdify(args, [alpha] + w, "numpy")
    f_src = sp.lambdify(args, [s_alpha] + s_w, "numpy")

    def _eval(fn, tt, grid):
        X3 = grid.mesh()
        vals = [np.broadcast_to(v, grid.shape).astype(float) for v in fn(*X3, tt)]
        return vals[0], np.stack(vals[1:])

    return ManufacturedSolution(
        name="trig", gamma=gamma,
        exact=lambda tt, grid: _eval(f_exact, tt, grid),
        source=lambda tt, grid: _eval(f_src, tt, grid),
        t_end=0.1,
    )


def _steady_discrete_solution(gamma: float) -> ManufacturedSolution:
    # time-independent fields; the forcing cancels the discrete operator exactly
    from .hyper import SystemState, rhs

    (x, y, z, t), alpha, w = _trig_fields()
    f = sp.lambdify((x, y, z, t), [alpha] + w, "numpy")
    eos = EquationOfState(1.0, gamma)

    def exact(tt, grid):
        vals = [np.broadcast_to(v, grid.shape).astype(float) for v in f(*grid.mesh(), 0.0)]
        return vals[0], np.stack(vals[1:])

    cache: Dict[tuple, Tuple[np.ndarray, np.ndarray]] = {}

    def source(tt, grid):
        key = (grid.dims, grid.spacing)
        if key not in cache:
            a, v = exact(0.0, grid)
            st = SystemState(grid, a.copy(), v.copy(), eos, boundary="periodic").fill_ghosts()
            da, dw = rhs(st, None)
            cache[key] = (-da, -dw)
        return cache[key]

    return ManufacturedSolution("steady-discrete", gamma, exact, source, t_end=0.1)


def registered_solutions() -> Tuple[str, ...]:
    return ("trig", "steady-discrete")


def _lookup(solution_id: str, gamma: float) -> ManufacturedSolution:
    if solution_id == "trig":
        return _trig_solution(float(gamma))
    if solution_id == "steady-discrete":
        return _steady_discrete_solution(float(gamma))
    raise KeyError(f"no manufactured solution named {solution_id!r}; known: {registered_solutions()}")


def periodic_unit_grid(n: int) -> CartesianGrid:
    h = 1.0 / n
    return CartesianGrid((n, n, n), (h, h, h), (0.5 * h,) * 3)


def mms_residual(resolutions: Sequence[int], solution_id: str = "trig", gamma: float = 2.0,
                 cfl: float = 0.4, t_end: float | None = None) -> MMSTable:
    """Errors at ``t_end`` of the forced evolution started from exact data.

    The time step is fixed per resolution at ``cfl * h / 3`` (then shrunk to
    land on ``t_end``), so it refines in proportion to ``h``.  Errors combine
    ``alpha`` and all velocity components: L1 is the volume-weighted sum,
    L-infinity the maximum.  Observed orders are ``log2(e_h / e_{h/2})``
    scaled by the actual resolution ratio.
    """
    from .hyper import StepControl, SystemState, step

    sol = _lookup(solution_id, gamma)
    T = sol.t_end if t_end is None else float(t_end)
    eos = EquationOfState(1.0, sol.gamma)
    table = MMSTable(sol.name, [int(n) for n in resolutions])
    for n in table.resolutions:
        grid = periodic_unit_grid(n)
        a0, w0 = sol.exact(0.0, grid)
        state = SystemState(grid, a0.copy(), w0.copy(), eos, boundary="periodic").fill_ghosts()
        speed = 3.0 * float(np.max(np.abs(w0)) + eos.half_gm1 * np.max(a0))
        nsteps = max(1, int(np.ceil(T / (cfl * grid.spacing[0] / speed))))
        dt = T / nsteps
        ctl = StepControl(cfl=cfl, t_end=T)
        for _ in range(nsteps):
            state = step(state, ctl, None, dt=dt, source=sol.source)
        a1, w1 = sol.exact(T, grid)
        sl = grid.interior
        err = np.concatenate([np.abs(state.alpha[sl] - a1[sl])[None], np.abs(state.w[(slice(None),) + sl] - w1[(slice(None),) + sl])])
        table.l1.append(float(err.sum() * grid.cell_volume))
        table.linf.append(float(err.max()))
    for i in range(1, len(table.resolutions)):
        ratio = np.log(table.resolutions[i] / table.resolutions[i - 1])
        table.order_l1.append(float(np.log(table.l1[i - 1] / table.l1[i]) / ratio))
        table.order_linf.append(float(np.log(table.linf[i - 1] / table.linf[i]) / ratio))
    return table
