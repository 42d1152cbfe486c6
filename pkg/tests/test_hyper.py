import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vacuumcloud.core import EquationOfState
from vacuumcloud.grid import CartesianGrid, ContractViolation, complement_distance
from vacuumcloud.hyper import (
    BlowupSuspected,
    StepControl,
    SystemState,
    fft_gravity,
    mms_residual,
    rhs,
    run,
    stable_dt,
    step,
)

EOS2 = EquationOfState(1.0, 2.0)


def _state(grid, alpha, w=None, boundary="vacuum", eos=EOS2):
    w = np.zeros((3,) + grid.shape) if w is None else w
    return SystemState(grid, alpha, w, eos, boundary=boundary).fill_ghosts()


def _line_grid(n):
    h = 1.0 / n
    return CartesianGrid((n, 4, 4), (h, h, h), (0.5 * h,) * 3)


def test_rhs_vacuum_rest_is_zero():
    g = CartesianGrid.cube(8)
    s = _state(g, g.zeros())
    da, dw = rhs(s, None)
    assert not da.any() and not dw.any()


def test_rhs_constant_periodic_state_is_zero():
    g = CartesianGrid.cube(8)
    s = _state(g, np.full(g.shape, 0.7), boundary="periodic")
    da, dw = rhs(s, None)
    assert not da.any() and not dw.any()
    # the dissipation stencil cancels only to roundoff
    da, dw = rhs(s, None, dissipation=0.5)
    assert np.max(np.abs(da)) < 1e-13 and not dw.any()


def test_rhs_vacuum_cells_fall_freely():
    g = CartesianGrid.cube(8)
    acc = np.zeros((3,) + g.shape)
    acc[0] = -0.3
    _, dw = rhs(_state(g, g.zeros()), acc)
    np.testing.assert_array_equal(dw[0][g.interior], -0.3)
    assert not dw[1:].any()


def test_rhs_rejects_nan():
    g = CartesianGrid.cube(8)
    a = g.zeros()
    a[4, 4, 4] = np.nan
    with pytest.raises(ContractViolation):
        rhs(SystemState(g, a, np.zeros((3,) + g.shape), EOS2), None)


def test_stable_dt_worked_examples():
    g = CartesianGrid((8, 8, 8), (0.1, 0.1, 0.1), (0.05,) * 3)
    w = np.zeros((3,) + g.shape)
    w[0][g.interior] = 2.0
    s = _state(g, g.zeros(), w)
    assert stable_dt(s, StepControl(cfl=0.5, t_end=10.0)) == pytest.approx(0.025, rel=1e-14)
    s = _state(g, np.full(g.shape, 2.0), boundary="periodic")
    assert stable_dt(s, StepControl(cfl=0.3, t_end=10.0)) == pytest.approx(0.01, rel=1e-14)
    # capped at t_end
    assert stable_dt(s, StepControl(cfl=0.3, t_end=0.004)) == pytest.approx(0.004)


def test_stable_dt_errors():
    g = CartesianGrid.cube(8)
    a = g.zeros()
    a[g.interior] = 1.0
    a[5, 5, 5] = np.inf
    s = SystemState(g, a, np.zeros((3,) + g.shape), EOS2)
    with pytest.raises(BlowupSuspected):
        stable_dt(s, StepControl())
    s = _state(g, np.full(g.shape, 1e6), boundary="periodic")
    with pytest.raises(BlowupSuspected, match="dt_min"):
        stable_dt(s, StepControl(dt_min=1e-3))


def test_step_vacuum_rest_fixed_point():
    g = CartesianGrid.cube(8)
    s = _state(g, g.zeros())
    out = step(s, StepControl(), fft_gravity, dt=0.1)
    assert not out.alpha.any() and not out.w.any()
    assert out.time == pytest.approx(0.1) and out.clipped_mass == 0.0


def _crest_phase(alpha):
    line = alpha[2:-2, 4, 4]
    return np.angle(np.fft.rfft(line - line.mean())[1])


def test_acoustic_crest_speed_128():
    n, a0, eps = 128, 1.0, 1e-4
    g = _line_grid(n)
    x = g.mesh()[0]
    alpha = a0 + eps * np.sin(2 * np.pi * x)
    w = np.zeros((3,) + g.shape)
    w[0] = eps * np.sin(2 * np.pi * x)  # right-moving simple wave
    s = _state(g, alpha, w, boundary="periodic")
    T = 0.8
    res = run(s, StepControl(cfl=0.4, t_end=T), gravity=None)
    assert res.verdict == "completed"
    shift = (_crest_phase(s.alpha) - _crest_phase(res.final.alpha)) % (2 * np.pi)
    speed = shift / (2 * np.pi * T)
    c_s = EOS2.half_gm1 * a0
    assert speed == pytest.approx(c_s, rel=0.02)


def _nonlinear_line(n, T):
    g = _line_grid(n)
    x = g.mesh()[0]
    alpha = 1.0 + 0.2 * np.sin(2 * np.pi * x)
    w = np.zeros((3,) + g.shape)
    w[0] = 0.1 * np.cos(2 * np.pi * x)
    w[1] = 0.05 * np.sin(4 * np.pi * x)
    s = _state(g, alpha, w, boundary="periodic")
    ctl = StepControl(cfl=0.2, t_end=T)
    out = run(s, ctl, gravity=None).final
    sl = g.interior
    return np.concatenate([out.alpha[sl][:, 0, 0][None], out.w[(slice(None),) + sl][:, :, 0, 0]])


def _restrict(u):
    return 0.5 * (u[:, 0::2] + u[:, 1::2])


def test_self_convergence_second_order():
    T = 0.25
    u1, u2, u4 = (_nonlinear_line(n, T) for n in (32, 64, 128))
    e1 = np.abs(u1 - _restrict(u2)).sum() / 32
    e2 = np.abs(u2 - _restrict(u4)).sum() / 64
    assert math.log2(e1 / e2) >= 1.9


def test_galilean_shift():
    U0, T = 0.25, 0.5

    def error(n):
        g = _line_grid(n)
        x = g.mesh()[0]
        alpha = 1.0 + 0.2 * np.sin(2 * np.pi * x)
        w = np.zeros((3,) + g.shape)
        w[0] = 0.1 * np.cos(2 * np.pi * x)
        ctl = StepControl(cfl=0.2, t_end=T)
        base = run(_state(g, alpha.copy(), w.copy(), boundary="periodic"), ctl, gravity=None).final
        w[0] += U0
        moved = run(_state(g, alpha, w, boundary="periodic"), ctl, gravity=None).final
        cells = int(round(U0 * T * n))
        sl = g.interior
        back = np.roll(moved.alpha[sl], -cells, axis=0)
        return np.max(np.abs(back - base.alpha[sl]))

    e32, e64 = error(32), error(64)
    assert e64 < 1e-3
    assert e32 / e64 > 3.0


def test_run_t_end_zero_returns_initial():
    g = CartesianGrid.cube(12)
    a = np.where(g.radius() < 0.4, 1.0, 0.0)
    a[~np.pad(np.ones((12,) * 3, bool), 2)] = 0.0
    s = _state(g, a)
    res = run(s, StepControl(t_end=0.0))
    assert res.verdict == "completed" and res.steps == 0
    np.testing.assert_array_equal(res.final.alpha, s.alpha)


def test_run_hook_halts_with_verdict():
    g = CartesianGrid.cube(8)
    s = _state(g, np.full(g.shape, 1.0), boundary="periodic")
    res = run(s, StepControl(t_end=1.0), hooks=[lambda st_, n, dt: "stop" if n >= 2 else None], gravity=None)
    assert res.verdict == "blowup-suspected" and res.reason == "stop" and res.steps == 2


@settings(max_examples=25)
@given(seed=st.integers(0, 2 ** 31), radius=st.floats(0.2, 0.45), gravity=st.booleans())
def test_vacuum_preserved_away_from_support(seed, radius, gravity):
    rng = np.random.default_rng(seed)
    g = CartesianGrid.cube(20)
    r = g.radius()
    a = np.where(r < radius, 0.5 + rng.random(g.shape), 0.0)
    w = 0.3 * rng.standard_normal((3,) + g.shape)
    a[~np.pad(np.ones((20,) * 3, bool), 2)] = 0.0
    s = _state(g, a, w)
    out = step(s, StepControl(dissipation=0.3), fft_gravity if gravity else None, dt=0.01)
    # three stages of a radius-2 stencil reach at most 6 cells
    far = complement_distance(~(a > 0), g.spacing) > 6 * g.spacing[0] + 1e-12
    far &= np.pad(np.ones((20,) * 3, bool), 2)
    assert not out.alpha[far].any()
    assert np.all(out.alpha >= 0)


def test_mms_tautology_and_degenerate_table():
    t = mms_residual([8, 16], "steady-discrete")
    assert max(t.linf) < 1e-12
    single = mms_residual([8], "trig", t_end=0.02)
    rows = single.rows()
    assert len(rows) == 1 and not any(k.startswith("order") for k in rows[0])
    with pytest.raises(KeyError):
        mms_residual([8], "nope")
