import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vacuumcloud.flow import (
    MARKER_COLUMNS,
    MarkerHistory,
    MarkerSet,
    advance_markers,
    bdf2_derivative,
    freefall_residual,
    seed_markers,
    support_vs_markers,
    transported_density,
    write_marker_rows,
)
from vacuumcloud.grid import CartesianGrid, strip_split


@pytest.fixture(scope="module")
def grid():
    return CartesianGrid.cube(32)


def _ball(grid, R=0.5, eps_cells=3):
    mask = grid.radius(with_ghosts=False) < R
    return strip_split(mask, eps_cells * grid.spacing[0], grid.spacing)


def _rotation(grid, omega):
    x, y, _ = grid.mesh()
    w = np.zeros((3,) + grid.shape)
    w[0], w[1] = -omega * y, omega * x
    return w


def test_rotation_full_period(grid):
    omega = 2 * np.pi
    w = _rotation(grid, omega)
    ang = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    pts = np.stack([0.5 * np.cos(ang), 0.5 * np.sin(ang), 0.1 * np.ones_like(ang)], axis=1)
    m = MarkerSet.from_labels(pts, "interior")
    N = 1000
    for _ in range(N):
        m = advance_markers(m, grid, w, w, 1.0 / N)
    assert m.alive.all()
    r = np.linalg.norm(m.positions[:, :2], axis=1)
    assert np.max(np.abs(r - 0.5)) < 1e-6
    assert np.max(np.abs(m.positions - pts)) < 1e-6


def test_homologous_expansion_exact(grid):
    H, dt = 0.5, 0.02  # H dt = 0.01
    w = np.stack(grid.mesh()) * H
    pts = np.array([[0.1, 0.2, -0.3], [-0.4, 0.05, 0.2], [0.0, 0.0, 0.0]])
    m = MarkerSet.from_labels(pts, "boundary")
    for _ in range(50):
        m = advance_markers(m, grid, w, w, dt)
    np.testing.assert_allclose(m.positions, pts * np.exp(H * 1.0), rtol=1e-6, atol=1e-15)
    np.testing.assert_allclose(m.velocities, H * m.positions, rtol=1e-12, atol=1e-14)


def test_flow_composition_on_frozen_rotation(grid):
    w = _rotation(grid, 2 * np.pi)
    pts = np.array([[0.5, 0.0, 0.0], [0.0, -0.3, 0.2]])
    m = MarkerSet.from_labels(pts, "interior")

    def gap(dt):
        two = advance_markers(advance_markers(m, grid, w, w, dt), grid, w, w, dt)
        one = advance_markers(m, grid, w, w, 2 * dt)
        return np.max(np.abs(two.positions - one.positions))

    g1, g2 = gap(0.01), gap(0.005)
    assert g1 < 1e-6
    assert g1 / g2 > 16  # fifth-order local difference


def test_zero_velocity_keeps_positions(grid):
    m = MarkerSet.from_labels([[0.1, 0.2, 0.3]], "interior")
    z = np.zeros((3,) + grid.shape)
    out = advance_markers(m, grid, z, z, 0.1)
    np.testing.assert_array_equal(out.positions, m.positions)


def test_markers_leaving_box_are_frozen(grid):
    w = np.zeros((3,) + grid.shape)
    w[0] = 1.0
    m = MarkerSet.from_labels([[0.95, 0.0, 0.0], [0.0, 0.0, 0.0]], "interior")
    out = advance_markers(m, grid, w, w, 0.2)
    assert out.alive.tolist() == [False, True]
    np.testing.assert_array_equal(out.positions[0], [0.95, 0.0, 0.0])
    assert len(out) == 2


def test_labels_are_immutable():
    m = MarkerSet.from_labels([[0.0, 0.0, 0.0]], "interior")
    with pytest.raises(ValueError):
        m.labels[0, 0] = 1.0
    np.testing.assert_array_equal(m.positions, m.labels)


def test_boundary_seeding_contract(grid):
    d = _ball(grid)
    m = seed_markers(d, grid, "boundary", 100, seed=3)
    assert len(m) == 100 and m.kind == "boundary"
    r = np.linalg.norm(m.positions, axis=1)
    assert np.all(np.abs(r - 0.5) <= grid.cell_diagonal)
    again = seed_markers(d, grid, "boundary", 100, seed=3)
    np.testing.assert_array_equal(m.labels, again.labels)
    assert len(seed_markers(d, grid, "boundary", 0)) == 0


def test_interior_seeding_contract(grid):
    d = _ball(grid)
    m = seed_markers(d, grid, "interior", 100, seed=1)
    assert len(m) == 100
    cells = np.floor(grid.index_of(m.positions) + 0.5).astype(int) - grid.ghost
    assert d.interior[tuple(cells.T)].all()
    np.testing.assert_array_equal(m.labels, seed_markers(d, grid, "interior", 100, seed=1).labels)
    assert not np.array_equal(m.labels, seed_markers(d, grid, "interior", 100, seed=2).labels)


def test_seeding_empty_region_errors(grid):
    d = strip_split(np.zeros(grid.dims, bool), 0.1, grid.spacing)
    with pytest.raises(ValueError):
        seed_markers(d, grid, "boundary", 5)
    with pytest.raises(ValueError):
        seed_markers(d, grid, "interior", 5)


def test_support_gap_at_seed_time_and_under_rest(grid):
    d = _ball(grid)
    m = seed_markers(d, grid, "boundary", 10 ** 6)
    assert support_vs_markers(m, d, grid) <= grid.cell_diagonal
    z = np.zeros((3,) + grid.shape)
    few = seed_markers(d, grid, "boundary", 100)
    before = support_vs_markers(few, d, grid)
    for _ in range(5):
        few = advance_markers(few, grid, z, z, 0.1)
    assert support_vs_markers(few, d, grid) == before


def test_transport_closed_forms():
    t = np.linspace(0, 2, 41)
    np.testing.assert_allclose(transported_density([1.5, 2.0], np.zeros((41, 2)), t, 2.0), [1.5, 2.0])
    d = 0.7
    out = transported_density([1.0], np.full((41, 1), d), t, 2.0)
    assert out[0] == pytest.approx(np.exp(-d * 2 / 2), rel=1e-14)


@given(st.floats(1.05, 3.0), st.integers(0, 1000))
def test_alpha_and_density_predictions_agree(gamma, seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.random(20)) * 3
    th = rng.standard_normal((20, 5))
    a0, r0 = rng.random(5) + 0.1, rng.random(5) + 0.1
    a, r = transported_density(a0, th, t, gamma, rho0=r0)
    np.testing.assert_allclose((a / a0) ** 2, (r / r0) ** (gamma - 1), rtol=1e-12)


def test_bdf2_exact_on_quadratics():
    t = np.array([0.0, 0.3, 0.45])
    f = lambda s: 2 - 3 * s + 5 * s ** 2
    assert bdf2_derivative(t, f(t)) == pytest.approx(-3 + 10 * 0.45, rel=1e-12)
    with pytest.raises(ValueError):
        bdf2_derivative(t[:2], f(t[:2]))


def test_freefall_residual_exact_parabolas(grid):
    gvec = np.array([0.1, -0.4, 0.2])
    g = np.broadcast_to(gvec[:, None, None, None], (3,) + grid.shape).copy()
    x0 = np.array([[0.0, 0.5, 0.0], [-0.3, 0.1, 0.2]])
    v0 = np.array([[0.2, 0.0, -0.1], [0.0, 0.3, 0.0]])
    hist = MarkerHistory()
    for t in (0.0, 0.05, 0.12):
        hist.record(t, v0 + gvec * t)
    pos = x0 + v0 * 0.12 + 0.5 * gvec * 0.12 ** 2
    m = MarkerSet(x0.copy(), pos, v0 + gvec * 0.12, "boundary", np.ones(2, bool))
    mx, mean, r = freefall_residual(m, hist, grid, g)
    assert mx < 1e-12 and mean <= mx and r.shape == (2,)
    # constant velocity without gravity
    hist = MarkerHistory()
    for t in (0.0, 0.1, 0.2):
        hist.record(t, v0)
    assert freefall_residual(m, hist, grid, np.zeros_like(g))[0] < 1e-13
    with pytest.raises(ValueError):
        freefall_residual(m, MarkerHistory([0.0], [v0]), grid, g)


def test_marker_csv_columns(tmp_path):
    m = MarkerSet.from_labels([[0.1, 0.2, 0.3], [0.0, 0.0, 0.0]], "interior")
    p = tmp_path / "markers.csv"
    write_marker_rows(p, m, 0.0)
    write_marker_rows(p, m, 0.5)
    rows = list(csv.reader(open(p)))
    assert tuple(rows[0]) == tuple(MARKER_COLUMNS)
    assert len(rows) == 5 and rows[3][1] == "0.5"
