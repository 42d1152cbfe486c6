import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vacuumcloud.grid import (
    CartesianGrid,
    ContractViolation,
    ScalarField,
    boundary_shell,
    fill_ghosts,
    gradient,
    interpolate,
    read_snapshot,
    strip_split,
    support_mask,
    write_snapshot,
)


def brute_distance(mask, spacing):
    """Nearest complement cell centre by exhaustive search (box exterior counts)."""
    padded = np.pad(mask, 1, constant_values=False)
    comp = np.argwhere(~padded).astype(float) * spacing
    out = np.zeros(mask.shape)
    for idx in np.argwhere(mask):
        p = (idx + 1) * spacing
        out[tuple(idx)] = np.sqrt(np.min(np.sum((comp - p) ** 2, axis=1)))
    return out


def test_grid_geometry():
    g = CartesianGrid.cube(8, -1.0, 1.0)
    assert g.shape == (12, 12, 12)
    assert g.cell_volume == pytest.approx(0.25 ** 3)
    np.testing.assert_allclose(g.lower, -1.0)
    np.testing.assert_allclose(g.upper, 1.0)
    assert g.axis(0, with_ghosts=False)[0] == pytest.approx(-0.875)
    assert g.contains([[0.99, 0, 0]]).all() and not g.contains([[1.01, 0, 0]]).any()
    np.testing.assert_allclose(g.index_of([[-0.875, -0.875, -0.875]]), [[2, 2, 2]])


@pytest.mark.parametrize("kw", [dict(dims=(3, 8, 8), spacing=(1, 1, 1), origin=(0, 0, 0)),
                                dict(dims=(8, 8, 8), spacing=(1, 0, 1), origin=(0, 0, 0)),
                                dict(dims=(8, 8, 8), spacing=(1, 1, 1), origin=(0, 0, 0), ghost=-1)])
def test_grid_validation(kw):
    with pytest.raises(ValueError):
        CartesianGrid(**kw)


def test_support_mask_examples():
    g = CartesianGrid.cube(32)
    assert not support_mask(g.zeros(), 0.0, g).any()
    assert support_mask(np.ones(g.shape), 0.0, g).all()
    R = 0.5
    r = g.radius()
    alpha = np.clip(1 - r ** 2 / R ** 2, 0, None) ** 3
    m = support_mask(ScalarField(g, alpha))
    vol = m.sum() * g.cell_volume
    shell = 4 * math.pi * R ** 2 * g.cell_diagonal
    assert abs(vol - 4 / 3 * math.pi * R ** 3) < shell
    with pytest.raises(ValueError):
        support_mask(alpha, -1.0, g)


def test_strip_split_matches_brute_force_24():
    rng = np.random.default_rng(7)
    g = CartesianGrid.cube(24)
    r = g.radius((0.1, -0.05, 0.0), with_ghosts=False)
    mask = (r < 0.7) & (rng.random(g.dims) > 0.05)
    h = np.array(g.spacing)
    ref = brute_distance(mask, h)
    for eps in (1.3 * h[0], 2.6 * h[0], 4.1 * h[0]):
        dec = strip_split(mask, eps, g.spacing)
        np.testing.assert_allclose(dec.distance[mask], ref[mask], rtol=1e-12)
        np.testing.assert_array_equal(dec.strip, mask & (ref < eps))
        np.testing.assert_array_equal(dec.interior, mask & (ref >= eps))


masks = arrays(np.bool_, st.tuples(st.integers(4, 9), st.integers(4, 9), st.integers(4, 9)))


@given(mask=masks, eps=st.floats(0.3, 6.0), hx=st.floats(0.5, 2.0))
def test_partition_property(mask, eps, hx):
    spacing = (hx, 1.0, 1.3)
    dec = strip_split(mask, eps, spacing)
    np.testing.assert_array_equal(dec.strip | dec.interior, mask)
    assert not (dec.strip & dec.interior).any()
    ref = brute_distance(mask, np.array(spacing))
    # exact ties belong to the interior, up to roundoff in either distance
    assert np.all(ref[dec.strip] < eps)
    assert np.all(ref[dec.interior] >= eps * (1 - 1e-12))


def test_strip_limits():
    g = CartesianGrid.cube(20)
    mask = g.radius(with_ghosts=False) < 0.6
    h = g.spacing[0]
    big = strip_split(mask, 2.0, g.spacing)
    assert not big.interior.any() and np.array_equal(big.strip, mask)
    thin = strip_split(mask, 1.01 * h, g.spacing)
    np.testing.assert_array_equal(thin.strip, boundary_shell(mask))
    empty = strip_split(np.zeros((5, 5, 5), bool), 1.0, (1, 1, 1))
    assert not (empty.support.any() or empty.strip.any() or empty.interior.any())
    with pytest.raises(ValueError):
        strip_split(mask, 0.0, g.spacing)


def test_ball_half_radius_split():
    g = CartesianGrid.cube(24)
    R = 0.75
    r = g.radius(with_ghosts=False)
    mask = r < R
    dec = strip_split(mask, R / 2, g.spacing)
    ref = brute_distance(mask, np.array(g.spacing))
    np.testing.assert_array_equal(dec.interior, mask & (ref >= R / 2))
    # away from the lattice-scale fuzz of the discrete sphere the split is radial
    assert dec.interior[r < R / 2 - 2 * g.cell_diagonal].all()
    assert dec.strip[mask & (r > R / 2 + 2 * g.cell_diagonal)].all()


def _filled(g, values):
    return ScalarField(g, values, ghosts_filled=True)


def test_gradient_exactness():
    g = CartesianGrid((6, 7, 8), (0.3, 0.2, 0.1), (-0.4, 0.1, 0.0))
    x, y, z = g.mesh()
    sl = g.interior
    grad = gradient(_filled(g, 2 * x - 3 * y + 0.5 * z + 1)).values
    for d, c in enumerate((2.0, -3.0, 0.5)):
        np.testing.assert_allclose(grad[d][sl], c, rtol=1e-12)
    grad = gradient(_filled(g, x ** 2)).values
    np.testing.assert_allclose(grad[0][sl], 2 * x[sl], rtol=1e-12, atol=1e-13)
    grad = gradient(_filled(g, np.full(g.shape, 4.2))).values
    assert np.all(grad[:, sl[0], sl[1], sl[2]] == 0)


@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_gradient_linear(a, b, seed):
    g = CartesianGrid.cube(6)
    rng = np.random.default_rng(seed)
    f, h = rng.normal(size=g.shape), rng.normal(size=g.shape)
    lhs = gradient(_filled(g, a * f + b * h)).values
    rhs = a * gradient(_filled(g, f)).values + b * gradient(_filled(g, h)).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-11 * (1 + abs(a) + abs(b)) / g.spacing[0])


def test_gradient_contract():
    g = CartesianGrid.cube(6)
    with pytest.raises(ContractViolation):
        gradient(ScalarField(g, g.zeros()))
    g0 = CartesianGrid.cube(6, ghost=0)
    with pytest.raises(ContractViolation):
        gradient(ScalarField(g0, g0.zeros(), ghosts_filled=True))


def test_ghost_modes():
    g = CartesianGrid.cube(8)
    x, y, z = g.mesh()
    sl = g.interior
    lin = 1.0 + 2 * x - y + 3 * z
    a = np.zeros(g.shape)
    a[sl] = lin[sl]
    fill_ghosts(a, g.ghost, "extrapolate")
    np.testing.assert_allclose(a, lin, atol=1e-12)
    fill_ghosts(a, g.ghost, "zero")
    assert np.all(a[:2] == 0) and np.all(a[:, -2:] == 0)
    b = np.random.default_rng(0).normal(size=g.shape)
    fill_ghosts(b, g.ghost, "periodic")
    np.testing.assert_array_equal(b[0:2], b[8:10])
    np.testing.assert_array_equal(b[:, 10:12], b[:, 2:4])
    v = np.stack([lin, 2 * lin, 3 * lin])
    v[:, :2] = 0
    fill_ghosts(v, g.ghost, "extrapolate")
    np.testing.assert_allclose(v[2], 3 * lin, atol=1e-12)


def test_interpolate_affine_exact():
    g = CartesianGrid.cube(10)
    x, y, z = g.mesh()
    f = 0.5 + x - 2 * y + 0.25 * z
    pts = np.random.default_rng(3).uniform(-0.95, 0.95, size=(50, 3))
    np.testing.assert_allclose(interpolate(g, f, pts), 0.5 + pts[:, 0] - 2 * pts[:, 1] + 0.25 * pts[:, 2],
                               atol=1e-13)
    vec = interpolate(g, np.stack([f, 2 * f, 3 * f]), pts)
    assert vec.shape == (50, 3)


def test_snapshot_round_trip(tmp_path):
    g = CartesianGrid((5, 6, 7), (0.1, 0.2, 0.3), (0.0, -1.0, 2.0), ghost=1)
    rng = np.random.default_rng(11)
    alpha = rng.random(g.shape)
    w = rng.normal(size=(3,) + g.shape)
    p = tmp_path / "s.bin"
    write_snapshot(p, g, 0.125, {"alpha": alpha, "w": w})
    g2, t, fields = read_snapshot(p)
    assert g2 == g and t == 0.125
    assert fields["alpha"].tobytes() == alpha.tobytes()
    for c in range(3):
        assert np.array_equal(fields[f"w{c}"], w[c])
    raw = p.read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    assert header["components"] == 4 and header["dims"] == [5, 6, 7]
    data = np.frombuffer(raw[nl + 1:], dtype="<f8")
    # x-fastest ordering
    assert data[0] == alpha[0, 0, 0] and data[1] == alpha[1, 0, 0]
    assert data[g.shape[0]] == alpha[0, 1, 0]
    with pytest.raises(ValueError):
        write_snapshot(p, g, 0.0, {"bad": np.zeros((2, 2, 2))})
