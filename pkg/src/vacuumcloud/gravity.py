"""Free-space Newtonian potential with the normalisation ``laplacian(phi) = rho``.

    phi(x) = -1/(4 pi) * integral rho(y) / |x - y| dy

Both solvers discretise the same midpoint-rule sum over cell centres; the
zero-separation term uses the exact potential of a uniform cuboid cell at its
own centre.  ``solve_potential_direct`` performs the O(N^2) pair sum and is
the oracle for ``solve_potential_fft``, which evaluates the identical sum as a
zero-padded (domain-doubled) convolution.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np
from scipy import fft as sfft

from .grid import CartesianGrid, ScalarField, VectorField, central_diff

__all__ = [
    "GravityDomainError",
    "PotentialSolution",
    "cell_self_potential",
    "cuboid_inverse_distance_integral",
    "laplacian_residual",
    "solve_potential",
    "solve_potential_direct",
    "solve_potential_fft",
    "sphere_probe",
]

MIN_MARGIN_CELLS = 2

# FFT worker threads; the CLI exposes this through VACUUMCLOUD_THREADS
WORKERS = max(1, int(os.environ.get("VACUUMCLOUD_THREADS", "1") or 1))


class GravityDomainError(ValueError):
    """Source touches the box edge or is not a valid density."""


@dataclass
class PotentialSolution:
    phi: ScalarField
    g: VectorField
    method: str


def _octant(a: float, b: float, c: float) -> float:
    # integral of 1/r over [0,a]x[0,b]x[0,c] from the closed-form antiderivative
    r = math.sqrt(a * a + b * b + c * c)
    val = (b * c * math.log(a + r) + a * c * math.log(b + r) + a * b * math.log(c + r)
           - 0.5 * a * a * math.atan(b * c / (a * r))
           - 0.5 * b * b * math.atan(a * c / (b * r))
           - 0.5 * c * c * math.atan(a * b / (c * r)))
    val -= b * c * math.log(math.hypot(b, c))
    val -= a * c * math.log(math.hypot(a, c))
    val -= a * b * math.log(math.hypot(a, b))
    return val


def cuboid_inverse_distance_integral(hx: float, hy: float, hz: float) -> float:
    """Integral of ``1/|x|`` over a cuboid of sides ``hx, hy, hz`` centred at 0."""
    return 8.0 * _octant(0.5 * hx, 0.5 * hy, 0.5 * hz)


def cell_self_potential(spacing) -> float:
    """Potential at a cell centre per unit density of that (uniform) cell."""
    return -cuboid_inverse_distance_integral(*spacing) / (4.0 * math.pi)


def _validate_source(rho: np.ndarray, grid: CartesianGrid, check_margin: bool) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.shape != grid.shape:
        raise GravityDomainError(f"density shape {rho.shape} != grid shape {grid.shape}")
    if not np.all(np.isfinite(rho)):
        raise GravityDomainError("density contains NaN or Inf")
    if np.any(rho < 0):
        raise GravityDomainError("density must be non-negative")
    g = grid.ghost
    if g:
        halo = rho.copy()
        halo[grid.interior] = 0.0
        if np.any(halo != 0):
            raise GravityDomainError("density must vanish in ghost cells")
    if check_margin and grid.margin_cells(rho[grid.interior] > 0) < MIN_MARGIN_CELLS:
        raise GravityDomainError(
            f"density support must stay at least {MIN_MARGIN_CELLS} cells from the box edge")
    return rho


def _finish(phi: np.ndarray, grid: CartesianGrid, method: str) -> PotentialSolution:
    g = np.stack([-central_diff(phi, d, grid.spacing[d]) for d in range(3)])
    return PotentialSolution(ScalarField(grid, phi, ghosts_filled=True), VectorField(grid, g), method)


@numba.njit(cache=True)
def _pair_sum(tgt, src_pos, src_mass, out):
    coef = -1.0 / (4.0 * math.pi)
    for i in range(tgt.shape[0]):
        acc = 0.0
        tx, ty, tz = tgt[i, 0], tgt[i, 1], tgt[i, 2]
        for j in range(src_pos.shape[0]):
            dx = tx - src_pos[j, 0]
            dy = ty - src_pos[j, 1]
            dz = tz - src_pos[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 > 0.0:
                acc += src_mass[j] / math.sqrt(d2)
        out[i] = coef * acc


def solve_potential_direct(rho, grid: CartesianGrid, check_margin: bool = True) -> PotentialSolution:
    """Explicit pair sum over all source cells, evaluated at every array cell."""
    rho = _validate_source(rho, grid, check_margin)
    phi = np.zeros(grid.shape)
    src = np.nonzero(rho > 0)
    if src[0].size == 0:
        return _finish(phi, grid, "direct")
    h = np.asarray(grid.spacing)
    src_pos = np.stack(src, axis=1) * h
    src_mass = rho[src] * grid.cell_volume
    tgt = np.stack(np.unravel_index(np.arange(phi.size), grid.shape), axis=1) * h
    flat = np.empty(phi.size)
    _pair_sum(tgt, src_pos, src_mass, flat)
    phi = flat.reshape(grid.shape)
    phi[src] += cell_self_potential(grid.spacing) * rho[src]
    return _finish(phi, grid, "direct")


@lru_cache(maxsize=8)
def _kernel_spectrum(grid: CartesianGrid):
    shape = grid.shape
    fshape = tuple(sfft.next_fast_len(2 * n - 1, real=True) for n in shape)
    lags = []
    for d, (n, L) in enumerate(zip(shape, fshape)):
        lag = np.zeros(L)
        lag[:n] = np.arange(n)
        lag[L - n + 1:] = np.arange(-n + 1, 0)
        lags.append(lag * grid.spacing[d])
    lx, ly, lz = np.meshgrid(*lags, indexing="ij", sparse=True)
    r = np.sqrt(lx ** 2 + ly ** 2 + lz ** 2)
    with np.errstate(divide="ignore"):
        kern = -grid.cell_volume / (4.0 * math.pi * r)
    kern[0, 0, 0] = cell_self_potential(grid.spacing)
    # lags that no pair of cells can realise (only present due to fast-length padding)
    for d, (n, L) in enumerate(zip(shape, fshape)):
        sl = [slice(None)] * 3
        sl[d] = slice(n, L - n + 1)
        kern[tuple(sl)] = 0.0
    return fshape, sfft.rfftn(kern, fshape, workers=WORKERS)


def solve_potential_fft(rho, grid: CartesianGrid, check_margin: bool = True) -> PotentialSolution:
    """Same discrete sum as the direct solver via a zero-padded FFT convolution."""
    rho = _validate_source(rho, grid, check_margin)
    if not rho.any():
        return _finish(np.zeros(grid.shape), grid, "fft")
    fshape, kspec = _kernel_spectrum(grid)
    conv = sfft.irfftn(sfft.rfftn(rho, fshape, workers=WORKERS) * kspec, fshape, workers=WORKERS)
    n0, n1, n2 = grid.shape
    phi = np.ascontiguousarray(conv[:n0, :n1, :n2])
    return _finish(phi, grid, "fft")


def solve_potential(rho, grid: CartesianGrid, method: str = "fft", check_margin: bool = True):
    if method == "fft":
        return solve_potential_fft(rho, grid, check_margin)
    if method == "direct":
        return solve_potential_direct(rho, grid, check_margin)
    raise ValueError(f"unknown gravity method {method!r}")


def sphere_probe(phi: np.ndarray, g: np.ndarray, grid: CartesianGrid, radius: float,
                 center=(0.0, 0.0, 0.0)) -> dict:
    """Centre and surface values of a spherically symmetric solution.

    ``phi_surface`` is the mean over cells within half a cell of the sphere.
    The surface field jumps in slope there, so ``g_surface`` averages two
    one-sided extrapolations from bands 2 to 6 cells away: ``|g| R / r``
    inside (linear interior law) and ``|g| r^2 / R^2`` outside (inverse square).
    """
    from .grid import interpolate

    r = grid.radius(center)
    h = grid.min_spacing
    inside = np.zeros(grid.shape, dtype=bool)
    inside[grid.interior] = True
    gmag = np.linalg.norm(g, axis=0)
    shell = inside & (np.abs(r - radius) < 0.5 * h)
    band_in = inside & (r > radius - 6 * h) & (r < radius - 2 * h)
    band_out = inside & (r > radius + 2 * h) & (r < radius + 6 * h)
    g_in = float(np.mean(gmag[band_in] * radius / r[band_in]))
    g_out = float(np.mean(gmag[band_out] * r[band_out] ** 2 / radius ** 2))
    return {
        "phi_center": float(interpolate(grid, phi, [center])[0]),
        "phi_surface": float(np.mean(phi[shell])),
        "g_surface": 0.5 * (g_in + g_out),
    }


def laplacian_residual(phi: np.ndarray, rho: np.ndarray, grid: CartesianGrid, region: np.ndarray) -> float:
    """Max of ``|Delta_h phi - rho|`` (7-point Laplacian) over ``region`` (ghosted shape)."""
    lap = np.zeros_like(phi)
    sl = grid.interior
    for d in range(3):
        lo = list(sl)
        hi = list(sl)
        lo[d] = slice(sl[d].start - 1, sl[d].stop - 1)
        hi[d] = slice(sl[d].start + 1, sl[d].stop + 1)
        lap[sl] += (phi[tuple(lo)] - 2 * phi[sl] + phi[tuple(hi)]) / grid.spacing[d] ** 2
    mask = np.zeros(grid.shape, dtype=bool)
    mask[sl] = region[sl]
    return float(np.max(np.abs(lap - rho)[mask])) if mask.any() else 0.0
