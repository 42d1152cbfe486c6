"""Uniform cell-centred Cartesian grid, fields, support masks and strips.

Arrays carry ``ghost`` halo cells on every side, so a scalar field on a grid
with ``dims = (nx, ny, nz)`` has shape ``(nx + 2g, ny + 2g, nz + 2g)`` and a
vector field has a leading component axis of length 3.  Masks (support,
strip, interior) live on the physical cells only, shape ``dims``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Sequence, Tuple

import numpy as np
from scipy import ndimage

__all__ = [
    "CartesianGrid",
    "ContractViolation",
    "RegionDecomposition",
    "ScalarField",
    "VectorField",
    "fill_ghosts",
    "gradient",
    "interpolate",
    "read_snapshot",
    "strip_split",
    "support_mask",
    "write_snapshot",
]


class ContractViolation(RuntimeError):
    """A caller broke a documented precondition (unfilled ghosts, NaNs, ...)."""


@dataclass(frozen=True)
class CartesianGrid:
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    origin: Tuple[float, float, float]
    ghost: int = 2

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "spacing", tuple(float(h) for h in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if len(self.dims) != 3 or len(self.spacing) != 3 or len(self.origin) != 3:
            raise ValueError("dims, spacing and origin need three entries each")
        if min(self.dims) < 4:
            raise ValueError(f"every axis needs at least 4 cells, got {self.dims}")
        if min(self.spacing) <= 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if self.ghost < 0:
            raise ValueError("ghost width must be non-negative")

    @classmethod
    def cube(cls, n: int, lo: float = -1.0, hi: float = 1.0, ghost: int = 2) -> "CartesianGrid":
        """``n**3`` cells tiling the box ``[lo, hi]**3``."""
        h = (hi - lo) / n
        return cls((n, n, n), (h, h, h), (lo + 0.5 * h,) * 3, ghost)

    @property
    def shape(self) -> Tuple[int, int, int]:
        g = self.ghost
        return tuple(n + 2 * g for n in self.dims)

    @property
    def interior(self) -> Tuple[slice, slice, slice]:
        g = self.ghost
        return tuple(slice(g, g + n) for n in self.dims)

    @property
    def cell_volume(self) -> float:
        return self.spacing[0] * self.spacing[1] * self.spacing[2]

    @property
    def lower(self) -> np.ndarray:
        """Lower corner of the physical box (cell faces, not centres)."""
        return np.asarray(self.origin) - 0.5 * np.asarray(self.spacing)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + np.asarray(self.dims) * np.asarray(self.spacing)

    @property
    def min_spacing(self) -> float:
        return min(self.spacing)

    @property
    def cell_diagonal(self) -> float:
        return math.sqrt(sum(h * h for h in self.spacing))

    def axis(self, d: int, with_ghosts: bool = True) -> np.ndarray:
        """Cell-centre coordinates along axis ``d``."""
        g = self.ghost if with_ghosts else 0
        idx = np.arange(-g, self.dims[d] + g)
        return self.origin[d] + idx * self.spacing[d]

    def mesh(self, with_ghosts: bool = True):
        return np.meshgrid(*(self.axis(d, with_ghosts) for d in range(3)), indexing="ij")

    def radius(self, center=(0.0, 0.0, 0.0), with_ghosts: bool = True) -> np.ndarray:
        x, y, z = self.mesh(with_ghosts)
        return np.sqrt((x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2)

    def zeros(self, components: int = 1) -> np.ndarray:
        if components == 1:
            return np.zeros(self.shape)
        return np.zeros((components,) + self.shape)

    def index_of(self, points) -> np.ndarray:
        """Fractional array indices (ghosts included) of physical positions."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return (p - np.asarray(self.origin)) / np.asarray(self.spacing) + self.ghost

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((p >= self.lower) & (p <= self.upper), axis=1)

    def margin_cells(self, mask: np.ndarray) -> int:
        """Smallest number of empty physical cells between ``mask`` and the box edge."""
        if not mask.any():
            return min(self.dims)
        margins = []
        for d in range(3):
            other = tuple(a for a in range(3) if a != d)
            occupied = np.nonzero(mask.any(axis=other))[0]
            margins.append(int(occupied[0]))
            margins.append(int(self.dims[d] - 1 - occupied[-1]))
        return min(margins)

    def header(self) -> dict:
        return {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "origin": list(self.origin),
            "ghost": self.ghost,
        }


@dataclass
class ScalarField:
    grid: CartesianGrid
    values: np.ndarray
    ghosts_filled: bool = False

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"scalar field shape {self.values.shape} != grid shape {self.grid.shape}")


@dataclass
class VectorField:
    grid: CartesianGrid
    values: np.ndarray
    ghosts_filled: bool = False

    def __post_init__(self):
        if self.values.shape != (3,) + self.grid.shape:
            raise ValueError(f"vector field shape {self.values.shape} != (3,) + {self.grid.shape}")


# ---------------------------------------------------------------------------
# ghost cells


def _fill_axis(arr: np.ndarray, g: int, axis: int, mode: str) -> None:
    a = np.moveaxis(arr, axis, 0)
    n = a.shape[0] - 2 * g
    if mode == "zero":
        a[:g] = 0.0
        a[n + g:] = 0.0
    elif mode == "periodic":
        a[:g] = a[n:n + g]
        a[n + g:] = a[g:2 * g]
    elif mode == "extrapolate":
        lo, lo1 = a[g], a[g + 1]
        hi, hi1 = a[n + g - 1], a[n + g - 2]
        for k in range(1, g + 1):
            a[g - k] = lo + k * (lo - lo1)
            a[n + g - 1 + k] = hi + k * (hi - hi1)
    else:
        raise ValueError(f"unknown ghost mode {mode!r}")


def fill_ghosts(arr: np.ndarray, g: int, mode: str) -> np.ndarray:
    """Fill the halo of a scalar ``(nx,ny,nz)`` or vector ``(3,nx,ny,nz)`` array in place.

    ``mode`` is ``"zero"`` (vacuum outside the box), ``"extrapolate"`` (linear)
    or ``"periodic"``.
    """
    if g == 0:
        return arr
    spatial = arr.shape[-3:]
    if arr.ndim == 4:
        for c in range(arr.shape[0]):
            fill_ghosts(arr[c], g, mode)
        return arr
    if any(n <= 2 * g for n in spatial):
        raise ValueError("array too small for its ghost width")
    for axis in range(3):
        _fill_axis(arr, g, axis, mode)
    return arr


# ---------------------------------------------------------------------------
# differences


def central_diff(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Second-order central difference; the outermost layer along ``axis`` is zero."""
    out = np.zeros_like(arr)
    a = np.moveaxis(arr, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[1:-1] = (a[2:] - a[:-2]) / (2.0 * h)
    return out


def gradient(f) -> VectorField:
    """Central-difference gradient of a scalar field with filled ghosts.

    Returns a :class:`VectorField` whose outermost array layer is zero; the
    result's own ghosts are therefore *not* valid.
    """
    if not isinstance(f, ScalarField):
        raise TypeError("gradient expects a ScalarField (pass one component of a vector field)")
    if f.grid.ghost < 1:
        raise ContractViolation("gradient needs ghost >= 1")
    if not f.ghosts_filled:
        raise ContractViolation("ghost cells must be filled before differencing")
    vals = np.stack([central_diff(f.values, d, f.grid.spacing[d]) for d in range(3)])
    return VectorField(f.grid, vals, ghosts_filled=False)


# ---------------------------------------------------------------------------
# support and strips


def support_mask(alpha, floor: float = 0.0, grid: CartesianGrid | None = None) -> np.ndarray:
    """Physical cells where ``alpha > floor``.

    Accepts a :class:`ScalarField` or a raw array with ghosts (then ``grid`` is
    required) and returns a boolean array of shape ``grid.dims``.
    """
    if floor < 0:
        raise ValueError("floor must be non-negative")
    if isinstance(alpha, ScalarField):
        grid, values = alpha.grid, alpha.values
    else:
        values = np.asarray(alpha)
        if grid is None:
            raise ValueError("grid is required when passing a raw array")
    return values[grid.interior] > floor


@dataclass
class RegionDecomposition:
    support: np.ndarray
    strip: np.ndarray
    interior: np.ndarray
    epsilon: float
    distance: np.ndarray = field(repr=False, default=None)

    @property
    def shell(self) -> np.ndarray:
        """Support cells that share a face with the complement."""
        return boundary_shell(self.support)


def boundary_shell(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1, constant_values=False)
    eroded = ndimage.binary_erosion(padded, structure=ndimage.generate_binary_structure(3, 1))
    return mask & ~eroded[1:-1, 1:-1, 1:-1]


def complement_distance(mask: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    """Euclidean distance from each mask cell centre to the nearest non-mask cell centre.

    Cells beyond the box count as complement.  Zero outside the mask.
    """
    padded = np.pad(mask, 1, constant_values=False)
    dist = ndimage.distance_transform_edt(padded, sampling=tuple(spacing))
    return dist[1:-1, 1:-1, 1:-1]


def strip_split(mask: np.ndarray, epsilon: float, spacing: Sequence[float]) -> RegionDecomposition:
    """Split ``mask`` into the near-boundary strip ``dist < epsilon`` and the rest.

    Cells at distance exactly ``epsilon`` go to the interior; ties are
    decided with a 1e-12 relative tolerance so roundoff in the distance
    transform cannot move them.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        empty = np.zeros_like(mask)
        return RegionDecomposition(mask.copy(), empty, empty.copy(), float(epsilon), np.zeros(mask.shape))
    dist = complement_distance(mask, spacing)
    strip = mask & (dist < epsilon * (1.0 - 1e-12))
    interior = mask & ~strip
    return RegionDecomposition(mask.copy(), strip, interior, float(epsilon), dist)


# ---------------------------------------------------------------------------
# interpolation


def interpolate(grid: CartesianGrid, arr: np.ndarray, points) -> np.ndarray:
    """Trilinear interpolation of a scalar ``(shape)`` or vector ``(3, shape)`` array.

    Points outside the ghosted array clamp to the nearest edge value.
    """
    idx = grid.index_of(points).T
    if arr.ndim == 3:
        return ndimage.map_coordinates(arr, idx, order=1, mode="nearest")
    return np.stack([ndimage.map_coordinates(a, idx, order=1, mode="nearest") for a in arr], axis=-1)


# ---------------------------------------------------------------------------
# snapshot files


def write_snapshot(path, grid: CartesianGrid, time: float, fields: Dict[str, np.ndarray]) -> None:
    """Write one header line of JSON followed by little-endian float64 data.

    Each component is stored x-fastest over the ghosted array, components in
    the order given by ``fields`` (vector fields expand to 3 components).
    """
    names, blocks = [], []
    for name, arr in fields.items():
        arr = np.asarray(arr, dtype=np.float64)
        comps = [arr] if arr.ndim == 3 else list(arr)
        for c, a in enumerate(comps):
            if a.shape != grid.shape:
                raise ValueError(f"field {name} has shape {a.shape}, expected {grid.shape}")
            names.append(name if len(comps) == 1 else f"{name}{c}")
            blocks.append(a)
    header = dict(grid.header(), components=len(blocks), names=names, time=float(time))
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("ascii"))
        for a in blocks:
            fh.write(np.asarray(a, dtype="<f8").ravel(order="F").tobytes())


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`; returns ``(grid, time, {name: array})``."""
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("ascii"))
    grid = CartesianGrid(tuple(header["dims"]), tuple(header["spacing"]),
                         tuple(header["origin"]), int(header["ghost"]))
    ncomp = int(header["components"])
    data = np.frombuffer(raw[nl + 1:], dtype="<f8")
    size = int(np.prod(grid.shape))
    if data.size != ncomp * size:
        raise ValueError(f"snapshot {path} is truncated or corrupt")
    comps = {}
    for c, name in enumerate(header["names"]):
        comps[name] = data[c * size:(c + 1) * size].reshape(grid.shape, order="F").astype(np.float64)
    return grid, float(header["time"]), comps
