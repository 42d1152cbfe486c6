"""Lagrangian markers: the flow map ``dx/dt = w(t, x)`` sampled at discrete labels.

Velocities are interpolated trilinearly in space and linearly in time
between the two step endpoints; markers are advanced with classical RK4.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .grid import CartesianGrid, RegionDecomposition, boundary_shell, interpolate

__all__ = [
    "MarkerHistory",
    "MarkerSet",
    "advance_markers",
    "bdf2_derivative",
    "freefall_residual",
    "seed_markers",
    "support_vs_markers",
    "transported_density",
    "write_marker_rows",
]

MARKER_COLUMNS = ["marker_id", "t", "xi_x", "xi_y", "xi_z", "x", "y", "z", "w_x", "w_y", "w_z", "alive"]


@dataclass(frozen=True)
class MarkerSet:
    labels: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    kind: str
    alive: np.ndarray

    def __post_init__(self):
        if self.kind not in ("boundary", "interior"):
            raise ValueError(f"unknown marker kind {self.kind!r}")
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @classmethod
    def from_labels(cls, labels, kind: str) -> "MarkerSet":
        labels = np.asarray(labels, dtype=float).reshape(-1, 3)
        return cls(labels.copy(), labels.copy(), np.zeros_like(labels), kind,
                   np.ones(labels.shape[0], dtype=bool))


def _cell_centers(grid: CartesianGrid, mask: np.ndarray) -> np.ndarray:
    idx = np.argwhere(mask)
    return np.asarray(grid.origin) + idx * np.asarray(grid.spacing)


def seed_markers(decomp: RegionDecomposition, grid: CartesianGrid, kind: str, count: int,
                 seed: int = 0) -> MarkerSet:
    """Place ``count`` markers on the support boundary shell or in the interior region.

    Boundary markers are shell cell centres chosen by farthest-point sampling
    (all shell cells when ``count`` exceeds their number).  Interior markers
    are scrambled Sobol points falling in interior cells.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return MarkerSet.from_labels(np.empty((0, 3)), kind)
    rng = np.random.default_rng(seed)
    if kind == "boundary":
        cand = _cell_centers(grid, boundary_shell(decomp.support))
        if cand.shape[0] == 0:
            raise ValueError("support is empty; cannot seed boundary markers")
        if count >= cand.shape[0]:
            return MarkerSet.from_labels(cand, kind)
        chosen = [int(rng.integers(cand.shape[0]))]
        d = np.linalg.norm(cand - cand[chosen[0]], axis=1)
        for _ in range(count - 1):
            nxt = int(np.argmax(d))
            chosen.append(nxt)
            d = np.minimum(d, np.linalg.norm(cand - cand[nxt], axis=1))
        return MarkerSet.from_labels(cand[chosen], kind)
    if kind == "interior":
        region = decomp.interior
        if not region.any():
            raise ValueError("interior region is empty; cannot seed interior markers")
        idx = np.argwhere(region)
        h = np.asarray(grid.spacing)
        lo = np.asarray(grid.origin) + (idx.min(axis=0) - 0.5) * h
        hi = np.asarray(grid.origin) + (idx.max(axis=0) + 0.5) * h
        sampler = qmc.Sobol(d=3, scramble=True, seed=seed)
        pts: List[np.ndarray] = []
        have = 0
        m = int(np.ceil(np.log2(max(64, 2 * count))))
        for it in range(12):
            # doubling keeps the running total a power of two
            batch = qmc.scale(sampler.random_base2(m + max(it - 1, 0)), lo, hi)
            cell = np.floor((batch - np.asarray(grid.origin)) / h + 0.5).astype(int)
            ok = np.all((cell >= 0) & (cell < np.asarray(grid.dims)), axis=1)
            batch, cell = batch[ok], cell[ok]
            keep = region[cell[:, 0], cell[:, 1], cell[:, 2]]
            pts.append(batch[keep])
            have += int(keep.sum())
            if have >= count:
                break
        allpts = np.concatenate(pts)[:count]
        if allpts.shape[0] < count:
            raise ValueError("could not place the requested number of interior markers")
        return MarkerSet.from_labels(allpts, kind)
    raise ValueError(f"unknown marker kind {kind!r}")


def advance_markers(markers: MarkerSet, grid: CartesianGrid, w_start: np.ndarray, w_end: np.ndarray,
                    dt: float) -> MarkerSet:
    """One RK4 step of ``dx/dt = w`` with ``w`` linear in time between the endpoints.

    Markers that leave the physical box are frozen and flagged not alive.
    """
    if len(markers) == 0:
        return markers
    alive = markers.alive.copy()
    x0 = markers.positions
    moving = alive

    def vel(x, frac):
        v = np.zeros_like(x)
        if moving.any():
            a = interpolate(grid, w_start, x[moving])
            b = interpolate(grid, w_end, x[moving])
            v[moving] = (1.0 - frac) * a + frac * b
        return v

    k1 = vel(x0, 0.0)
    k2 = vel(x0 + 0.5 * dt * k1, 0.5)
    k3 = vel(x0 + 0.5 * dt * k2, 0.5)
    k4 = vel(x0 + dt * k3, 1.0)
    x1 = x0 + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    inside = grid.contains(x1)
    alive &= inside
    x1 = np.where(alive[:, None], x1, x0)
    v1 = np.zeros_like(x1)
    if alive.any():
        v1[alive] = interpolate(grid, w_end, x1[alive])
    return replace(markers, positions=x1, velocities=v1, alive=alive)


def transported_density(alpha0, theta_samples, times, gamma: float, rho0=None):
    """Characteristic prediction ``alpha(t) = alpha0 exp(-(gamma-1)/2 int Theta)``.

    ``theta_samples`` has shape ``(n_times, n_markers)``; the time integral is
    accumulated by the trapezoid rule.  With ``rho0`` also returns the density
    prediction ``rho0 exp(-int Theta)``.
    """
    th = np.asarray(theta_samples, float)
    t = np.asarray(times, float)
    if th.ndim == 1:
        th = th[:, None]
    integral = np.zeros(th.shape[1])
    if len(t) > 1:
        integral = np.sum(0.5 * np.diff(t)[:, None] * (th[1:] + th[:-1]), axis=0)
    alpha = np.asarray(alpha0, float) * np.exp(-0.5 * (gamma - 1.0) * integral)
    if rho0 is None:
        return alpha
    return alpha, np.asarray(rho0, float) * np.exp(-integral)


def bdf2_derivative(times, values) -> np.ndarray:
    """Second-order backward difference at ``times[-1]`` from the last three samples."""
    t = np.asarray(times, float)
    if t.size < 3:
        raise ValueError("need at least three samples for a backward derivative")
    f0, f1, f2 = (np.asarray(values[-1]), np.asarray(values[-2]), np.asarray(values[-3]))
    h1 = t[-1] - t[-2]
    h2 = t[-2] - t[-3]
    return (f0 * (2 * h1 + h2) / (h1 * (h1 + h2))
            - f1 * (h1 + h2) / (h1 * h2)
            + f2 * h1 / (h2 * (h1 + h2)))


@dataclass
class MarkerHistory:
    """Per-marker samples recorded once per step."""

    times: List[float] = field(default_factory=list)
    velocities: List[np.ndarray] = field(default_factory=list)
    theta: List[np.ndarray] = field(default_factory=list)
    alpha: List[np.ndarray] = field(default_factory=list)

    def record(self, t, velocities, theta=None, alpha=None, keep: Optional[int] = None):
        self.times.append(float(t))
        self.velocities.append(np.array(velocities))
        if theta is not None:
            self.theta.append(np.array(theta))
        if alpha is not None:
            self.alpha.append(np.array(alpha))
        if keep is not None:
            del self.times[:-keep]
            del self.velocities[:-keep]


def freefall_residual(markers: MarkerSet, history: MarkerHistory, grid: CartesianGrid, g: np.ndarray):
    """Max and mean of ``|d/dt w(t, chi) - g(chi)|`` over alive boundary markers.

    The time derivative is taken along each marker's own velocity samples;
    ``g`` is the gravitational acceleration field at the latest sample time.
    """
    if len(history.times) < 3:
        raise ValueError("free-fall residual needs at least three history samples")
    alive = markers.alive
    if not alive.any():
        return 0.0, 0.0, np.zeros(0)
    accel = bdf2_derivative(history.times, history.velocities)
    gm = interpolate(grid, g, markers.positions[alive])
    r = np.linalg.norm(accel[alive] - gm, axis=1)
    return float(r.max()), float(r.mean()), r


def support_vs_markers(markers: MarkerSet, decomp: RegionDecomposition, grid: CartesianGrid) -> float:
    """Symmetric distance between alive markers and the support boundary shell."""
    shell = _cell_centers(grid, boundary_shell(decomp.support))
    pts = markers.positions[markers.alive]
    if shell.shape[0] == 0 or pts.shape[0] == 0:
        return float("inf") if (shell.shape[0] or pts.shape[0]) else 0.0
    d_markers, _ = cKDTree(shell).query(pts)
    d_shell, _ = cKDTree(pts).query(shell)
    return float(max(d_markers.max(), d_shell.max()))


def write_marker_rows(path, markers: MarkerSet, t: float, append: bool = True, offset: int = 0) -> None:
    """Append one row per marker to the trajectory CSV (header on creation)."""
    mode = "a" if append else "w"
    new = not append
    try:
        new = new or open(path).read(1) == ""
    except FileNotFoundError:
        new = True
    with open(path, mode, newline="") as fh:
        wr = csv.writer(fh)
        if new:
            wr.writerow(MARKER_COLUMNS)
        for i in range(len(markers)):
            wr.writerow([i + offset, repr(float(t)),
                         *(repr(float(v)) for v in markers.labels[i]),
                         *(repr(float(v)) for v in markers.positions[i]),
                         *(repr(float(v)) for v in markers.velocities[i]),
                         int(markers.alive[i])])
