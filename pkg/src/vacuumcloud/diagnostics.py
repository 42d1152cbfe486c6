"""Kinematics, continuation-criterion bookkeeping, relative entropy and ledgers.

Norm conventions: tensor magnitudes (``W``, ``Omega_jk``, ``grad w``) are
Frobenius norms per cell, vector magnitudes are Euclidean.  Sup norms are
maxima over cell centres of the named mask.

The strong criterion logs ``sup |grad alpha|``.  Since
``alpha = 2 sqrt(K gamma)/(gamma-1) rho**((gamma-1)/2)``, the quantity
``sup |grad rho**((gamma-1)/2)|`` is that value divided by ``eos.makino_factor``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import EquationOfState
from .grid import CartesianGrid, RegionDecomposition
from .hyper import SystemState, density

__all__ = [
    "ConservationRecord",
    "ContinuationRecord",
    "KinematicDecomposition",
    "STRONG_TERMS",
    "Thresholds",
    "VelocityGradient",
    "Verdict",
    "blowup_classify",
    "conservation",
    "continuation_update",
    "decompose",
    "diffuse_residual",
    "discrete_sobolev",
    "fit_apriori_shape",
    "relative_entropy",
]

STRONG_TERMS = ("strip_W", "interior_theta", "interior_omega", "grad_alpha")
WEAK_TERMS = ("grad_w", "grad_alpha")
TERM_LABELS = {
    "strip_W": "strip |W|",
    "interior_theta": "interior expansion",
    "interior_omega": "interior rotation",
    "grad_alpha": "|grad alpha|",
    "grad_w": "|grad w|",
}


# ---------------------------------------------------------------------------
# velocity gradient


@dataclass
class VelocityGradient:
    """``W[j, k] = d_k w^j`` per physical cell (index lowered with delta)."""

    W: np.ndarray  # (3, 3, nx, ny, nz)
    valid: np.ndarray


@dataclass
class KinematicDecomposition:
    theta_jk: np.ndarray
    omega_jk: np.ndarray
    theta: np.ndarray


def _derivative_in_region(f: np.ndarray, region: np.ndarray, axis: int, h: float) -> np.ndarray:
    """d f / dx_axis on physical cells, one-sided where the central stencil leaves ``region``.

    ``f`` is given on physical cells only.  Central differences are used when
    both neighbours lie in the region, otherwise the second-order one-sided
    stencil pointing into the region, falling back to first order, then to
    the plain central difference with zero extension.
    """
    fm = np.moveaxis(f, axis, 0)
    rm = np.moveaxis(region, axis, 0)
    n = fm.shape[0]
    pad_f = np.concatenate([np.zeros((2,) + fm.shape[1:]), fm, np.zeros((2,) + fm.shape[1:])])
    pad_r = np.concatenate([np.zeros((2,) + rm.shape[1:], bool), rm, np.zeros((2,) + rm.shape[1:], bool)])

    def F(k):
        return pad_f[2 + k:2 + k + n]

    def R(k):
        return pad_r[2 + k:2 + k + n]

    central = (F(1) - F(-1)) / (2 * h)
    fwd2 = (-3 * F(0) + 4 * F(1) - F(2)) / (2 * h)
    bwd2 = (3 * F(0) - 4 * F(-1) + F(-2)) / (2 * h)
    fwd1 = (F(1) - F(0)) / h
    bwd1 = (F(0) - F(-1)) / h
    out = central.copy()
    has_c = R(-1) & R(1)
    use_f2 = ~has_c & R(1) & R(2)
    use_b2 = ~has_c & ~use_f2 & R(-1) & R(-2)
    use_f1 = ~has_c & ~use_f2 & ~use_b2 & R(1)
    use_b1 = ~has_c & ~use_f2 & ~use_b2 & ~use_f1 & R(-1)
    out[use_f2] = fwd2[use_f2]
    out[use_b2] = bwd2[use_b2]
    out[use_f1] = fwd1[use_f1]
    out[use_b1] = bwd1[use_b1]
    return np.moveaxis(out, 0, axis)


def velocity_gradient(w: np.ndarray, grid: CartesianGrid, region: Optional[np.ndarray] = None) -> VelocityGradient:
    """``W[j, k] = d_k w^j`` on physical cells; ``region=None`` means plain central differences."""
    sl = grid.interior
    W = np.empty((3, 3) + grid.dims)
    if region is None:
        for j in range(3):
            for k in range(3):
                a = np.moveaxis(w[k], j, 0)
                d = (a[2:] - a[:-2]) / (2 * grid.spacing[j])
                full = np.zeros_like(w[k])
                np.moveaxis(full, j, 0)[1:-1] = d
                W[k, j] = full[sl]
        return VelocityGradient(W, np.ones(grid.dims, bool))
    region = np.asarray(region, bool)
    for j in range(3):
        for k in range(3):
            W[k, j] = _derivative_in_region(w[k][sl], region, j, grid.spacing[j])
    return VelocityGradient(W, region.copy())


def decompose(w: np.ndarray, grid: CartesianGrid, region: Optional[np.ndarray] = None):
    """Velocity gradient and its symmetric / antisymmetric / trace parts.

    ``theta_jk = (W_jk + W_kj)/2``, ``omega_jk = (W_kj - W_jk)/2`` so that
    ``W_jk = theta_jk - omega_jk``; ``theta`` is the trace (divergence of w).
    For ``w = omega e_z x x`` this gives ``omega_12 = omega``.
    """
    vg = velocity_gradient(w, grid, region)
    W = vg.W
    Wt = np.swapaxes(W, 0, 1)
    theta_jk = 0.5 * (W + Wt)
    omega_jk = 0.5 * (Wt - W)
    theta = theta_jk[0, 0] + theta_jk[1, 1] + theta_jk[2, 2]
    return vg, KinematicDecomposition(theta_jk, omega_jk, theta)


def _frob(T: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(T * T, axis=(0, 1)))


def _sup(values: np.ndarray, mask: np.ndarray) -> float:
    return float(np.max(values[mask])) if mask.any() else 0.0


# ---------------------------------------------------------------------------
# continuation record


@dataclass
class ContinuationRecord:
    epsilon: float
    times: List[float] = field(default_factory=list)
    samples: Dict[str, List[float]] = field(
        default_factory=lambda: {k: [] for k in ("strip_W", "interior_theta", "interior_omega",
                                                 "grad_alpha", "grad_w", "sup_alpha")})
    integrals: Dict[str, List[float]] = field(
        default_factory=lambda: {k: [] for k in ("strip_W", "interior_theta", "interior_omega",
                                                 "grad_alpha", "grad_w", "sup_alpha")})

    @property
    def weak_series(self) -> np.ndarray:
        return np.asarray(self.integrals["grad_w"]) + np.asarray(self.integrals["grad_alpha"])

    @property
    def strong_series(self) -> np.ndarray:
        return sum(np.asarray(self.integrals[k]) for k in STRONG_TERMS)

    @property
    def weak_value(self) -> float:
        return float(self.weak_series[-1]) if self.times else 0.0

    @property
    def strong_value(self) -> float:
        return float(self.strong_series[-1]) if self.times else 0.0

    def __len__(self) -> int:
        return len(self.times)

    def append(self, t: float, values: Dict[str, float]) -> "ContinuationRecord":
        """Add a sample and advance every running integral by the trapezoid rule."""
        if self.times and t < self.times[-1]:
            raise ValueError("samples must be appended in time order")
        for key in self.samples:
            v = float(values.get(key, 0.0))
            prev_i = self.integrals[key][-1] if self.times else 0.0
            if self.times:
                prev_v = self.samples[key][-1]
                prev_i += 0.5 * (t - self.times[-1]) * (v + prev_v)
            self.samples[key].append(v)
            self.integrals[key].append(prev_i)
        self.times.append(float(t))
        return self


def criterion_sups(state: SystemState, decomp: RegionDecomposition) -> Dict[str, float]:
    """Region-split sup norms entering the weak and strong criteria."""
    grid = state.grid
    sl = grid.interior
    support = decomp.support
    _, kin = decompose(state.w, grid, support)
    vg_W = kin.theta_jk - kin.omega_jk
    W_mag = _frob(vg_W)
    ga = np.sqrt(sum(((state.alpha[tuple(_shift(sl, d, 1))] - state.alpha[tuple(_shift(sl, d, -1))])
                      / (2 * grid.spacing[d])) ** 2 for d in range(3)))
    return {
        "strip_W": _sup(W_mag, decomp.strip),
        "interior_theta": _sup(np.abs(kin.theta), decomp.interior),
        "interior_omega": _sup(_frob(kin.omega_jk), decomp.interior),
        "grad_alpha": _sup(ga, support),
        "grad_w": _sup(W_mag, support),
        "sup_alpha": _sup(state.alpha[sl], support),
    }


def _shift(sl, axis, k):
    out = list(sl)
    s = out[axis]
    out[axis] = slice(s.start + k, s.stop + k)
    return out


def continuation_update(record: ContinuationRecord, state: SystemState, decomp: RegionDecomposition,
                        dt: float = 0.0, values: Optional[Dict[str, float]] = None) -> ContinuationRecord:
    """Sample the criteria at ``state.time`` and advance the integrals.

    ``dt`` is informational; the trapezoid weight is taken from the sample
    times.  Precomputed ``values`` may be passed to skip the sup computation.
    """
    if values is None:
        values = criterion_sups(state, decomp)
    return record.append(state.time, values)


# ---------------------------------------------------------------------------
# blowup classification


@dataclass(frozen=True)
class Thresholds:
    weak: float = 20.0
    strong: float = 5.0
    rate: float = 2.5

    def __post_init__(self):
        for name in ("weak", "strong", "rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"threshold {name} must be positive")


@dataclass
class Verdict:
    kind: str  # none | weak-divergence | strong-divergence
    culprit: Optional[str] = None
    exponent: float = 0.0
    rates: Dict[str, float] = field(default_factory=dict)

    @property
    def label(self) -> str:
        return TERM_LABELS.get(self.culprit, self.culprit or "")


def _loglinear_rate(t: np.ndarray, v: np.ndarray) -> float:
    v = np.asarray(v, float)
    if np.any(v <= 0) or len(t) < 2 or np.ptp(t) == 0:
        return 0.0
    return float(np.polyfit(t, np.log(v), 1)[0])


def blowup_classify(record: ContinuationRecord, thresholds: Thresholds, window: int) -> Verdict:
    """Classify the trailing behaviour of ``record``.

    Growth rates are slopes of ``log(sup)`` against time over the last
    ``window`` samples.  The culprit is the term whose running integral grew
    most over the window, so a noise-level term with a steep log slope is not
    blamed.  Strong divergence needs ``strong_value`` above
    its threshold and the culprit's rate above ``thresholds.rate``; weak
    divergence is the same test on the weak terms.
    """
    if not isinstance(thresholds, Thresholds):
        thresholds = Thresholds(**thresholds)
    if window < 2:
        raise ValueError("window must be at least 2")
    if len(record) < window:
        return Verdict("none")
    t = np.asarray(record.times[-window:])
    rates = {k: _loglinear_rate(t, record.samples[k][-window:]) for k in set(STRONG_TERMS) | set(WEAK_TERMS)}

    def growth(k):
        ints = record.integrals[k]
        return (ints[-1] - ints[-window], rates[k])

    culprit = max(STRONG_TERMS, key=growth)
    if record.strong_value > thresholds.strong and rates[culprit] > thresholds.rate:
        return Verdict("strong-divergence", culprit, rates[culprit], rates)
    weak_culprit = max(WEAK_TERMS, key=growth)
    if record.weak_value > thresholds.weak and rates[weak_culprit] > thresholds.rate:
        return Verdict("weak-divergence", weak_culprit, rates[weak_culprit], rates)
    return Verdict("none", culprit, rates[culprit], rates)


# ---------------------------------------------------------------------------
# relative entropy


def relative_entropy(s1: SystemState, s2: SystemState) -> Tuple[np.ndarray, float]:
    """Pointwise relative entropy of ``s2`` with respect to ``s1`` and its integral."""
    if s1.grid != s2.grid:
        raise ValueError("relative entropy needs both states on the same grid")
    if s1.eos != s2.eos:
        raise ValueError("relative entropy needs a common equation of state")
    sl = s1.grid.interior
    rho1 = density(s1.alpha[sl], s1.eos)
    rho2 = density(s2.alpha[sl], s2.eos)
    dw = s2.w[(slice(None),) + sl] - s1.w[(slice(None),) + sl]
    eta = relative_entropy_density(rho1, rho2, dw, s1.eos.gamma)
    return eta, float(eta.sum() * s1.grid.cell_volume)


def relative_entropy_density(rho1, rho2, dw, gamma: float) -> np.ndarray:
    """``[rho2^g - rho1^g - g rho1^(g-1) (rho2 - rho1)]/(g-1) + rho2 |dw|^2 / 2``.

    ``dw`` has the vector component on axis 0.  Tiny negative values from
    cancellation are reset to zero; anything below ``-1e-12`` relative is
    reported as an error.
    """
    rho1 = np.asarray(rho1, float)
    rho2 = np.asarray(rho2, float)
    g = gamma
    thermal = (rho2 ** g - rho1 ** g - g * rho1 ** (g - 1) * (rho2 - rho1)) / (g - 1)
    kinetic = 0.5 * rho2 * np.sum(np.asarray(dw) ** 2, axis=0)
    eta = thermal + kinetic
    scale = np.maximum(rho1 ** g + rho2 ** g, 1e-300)
    if np.any(eta < -1e-12 * scale):
        raise ArithmeticError("relative entropy came out negative")
    return np.maximum(eta, 0.0)


# ---------------------------------------------------------------------------
# boundary regularity


def diffuse_residual(state: SystemState, decomp: RegionDecomposition, profile_bins: Optional[int] = None):
    """Sup over the strip of ``|grad rho^(gamma-1)|``.

    Uses ``rho^(gamma-1) = (gamma-1)^2 / (4 K gamma) * alpha^2`` and central
    differences of ``alpha^2``, which stay accurate at a physical-vacuum edge
    where ``alpha`` itself has a square-root profile.
    With ``profile_bins`` also returns ``(bin_edges, sup_per_bin)`` of the same
    quantity against distance to the support complement.
    """
    grid = state.grid
    eos = state.eos
    sl = grid.interior
    a2 = np.maximum(state.alpha, 0.0) ** 2
    coef = (eos.gamma - 1.0) ** 2 / (4.0 * eos.K * eos.gamma)
    val = coef * np.sqrt(sum(((a2[tuple(_shift(sl, d, 1))] - a2[tuple(_shift(sl, d, -1))])
                              / (2 * grid.spacing[d])) ** 2 for d in range(3)))
    sup = _sup(val, decomp.strip)
    if profile_bins is None:
        return sup
    dist = decomp.distance
    edges = np.linspace(0.0, float(dist.max()) if dist is not None and dist.size else 1.0, profile_bins + 1)
    prof = np.zeros(profile_bins)
    for i in range(profile_bins):
        m = decomp.support & (dist > edges[i]) & (dist <= edges[i + 1])
        prof[i] = _sup(val, m)
    return sup, (edges, prof)


# ---------------------------------------------------------------------------
# conservation ledger


@dataclass
class ConservationRecord:
    mass: float
    momentum: Tuple[float, float, float]
    energy: float
    clipped_mass: float


def conservation(state: SystemState, phi: Optional[np.ndarray]) -> ConservationRecord:
    """Midpoint-rule integrals of mass, momentum and total energy over the box."""
    grid = state.grid
    eos = state.eos
    sl = grid.interior
    vol = grid.cell_volume
    rho = density(state.alpha[sl], eos)
    w = state.w[(slice(None),) + sl]
    mass = float(rho.sum() * vol)
    mom = tuple(float((rho * w[d]).sum() * vol) for d in range(3))
    kinetic = 0.5 * rho * np.sum(w * w, axis=0)
    internal = eos.K * rho ** eos.gamma / (eos.gamma - 1.0)
    energy = float((kinetic + internal).sum() * vol)
    if phi is not None:
        energy += 0.5 * float((rho * phi[sl]).sum() * vol)
    return ConservationRecord(mass, mom, energy, float(state.clipped_mass))


# ---------------------------------------------------------------------------
# discrete Sobolev norm


def _forward_diff(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.zeros_like(a)
    src = np.moveaxis(a, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    dst[:-1] = (src[1:] - src[:-1]) / h
    return out


def discrete_sobolev(state: SystemState, order: int, support: Optional[np.ndarray] = None) -> float:
    """Discrete ``H^s`` norm of ``(alpha, w)`` over the support cells.

    Sums the squares of every mixed forward difference ``D^beta`` with
    ``|beta| <= order`` of each component (zero beyond the box), evaluated on
    support cells, times the cell volume.
    """
    if not 1 <= order <= 4:
        raise ValueError("order must be between 1 and 4")
    grid = state.grid
    sl = grid.interior
    if support is None:
        support = state.alpha[sl] > 0
    total = 0.0
    for comp in [state.alpha] + [state.w[d] for d in range(3)]:
        field = np.pad(comp[sl], order, constant_values=0.0)
        level = {(0, 0, 0): field}
        total += float(np.sum(field[_strip(order)][support] ** 2))
        for _ in range(order):
            nxt = {}
            for beta, arr in level.items():
                for d in range(3):
                    nb = list(beta)
                    nb[d] += 1
                    nb = tuple(nb)
                    if nb in nxt:
                        continue
                    # order of differencing is irrelevant for constant steps
                    nxt[nb] = _forward_diff(arr, d, grid.spacing[d])
            for arr in nxt.values():
                total += float(np.sum(arr[_strip(order)][support] ** 2))
            level = nxt
    return math.sqrt(total * grid.cell_volume)


def _strip(p: int):
    return (slice(p, -p),) * 3


def fit_apriori_shape(log_growth, weak_integral):
    """Least-squares ``log_growth ~ C * weak_integral`` through the origin.

    Returns ``(C, r_squared)``.
    """
    y = np.asarray(log_growth, float)
    x = np.asarray(weak_integral, float)
    denom = float(np.dot(x, x))
    if denom == 0:
        return 0.0, 0.0
    C = float(np.dot(x, y) / denom)
    ss_res = float(np.sum((y - C * x) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return C, r2
