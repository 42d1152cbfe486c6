"""Isentropic equation of state and Makino-variable closures.

The Makino density ``alpha`` is the primary stored thermodynamic variable;
density, pressure and sound speed are derived from it on demand.

    alpha = 2 sqrt(K gamma) / (gamma - 1) * rho ** ((gamma - 1) / 2)
    c_s   = (gamma - 1) / 2 * alpha
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "DomainError",
    "EquationOfState",
    "density_to_makino",
    "makino_to_density",
    "pressure",
    "sound_speed",
]


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a closure."""


@dataclass(frozen=True)
class EquationOfState:
    """Polytrope ``p = K rho**gamma``.

    ``regularity_case`` selects the admissible exponent range of the local
    existence theory: ``"A"`` needs ``1 < gamma <= 5/3``, ``"B"`` needs
    ``1 < gamma < 2``.  ``None`` only enforces ``gamma > 1``.
    """

    K: float
    gamma: float
    regularity_case: Optional[str] = None

    def __post_init__(self):
        if not (self.K > 0 and math.isfinite(self.K)):
            raise DomainError(f"K must be positive and finite, got {self.K}")
        if not (self.gamma > 1 and math.isfinite(self.gamma)):
            raise DomainError(f"gamma must exceed 1, got {self.gamma}")
        case = self.regularity_case
        if case not in (None, "A", "B"):
            raise DomainError(f"regularity_case must be 'A', 'B' or None, got {case!r}")
        if case == "A" and self.gamma > 5.0 / 3.0:
            raise DomainError(f"case A requires gamma <= 5/3, got gamma={self.gamma}")
        if case == "B" and self.gamma >= 2.0:
            raise DomainError(f"case B requires gamma < 2, got gamma={self.gamma}")

    @property
    def makino_factor(self) -> float:
        """Coefficient of ``rho**((gamma-1)/2)`` in the Makino density."""
        return 2.0 * math.sqrt(self.K * self.gamma) / (self.gamma - 1.0)

    @property
    def half_gm1(self) -> float:
        """``(gamma - 1) / 2``, the coupling coefficient of the Makino system."""
        return 0.5 * (self.gamma - 1.0)

    @property
    def density_exponent(self) -> float:
        """``2 / (gamma - 1)``: ``rho`` is proportional to ``alpha`` to this power."""
        return 2.0 / (self.gamma - 1.0)

    @property
    def density_scale(self) -> float:
        """``(4 K gamma / (gamma-1)**2) ** (-1/(gamma-1))``."""
        g = self.gamma
        return (4.0 * self.K * g / (g - 1.0) ** 2) ** (-1.0 / (g - 1.0))


def _check_nonneg(x, name):
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError(f"{name} must be non-negative")
    return arr


def _scalar_or_array(result, like):
    return float(result) if np.ndim(like) == 0 else result


def density_to_makino(rho, eos: EquationOfState):
    """Makino density of ``rho`` (scalar or array)."""
    r = _check_nonneg(rho, "rho")
    out = eos.makino_factor * r ** eos.half_gm1
    return _scalar_or_array(out, rho)


def makino_to_density(alpha, eos: EquationOfState):
    """Inverse of :func:`density_to_makino`."""
    a = _check_nonneg(alpha, "alpha")
    out = eos.density_scale * a ** eos.density_exponent
    return _scalar_or_array(out, alpha)


def pressure(rho, eos: EquationOfState):
    r = _check_nonneg(rho, "rho")
    return _scalar_or_array(eos.K * r ** eos.gamma, rho)


def sound_speed(alpha, eos: EquationOfState):
    """Sound speed ``(gamma-1)/2 * alpha``; equals ``sqrt(K gamma rho**(gamma-1))``."""
    a = _check_nonneg(alpha, "alpha")
    return _scalar_or_array(eos.half_gm1 * a, alpha)
