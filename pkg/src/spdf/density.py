"""Expected kernel strengths and saliency thresholds under uniform density."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import special

Xi1Convention = Literal["general_formula", "printed"]

# below this rho^2/sigma the closed forms lose digits to cancellation (the
# three-dimensional one badly); the alternating series is exact to rounding there
_SERIES_CUTOFF = 1.0
_SERIES_TERMS = 30


@dataclass(frozen=True)
class DensityParams:
    rho: float = 0.2
    sigma: float = 0.2
    xi1_convention: Xi1Convention = "general_formula"

    def __post_init__(self):
        if not self.rho > 0 or not self.sigma > 0:
            raise ValueError("rho and sigma must be positive")
        if self.xi1_convention not in ("general_formula", "printed"):
            raise ValueError(f"unknown xi1 convention {self.xi1_convention!r}")


def _series(dim: int, a: float) -> float:
    # E[exp(-a U^(2/D))] = sum_n (-a)^n / n! * D / (D + 2n)
    total = 0.0
    term = 1.0
    for n in range(_SERIES_TERMS):
        total += term * dim / (dim + 2 * n)
        term *= -a / (n + 1)
    return total


def expected_kernel_strength(
    dim: int, rho: float, sigma: float, xi1_convention: Xi1Convention = "general_formula"
) -> float:
    """Mean of ``exp(-d^2 / sigma)`` for ``d`` the radius of a uniform sample in a
    ``dim``-ball of radius ``rho``.

    ``xi1_convention="printed"`` halves the one-dimensional value, matching the
    1/(4 rho) prefactor of the published closed form.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {dim}")
    if not rho > 0 or not sigma > 0:
        raise ValueError("rho and sigma must be positive")
    a = rho * rho / sigma
    if a < _SERIES_CUTOFF:
        value = _series(dim, a)
    elif dim == 1:
        value = math.sqrt(math.pi * sigma) / (2.0 * rho) * math.erf(rho / math.sqrt(sigma))
    elif dim == 2:
        value = -math.expm1(-a) / a
    else:
        value = (
            3.0 * sigma / (4.0 * rho**3)
            * (math.sqrt(math.pi * sigma) * math.erf(rho / math.sqrt(sigma)) - 2.0 * rho * math.exp(-a))
        )
    if dim == 1 and xi1_convention == "printed":
        value *= 0.5
    return value


def expected_kernel_strength_gamma(dim: int, rho: float, sigma: float) -> float:
    """General incomplete-gamma form, kept as a cross-check of the closed forms."""
    a = rho * rho / sigma
    s = dim / 2.0
    return s * a ** (-s) * special.gamma(s) * special.gammainc(s, a)


@dataclass(frozen=True)
class ExpectedSaliencies:
    xi: tuple[float, float, float]
    curve_threshold: float
    surface_threshold: float
    point_threshold: float
    curve_eigenvalues: tuple[float, float, float]
    surface_eigenvalues: tuple[float, float, float]
    junction_eigenvalues: tuple[float, float, float]

    def thresholds(self) -> np.ndarray:
        """Thresholds ordered like saliencies: (surface, curve, point)."""
        return np.array([self.surface_threshold, self.curve_threshold, self.point_threshold])


def expected_saliencies(params: DensityParams) -> ExpectedSaliencies:
    xi1, xi2, xi3 = (
        expected_kernel_strength(d, params.rho, params.sigma, params.xi1_convention)
        for d in (1, 2, 3)
    )
    return ExpectedSaliencies(
        xi=(xi1, xi2, xi3),
        curve_threshold=0.5 * xi1,
        surface_threshold=0.25 * xi2,
        point_threshold=5.0 / 6.0 * xi3,
        curve_eigenvalues=(xi1, xi1, 0.5 * xi1),
        surface_eigenvalues=(xi2, 0.75 * xi2, 0.75 * xi2),
        junction_eigenvalues=(5.0 / 6.0 * xi3,) * 3,
    )
