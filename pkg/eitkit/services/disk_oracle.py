"""
Closed-form reference solutions on the unit disk.

For radially layered conductivities every Fourier mode separates: in a
layer of conductivity s the mode-k potential is (a r^k + b r^-k) e^{ikθ},
and the pair (u, s r u_r / k) is carried across layers by a 2x2 transfer
step. The two-layer and three-layer coefficient families used as ground
truth for the truncation experiments are exposed directly.
"""

import cmath
import logging
import math
from typing import List, Tuple

import numpy as np

from eitkit.models.layers import CONDUCTING, INSULATING, RadialLayers
from eitkit.utils.validators import ValidationError

logger = logging.getLogger(__name__)

VARIANTS = ('sigma', 'sigma_hat')

# (r_lo, r_hi, a, b, conductivity) with u = (a r + b / r) e^{iθ} on r_lo < r < r_hi
LayerCoefficients = Tuple[float, float, float, float, float]


def radial_nd_eigenvalue(layers: RadialLayers, k: int) -> float:
    """
    Boundary coefficient λ_k with u(1, θ) = λ_k e^{ikθ} for Neumann data e^{ikθ}.

    An insulating innermost layer imposes zero flux at r₁, a conducting one
    a constant (hence zero mode-k) potential on r ≤ r₁.
    """
    if int(k) != k or k < 1:
        raise ValidationError(f"Mode number must be a positive integer, got {k}")
    k = int(k)

    r1 = layers.radii[0]
    if layers.values[0] == INSULATING:
        u, flux = 1.0, 0.0
    elif layers.values[0] == CONDUCTING:
        u, flux = 0.0, 1.0
    else:
        u, flux = 1.0, layers.values[0]

    r_in = r1
    for r_out, s in zip(layers.radii[1:], layers.values[1:]):
        t = (r_out / r_in) ** k
        grow = 0.5 * (u + flux / s)
        decay = 0.5 * (u - flux / s)
        u, flux = grow * t + decay / t, s * (grow * t - decay / t)
        scale = max(abs(u), abs(flux))
        u, flux = u / scale, flux / scale
        r_in = r_out

    return u / (k * flux)


def radial_nd_matrix(layers: RadialLayers, max_mode: int) -> np.ndarray:
    """ND matrix in the Fourier basis ordered cos1, sin1, cos2, sin2, ..."""
    eigenvalues = [radial_nd_eigenvalue(layers, k) for k in range(1, max_mode + 1)]
    return np.diag(np.repeat(eigenvalues, 2))


def layered_family(variant: str, eps: float) -> RadialLayers:
    """
    Layered conductivities of the two truncation families.

    sigma: ε on r < 1/2, 1 outside. sigma_hat: ε² on r < 1/4, ε on
    1/4 < r < 1/2, 1 outside. At ε = 0 both become an insulating disk of
    radius 1/2.
    """
    _check_variant(variant, eps)
    if eps == 0:
        return RadialLayers((0.5, 1.0), (INSULATING, 1.0))
    if variant == 'sigma':
        return RadialLayers((0.5, 1.0), (eps, 1.0))
    return RadialLayers((0.25, 0.5, 1.0), (eps ** 2, eps, 1.0))


def layered_family_coefficients(variant: str, eps: float) -> List[LayerCoefficients]:
    """Per-layer coefficients of the mode-1 potential with Neumann data e^{iθ}"""
    _check_variant(variant, eps)

    if variant == 'sigma':
        d = 3.0 + 5.0 * eps
        return [
            (0.0, 0.5, 8.0 / d, 0.0, eps),
            (0.5, 1.0, 4.0 * (1.0 + eps) / d, (1.0 - eps) / d, 1.0),
        ]

    d = 15.0 + 24.0 * eps + 25.0 * eps ** 2
    return [
        (0.0, 0.25, 64.0 / d, 0.0, eps ** 2),
        (0.25, 0.5, 32.0 * (1.0 + eps) / d, 2.0 * (1.0 - eps) / d, eps),
        (0.5, 1.0, 4.0 * (5.0 + 6.0 * eps + 5.0 * eps ** 2) / d, 5.0 * (1.0 - eps ** 2) / d, 1.0),
    ]


def layered_family_potential(variant: str, eps: float, r: float, theta: float) -> complex:
    """Mode-1 potential of either family at (r, θ); ε = 0 gives the limit potentials"""
    if not 0 < r <= 1:
        raise ValidationError(f"Radius must satisfy 0 < r <= 1, got {r}")

    layers = layered_family_coefficients(variant, eps)
    _, _, a, b, _ = next((c for c in layers if r < c[1]), layers[-1])
    return (a * r + b / r) * cmath.exp(1j * theta)


def layered_family_flux(variant: str, eps: float, r: float, side: str = 'inner') -> float:
    """Radial flux s ∂_r of the mode-1 radial factor, taking the inner or outer branch at interfaces"""
    if not 0 < r <= 1:
        raise ValidationError(f"Radius must satisfy 0 < r <= 1, got {r}")

    layers = layered_family_coefficients(variant, eps)
    if side == 'inner':
        chosen = next(c for c in layers if r <= c[1])
    else:
        chosen = next((c for c in layers if r < c[1]), layers[-1])
    _, _, a, b, conductivity = chosen
    return conductivity * (a - b / r ** 2)


def limit_ambiguity_gap() -> float:
    """Difference of the interior limit coefficients of the two families (64/15 − 8/3)"""
    sigma_inner = layered_family_coefficients('sigma', 0.0)[0][2]
    sigma_hat_inner = layered_family_coefficients('sigma_hat', 0.0)[0][2]
    gap = sigma_hat_inner - sigma_inner
    logger.info(f"Interior limit coefficients: {sigma_inner:.6f} and {sigma_hat_inner:.6f}, gap {gap:.6f}")
    return gap


def _check_variant(variant: str, eps: float) -> None:
    if variant not in VARIANTS:
        raise ValidationError(f"Unknown variant '{variant}', expected one of {VARIANTS}")
    if not (eps >= 0 and math.isfinite(eps)):
        raise ValidationError(f"eps must be finite and nonnegative, got {eps}")
