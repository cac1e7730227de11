"""Rescaling of physical inputs to the dimensionless quantities used everywhere else.

All downstream modules work exclusively in rescaled units: lengths are measured
in units of the inverse free-space wave number, material parameters are relative
to vacuum, and the sheet conductivity is normalized by the vacuum impedance.
The free-space wave number is therefore 1 internally; the physical k0 is kept
only for reporting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalInputs:
    """Physical (SI-style) problem data prior to rescaling.

    omega: angular frequency [rad/s], eps0/mu0: vacuum permittivity and
    permeability, J0: dipole current strength [A], mu/eps_tilde: (scalar)
    material tensors, sigma_sheet: complex surface conductivity [S].
    dipole_height is the physical elevation of the source above the sheet.
    """

    omega: float
    eps0: float
    mu0: float
    J0: float
    mu: complex
    eps_tilde: complex
    sigma_sheet: complex
    dipole_height: float | None = None

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"angular frequency must be positive, got {self.omega}")
        if not (self.eps0 > 0 and self.mu0 > 0):
            raise ValueError("vacuum permittivity and permeability must be positive")
        if self.J0 == 0:
            raise ValueError("dipole current strength must be nonzero")


@dataclass(frozen=True)
class RescaledModel:
    """Dimensionless material data plus the wave number used for the rescaling.

    All lengths downstream are in units of 1/k0.
    """

    mu_r: complex
    eps_r: complex
    sigma_r: complex
    k0: float
    a: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.eps_r.real):
            raise ValueError("relative permittivity must be finite")
        if self.eps_r.imag < 0:
            raise ValueError("passive media require Im(eps_r) >= 0")
        if self.sigma_r.imag < 0 or self.sigma_r.real < 0:
            raise ValueError("physical sheets require Re(sigma_r) >= 0 and Im(sigma_r) >= 0")


def rescale(inputs: PhysicalInputs) -> RescaledModel:
    """Map physical inputs to the dimensionless model.

    mu_r = mu/mu0, eps_r = eps_tilde/eps0, sigma_r = sqrt(mu0/eps0) * sigma_sheet,
    k0 = omega*sqrt(eps0*mu0).  Lengths are multiplied by k0.
    """
    k0 = inputs.omega * math.sqrt(inputs.eps0 * inputs.mu0)
    impedance = math.sqrt(inputs.mu0 / inputs.eps0)
    a = None if inputs.dipole_height is None else k0 * inputs.dipole_height
    return RescaledModel(
        mu_r=complex(inputs.mu) / inputs.mu0,
        eps_r=complex(inputs.eps_tilde) / inputs.eps0,
        sigma_r=impedance * complex(inputs.sigma_sheet),
        k0=k0,
        a=a,
    )
