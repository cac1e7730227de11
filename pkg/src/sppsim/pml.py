"""Radial complex coordinate stretch in the outer annulus of the disk.

The stretch acts for r >= rho (rho = 0.8 R by default) with the quadratic
profile s(r) = s0 (r - rho)^2 / (R - rho)^2.  Its antiderivative is a cubic
and is always evaluated in closed form.  The two stretch factors are

    d(r)    = 1 + i s(r),
    dbar(r) = 1 + (i/r) * integral_rho^r s(t) dt,

and they modify the coefficients of the curl-curl form inside the layer:

    1/mu   -> (1/mu)/d                      (scalar acting on the 2D curl),
    eps    -> eps * diag(dbar^2/d, d)       in the (radial, tangential) frame,
    sigma  -> sigma * dbar/d                on sheet faces inside the layer.

Outside the layer every factor is exactly one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PmlSpec:
    """Annulus geometry and strength of the absorbing layer."""

    R: float
    s0: float = 2.0
    rho: float = field(default=0.0)

    def __post_init__(self):
        if self.rho == 0.0:
            object.__setattr__(self, "rho", 0.8 * self.R)
        if not (0 < self.rho < self.R):
            raise ValueError("need 0 < rho < R")
        if self.s0 < 0:
            raise ValueError("stretch strength must be nonnegative")


@dataclass(frozen=True)
class StretchFactors:
    d: complex
    dbar: complex
    e_r: tuple[float, float]


def profile(r, spec: PmlSpec):
    """Stretch profile s(r); vanishes with its derivative at the inner rim."""
    r = np.asarray(r, dtype=float)
    width = spec.R - spec.rho
    s = spec.s0 * np.clip(r - spec.rho, 0.0, None) ** 2 / width**2
    return s if s.ndim else float(s)


def profile_integral(r, spec: PmlSpec):
    """Closed-form integral of s from rho to r (cubic antiderivative)."""
    r = np.asarray(r, dtype=float)
    width = spec.R - spec.rho
    out = spec.s0 * np.clip(r - spec.rho, 0.0, None) ** 3 / (3.0 * width**2)
    return out if out.ndim else float(out)


def stretch_arrays(pts: np.ndarray, spec: PmlSpec):
    """Vectorized stretch factors: d (n,), dbar (n,), radial direction (n,2)."""
    pts = np.asarray(pts, dtype=float)
    r = np.hypot(pts[:, 0], pts[:, 1])
    d = 1.0 + 1j * profile(r, spec)
    central = r < 1e-12 * spec.R   # identity region; radial direction immaterial
    safe_r = np.where(central, 1.0, r)
    dbar = 1.0 + 1j * profile_integral(r, spec) / safe_r
    e_r = np.where(central[:, None], np.array([1.0, 0.0])[None, :],
                   pts / safe_r[:, None])
    return d, dbar, e_r


def stretch(point, spec: PmlSpec) -> StretchFactors:
    """Stretch factors at a single point (|point| <= R)."""
    d, dbar, e_r = stretch_arrays(np.asarray(point, dtype=float)[None, :], spec)
    return StretchFactors(d=complex(d[0]), dbar=complex(dbar[0]),
                          e_r=(float(e_r[0, 0]), float(e_r[0, 1])))


def material_arrays(pts: np.ndarray, mu_r: complex, eps_r: complex, spec: PmlSpec):
    """PML-modified volume coefficients at many points.

    Returns (inv_mu_eff (n,), eps_eff (n,2,2)); identity modification outside
    the layer.  eps_eff is complex symmetric by construction.
    """
    d, dbar, e_r = stretch_arrays(pts, spec)
    inv_mu = (1.0 / mu_r) / d
    eps_rad = eps_r * dbar**2 / d
    eps_tan = eps_r * d
    eye = np.eye(2)[None, :, :]
    outer = e_r[:, :, None] * e_r[:, None, :]
    eps_eff = eps_tan[:, None, None] * eye + (eps_rad - eps_tan)[:, None, None] * outer
    return inv_mu, eps_eff


def sheet_arrays(pts: np.ndarray, sigma_r: complex, spec: PmlSpec):
    """PML-modified sheet conductivity sigma * dbar/d at points on the sheet."""
    d, dbar, _ = stretch_arrays(pts, spec)
    return sigma_r * dbar / d


def transform_materials(point, mu_r: complex, eps_r: complex, sigma_r: complex,
                        spec: PmlSpec):
    """(mu_eff, eps_eff 2x2, sigma_eff) at one point; identity outside the layer."""
    pt = np.asarray(point, dtype=float)[None, :]
    inv_mu, eps_eff = material_arrays(pt, mu_r, eps_r, spec)
    sigma_eff = sheet_arrays(pt, sigma_r, spec)
    return 1.0 / complex(inv_mu[0]), eps_eff[0], complex(sigma_eff[0])
