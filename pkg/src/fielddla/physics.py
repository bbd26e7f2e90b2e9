"""Closed-form force and transport laws for polarizable spheres in a dielectric fluid."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .core import BOLTZMANN, MediumSpec, ParticleMaterialSpec

COS2_CONE = 1.0 / 3.0  # radial dipole force changes sign at cos^2(theta) = 1/3


class ComplexFactor(NamedTuple):
    re: float
    im: float


class ForceVector(NamedTuple):
    fx: float
    fy: float


class TransportCoefficients(NamedTuple):
    drag: float  # N s/m
    diffusion: float  # m^2/s


class DegenerateMaterialError(ValueError):
    pass


def clausius_mossotti(p: ParticleMaterialSpec, m: MediumSpec, omega: float = 0.0) -> ComplexFactor:
    """Clausius-Mossotti factor of a sphere; ``omega=0`` gives the DC conductivity limit.

    With both conductivities zero the DC limit is undefined and the permittivity
    (high-frequency) form is returned instead.
    """
    if omega < 0:
        raise ValueError("omega must be >= 0")
    eps_p, eps_m = p.permittivity, m.permittivity
    sig_p, sig_m = p.conductivity, m.conductivity
    if omega == 0:
        den = sig_p + 2 * sig_m
        if den > 0:
            return ComplexFactor((sig_p - sig_m) / den, 0.0)
        den = eps_p + 2 * eps_m
        if den == 0:
            raise DegenerateMaterialError("both DC and permittivity limits are undefined")
        return ComplexFactor((eps_p - eps_m) / den, 0.0)
    num = complex(eps_p - eps_m, -(sig_p - sig_m) / omega)
    den = complex(eps_p + 2 * eps_m, -(sig_p + 2 * sig_m) / omega)
    if den == 0:
        raise DegenerateMaterialError("Clausius-Mossotti denominator vanishes")
    beta = num / den
    return ComplexFactor(beta.real, beta.imag)


def dep_force(R: float, m: MediumSpec, re_beta: float, grad_field_sq) -> ForceVector:
    """Dielectrophoretic force 2 pi R^3 eps_m Re[beta] grad|E|^2."""
    k = 2.0 * math.pi * R**3 * m.permittivity * re_beta
    return ForceVector(k * grad_field_sq[0], k * grad_field_sq[1])


def pair_prefactor(R: float, eps_m: float, re_beta: float) -> float:
    """12 pi eps_m beta^2 R^6: the dipole pair force is this times E^2 / r^4."""
    return 12.0 * math.pi * eps_m * re_beta**2 * R**6


def dipole_pair_force(r_vec, R: float, m: MediumSpec, re_beta: float, field,
                      model: str = "radial_eq2") -> ForceVector:
    """Force on particle B from induced dipole A, with ``r_vec`` pointing from A to B.

    The force on A is the exact negation.  ``field`` is the field vector at the
    pair midpoint and sets both the moment size and the angle theta.  In
    ``radial_eq2`` mode only the radial component
    ``12 pi eps_m beta^2 E^2 R^6 / r^4 (1 - 3 cos^2 theta)`` is returned
    (positive = repulsion); ``full_point_dipole`` adds the tangential part of the
    point-dipole interaction.  Separations below contact are clamped to 2R.
    """
    rx, ry = float(r_vec[0]), float(r_vec[1])
    r = math.hypot(rx, ry)
    if r == 0:
        raise ZeroDivisionError("dipole pair force at zero separation")
    ex, ey = float(field[0]), float(field[1])
    e2 = ex * ex + ey * ey
    if e2 == 0:
        return ForceVector(0.0, 0.0)
    fx, fy = _pair_force(rx, ry, ex, ey, pair_prefactor(R, m.permittivity, re_beta), 2 * R,
                         model == "full_point_dipole")
    return ForceVector(fx, fy)


def _pair_force(rx, ry, ex, ey, pref, r_min, full):
    r = math.hypot(rx, ry)
    e2 = ex * ex + ey * ey
    ux, uy = rx / r, ry / r
    emag = math.sqrt(e2)
    cos_t = (ux * ex + uy * ey) / emag
    rc = max(r, r_min)
    scale = pref * e2 / rc**4
    if not full:
        mag = scale * (1.0 - 3.0 * cos_t * cos_t)
        return mag * ux, mag * uy
    radial = scale * (1.0 - 5.0 * cos_t * cos_t)
    along = scale * 2.0 * cos_t / emag
    return radial * ux + along * ex, radial * uy + along * ey


def stokes_drag(R: float, eta: float) -> float:
    if R <= 0 or eta <= 0:
        raise ValueError("R and eta must be > 0")
    return 6.0 * math.pi * eta * R


def einstein_diffusion(T: float, mu: float) -> float:
    if T <= 0 or mu <= 0:
        raise ValueError("T and mu must be > 0")
    return BOLTZMANN * T / mu


def transport(R: float, m: MediumSpec) -> TransportCoefficients:
    mu = stokes_drag(R, m.dynamic_viscosity)
    return TransportCoefficients(mu, einstein_diffusion(m.temperature, mu))


def crossover_radius(field_sq: float, grad_field_sq_mag: float, R: float) -> float:
    """Distance beyond which the DEP force is comparable to the dipole pair force."""
    if grad_field_sq_mag == 0:
        raise ZeroDivisionError("uniform field: DEP force never comparable to the pair force")
    return (12.0 * field_sq * R**3 / abs(grad_field_sq_mag)) ** 0.25


def thermal_threshold_field(R: float, m: MediumSpec, re_beta: float = 1.0) -> float:
    """Field at which the contact dipole attraction energy equals kT.

    Two touching dipoles aligned with the field bind with energy
    pi eps_m beta^2 R^3 E^2; below this field Brownian motion breaks chains
    as fast as they form.
    """
    return math.sqrt(m.kT / (math.pi * m.permittivity * re_beta**2 * R**3))


def default_pair_cutoff(R: float, m: MediumSpec, re_beta: float, field: float) -> float:
    """min(25 R, distance where the strongest pair force drops below 1e-4 kT/R)."""
    peak = 2.0 * pair_prefactor(R, m.permittivity, re_beta) * field**2
    if peak == 0:
        return 25.0 * R
    r_small = (peak * R / (1e-4 * m.kT)) ** 0.25
    return max(min(25.0 * R, r_small), 2.0 * R * 1.5)


def pair_forces_bruteforce(pos, R, eps_m, re_beta, field_fn, full=False, r_cut=np.inf, groups=None):
    """All-pairs reference for the cell-list force kernel (O(N^2), testing only).

    ``groups`` (cluster labels) excludes pairs inside the same rigid cluster.
    """
    n = len(pos)
    out = np.zeros((n, 2))
    pref = pair_prefactor(R, eps_m, re_beta)
    for i in range(n):
        for j in range(n):
            if i == j or (groups is not None and groups[i] == groups[j]):
                continue
            rx, ry = pos[i, 0] - pos[j, 0], pos[i, 1] - pos[j, 1]
            if math.hypot(rx, ry) >= r_cut:
                continue
            ex, ey = field_fn(0.5 * (pos[i, 0] + pos[j, 0]), 0.5 * (pos[i, 1] + pos[j, 1]))
            if ex == 0 and ey == 0:
                continue
            fx, fy = _pair_force(rx, ry, ex, ey, pref, 2 * R, full)
            out[i, 0] += fx
            out[i, 1] += fy
    return out
