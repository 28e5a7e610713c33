"""Reflection coefficients on the imaginary frequency axis.

``metal_halfspace_reflection`` is the vacuum/metal interface (sphere side),
``coated_plate_reflection`` the vacuum/graphene-on-dielectric interface
(plate side).  Signs follow the usual Lifshitz convention: r_TE <= 0 for
eps > 1.  Only the products r R enter the force, so a global sign flip of
the TE pair would go unnoticed by force checks; the tests pin the signs.

Differences such as eps q - k1 are rewritten algebraically so that nearly
transparent media (eps -> 1) do not lose precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import C, HBAR
from .polarization import PolarizationComponents


@dataclass(frozen=True)
class ReflectionPair:
    r_tm: float
    r_te: float


def _check_eps(eps):
    if np.any(np.asarray(eps) < 1):
        raise ValueError("permittivity on the imaginary axis must be >= 1")


def metal_coefficients(xi, k, eps):
    """Vectorised (r_TM, r_TE) of a vacuum/half-space interface."""
    _check_eps(eps)
    k = np.asarray(k, dtype=float)
    kx = xi / C
    if math.isinf(eps):
        return np.ones_like(k), (np.zeros_like(k) if xi == 0 else -np.ones_like(k))
    q = np.sqrt(k * k + kx * kx)
    k1 = np.sqrt(k * k + eps * kx * kx)
    em1 = eps - 1.0
    r_tm = em1 * ((eps + 1.0) * k * k + eps * kx * kx) / (eps * q + k1) ** 2
    r_te = -em1 * kx * kx / (q + k1) ** 2
    return r_tm, r_te


def plate_coefficients(xi, k, eps, pi00, pi):
    """Vectorised (R_TM, R_TE) of a graphene-coated half-space.

    ``pi00`` and ``pi`` are the SI tensor components (J s/m and J s/m^3).
    """
    _check_eps(eps)
    k = np.asarray(k, dtype=float)
    kx = xi / C
    k2sq = k * k
    q = np.sqrt(k2sq + kx * kx)
    p00 = np.asarray(pi00, dtype=float) / HBAR
    p = np.asarray(pi, dtype=float) / HBAR
    if math.isinf(eps):
        r_tm = np.ones_like(k)
        if xi == 0:
            r_te = -p / (2.0 * k2sq * k + p)
        else:
            r_te = -np.ones_like(k)
        return r_tm, r_te
    k2 = np.sqrt(k2sq + eps * kx * kx)
    em1 = eps - 1.0
    diff_tm = em1 * ((eps + 1.0) * k2sq + eps * kx * kx) / (eps * q + k2)
    with np.errstate(invalid="ignore"):
        g = q * k2 * p00
        r_tm = (k2sq * diff_tm + g) / (k2sq * (eps * q + k2) + g)
    r_tm = np.where(np.isinf(p00), 1.0, r_tm)
    diff_te = -em1 * kx * kx / (q + k2)
    r_te = (k2sq * diff_te - p) / (k2sq * (q + k2) + p)
    return r_tm, r_te


def metal_halfspace_reflection(xi: float, k_perp: float, eps1: float) -> ReflectionPair:
    """Vacuum/metal coefficients.

    ``eps1`` may be :data:`~casimir_graphene.materials.INFINITE_STATIC`; at
    xi = 0 that gives (1, 0), the static limit of a Drude metal, and at
    xi > 0 the ideal-metal pair (1, -1).
    """
    if not k_perp > 0 or not xi >= 0:
        raise ValueError("need k_perp > 0 and xi >= 0")
    tm, te = metal_coefficients(xi, np.array([k_perp]), eps1)
    return ReflectionPair(float(tm[0]), float(te[0]))


def coated_plate_reflection(xi: float, k_perp: float, eps2: float,
                            pol: PolarizationComponents) -> ReflectionPair:
    if not k_perp > 0 or not xi >= 0:
        raise ValueError("need k_perp > 0 and xi >= 0")
    if pol.pi00 < 0 or pol.pi < 0:
        raise ValueError("polarization components must be >= 0")
    tm, te = plate_coefficients(xi, np.array([k_perp]), eps2, pol.pi00, pol.pi)
    return ReflectionPair(float(tm[0]), float(te[0]))
