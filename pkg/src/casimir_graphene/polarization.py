"""Dirac-model polarization tensor of gapped, doped graphene at imaginary frequency.

The two combinations entering the reflection coefficients, Pi00 and
Pi = k^2 Pi^beta_beta - q^2 Pi00, are split into the undoped zero-temperature
part (closed form) and a correction that carries the explicit dependence on
temperature and chemical potential (a one-dimensional integral over the
dimensionless variable u).

Conventions
-----------
``xi`` is in rad/s, ``k_perp`` in 1/m, ``mu`` and ``delta`` in eV.  Returned
components are SI: Pi00 in J s/m, Pi in J s/m^3, so that Pi00/hbar has units
1/m and Pi/hbar units 1/m^3.

Numerics of the u-integral
--------------------------
With gamma = xi/(c qt) and D = delta/(hbar c qt), the radicand
R(u) = 1 - u^2 + 2 i gamma u + D^2 (1 - gamma^2) factorises as
R = u_b^2 - (u - i gamma)^2 with u_b = sqrt((1 - gamma^2)(1 + D^2)).  At
gamma = 0 the integrands have an inverse-square-root singularity at u = u_b;
for gamma > 0 it is smoothed over a width ~gamma.  Panels are graded
geometrically toward u_b from both sides, the innermost panel uses the
substitution u - u_b = h w^2, and panels are capped at a width of a few
Fermi-function decay lengths.  Everything is evaluated through Re sqrt(R)
and Re sqrt(R)/|R| computed from real arithmetic, which is the principal
branch without cut ambiguity.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .constants import ALPHA, C, DEFAULT_VF_RATIO, E_CHARGE, HBAR, KB

#: Fermi factors are dropped once B u - mu/(k_B T) exceeds this.
FERMI_CUTOFF = 40.0
DEFAULT_U_ORDER = 12
_GRADING = 4.0
_MAX_GRADES = 24
_FERMI_PANEL = 2.5


class QuadratureError(RuntimeError):
    """The u-integral produced a non-finite value."""


@dataclass(frozen=True)
class GrapheneParams:
    """Dirac-model inputs: chemical potential and gap in eV, v_F/c."""

    mu: float = 0.0
    delta: float = 0.0
    vf_ratio: float = DEFAULT_VF_RATIO

    def __post_init__(self):
        if not self.mu >= 0:
            raise ValueError("chemical potential must be >= 0")
        if not self.delta >= 0:
            raise ValueError("energy gap must be >= 0")
        if not 0 < self.vf_ratio < 1:
            raise ValueError("vf_ratio must lie in (0, 1)")


@dataclass(frozen=True)
class SpectralPoint:
    xi: float
    k_perp: float

    def __post_init__(self):
        if not self.xi >= 0:
            raise ValueError("xi must be >= 0")
        if not self.k_perp > 0:
            raise ValueError("k_perp must be > 0")

    def derived(self, graphene: GrapheneParams, temperature: float | None = None) -> dict:
        """The dimensionless quantities qt, gamma, D and (for T > 0) B."""
        qt = math.hypot(graphene.vf_ratio * self.k_perp, self.xi / C)
        out = {"q_tilde": qt, "gamma": self.xi / (C * qt), "D": graphene.delta * E_CHARGE / (HBAR * C * qt)}
        if temperature:
            out["B"] = HBAR * C * qt / (2 * KB * temperature)
        return out


@dataclass(frozen=True)
class PolarizationComponents:
    pi00: float
    pi: float

    def __add__(self, other):
        return PolarizationComponents(self.pi00 + other.pi00, self.pi + other.pi)

    def __sub__(self, other):
        return PolarizationComponents(self.pi00 - other.pi00, self.pi - other.pi)


# --------------------------------------------------------------------------
# Psi and the undoped T = 0 tensor
# --------------------------------------------------------------------------

_PSI_SERIES = np.array([(-1) ** n * (1.0 / (2 * n + 1) + 1.0 / (2 * n + 3)) for n in range(14)])


def psi(x):
    """Psi(x) = 2 [x + (1 - x^2) arctan(1/x)], with Psi(0) = pi.

    For x > 10 the asymptotic series is used; the direct form loses
    precision there through cancellation.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(np.isnan(xa)):
        raise ValueError("psi is defined for x >= 0")
    out = np.empty_like(xa)
    small = xa <= 10.0
    xs = xa[small]
    with np.errstate(divide="ignore"):
        out[small] = 2.0 * (xs + (1.0 - xs * xs) * np.arctan2(1.0, xs))
    xl = xa[~small]
    inv2 = 1.0 / (xl * xl)
    acc = np.zeros_like(xl)
    for coef in _PSI_SERIES[::-1]:
        acc = acc * inv2 + coef
    out[~small] = 2.0 * acc / xl
    return float(out) if np.ndim(x) == 0 else out


def _kinematics(xi, k, graphene):
    k = np.asarray(k, dtype=float)
    bk = graphene.vf_ratio * k
    qt = np.hypot(bk, xi / C)
    e_q = HBAR * C * qt / E_CHARGE
    gamma = (xi / C) / qt
    g2c = (bk / qt) ** 2
    D = graphene.delta / e_q
    return qt, e_q, gamma, g2c, D


def _undoped(k, qt, D):
    k = np.asarray(k, dtype=float)
    p = psi(D)
    return ALPHA * HBAR * k * k * p / qt, ALPHA * HBAR * k * k * qt * p


# --------------------------------------------------------------------------
# The u-integral
# --------------------------------------------------------------------------

@functools.lru_cache(maxsize=8)
def _gauss01(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _side_rule(length, h_min, w_max, order):
    """Offsets (>= 0) from the anchor and weights covering [0, length]."""
    x01, w01 = _gauss01(order)
    h0 = min(length, max(h_min, length * _GRADING ** -_MAX_GRADES))
    offs = [h0 * x01 * x01]
    wts = [2.0 * h0 * x01 * w01]
    if length > h0:
        n = math.ceil(math.log(length / h0) / math.log(_GRADING))
        edges = h0 * _GRADING ** np.arange(n + 1, dtype=float)
        edges[-1] = length
        edges = edges[np.concatenate(([True], np.diff(edges) > 0))]
        lo, hi = edges[:-1], edges[1:]
        width = hi - lo
        if math.isfinite(w_max):
            split = np.maximum(1, np.ceil(width / w_max)).astype(int)
            if split.max() > 1:
                idx = np.repeat(np.arange(split.size), split)
                j = np.arange(idx.size) - np.repeat(np.cumsum(split) - split, split)
                width = width[idx] / split[idx]
                lo = lo[idx] + width * j
        offs.append((lo[:, None] + width[:, None] * x01[None, :]).ravel())
        wts.append((width[:, None] * w01[None, :]).ravel())
    return np.concatenate(offs), np.concatenate(wts)


def _u_rule(lo, hi, u_b, gamma, w_max, order):
    """Nodes (as offsets from u_b, and as u) and weights on [lo, hi]."""
    anchor = min(max(u_b, lo), hi)
    h_min = 0.25 * gamma
    parts_o, parts_w = [], []
    left, right = anchor - lo, hi - anchor
    if left > 0:
        o, w = _side_rule(left, h_min, w_max, order)
        parts_o.append(-o)
        parts_w.append(w)
    if right > 0:
        o, w = _side_rule(right, h_min, w_max, order)
        parts_o.append(o)
        parts_w.append(w)
    off = np.concatenate(parts_o)
    shift = anchor - u_b
    return shift + off, anchor + off, np.concatenate(parts_w)


def _brackets(o_b, u, u_b, gamma, g2c, D):
    """The two square brackets of the correction integrands.

    Returns (b00, bte) with
      b00 = 1 - Re[(1 - u^2 + 2 i gamma u) / sqrt(R)]
      bte = gamma^2 - Re sqrt(R) + (1 - gamma^2) Re[1/sqrt(R)]
    where bte * (c qt)^2 equals xi^2 times the printed bracket of Pi^(1).
    """
    x = gamma * gamma - o_b * (2.0 * u_b + o_b)
    y = 2.0 * gamma * u
    mod = np.hypot(x, y)
    pos = x >= 0
    re_sqrt = np.empty_like(x)
    re_sqrt[pos] = np.sqrt(0.5 * (mod[pos] + x[pos]))
    neg = ~pos
    re_sqrt[neg] = y[neg] / np.sqrt(2.0 * (mod[neg] - x[neg]))
    re_inv = re_sqrt / mod
    b00 = 1.0 - re_sqrt + D * D * g2c * re_inv
    bte = gamma * gamma - re_sqrt + g2c * re_inv
    return b00, bte


def _u_integrals(gamma, g2c, D, e_q, mu, temperature, order):
    """(I00, Ite): u-integrals of the Fermi-weighted brackets at one point."""
    u_b = math.sqrt(g2c * (1.0 + D * D))
    lo = D
    if temperature > 0:
        kt = KB * temperature / E_CHARGE
        B = e_q / (2.0 * kt)
        m = mu / kt
        hi = (m + FERMI_CUTOFF) / B
        w_max = _FERMI_PANEL / B
    else:
        hi = 2.0 * mu / e_q
        w_max = math.inf
    if not hi > lo:
        return 0.0, 0.0
    o_b, u, w = _u_rule(lo, hi, u_b, gamma, w_max, order)
    b00, bte = _brackets(o_b, u, u_b, gamma, g2c, D)
    if temperature > 0:
        fermi = expit(-(B * u + m)) + expit(-(B * u - m))
        w = w * fermi
    i00 = float(np.dot(w, b00))
    ite = float(np.dot(w, bte))
    if not (math.isfinite(i00) and math.isfinite(ite)):
        raise QuadratureError(
            f"non-finite u-integral at gamma={gamma!r}, D={D!r}, e_q={e_q!r} eV, "
            f"mu={mu!r} eV, T={temperature!r} K")
    return i00, ite


def _correction(xi, k, qt, e_q, gamma, g2c, D, graphene, temperature, order):
    beta2 = graphene.vf_ratio ** 2
    k = np.atleast_1d(np.asarray(k, dtype=float))
    p00 = np.zeros(k.shape)
    p = np.zeros(k.shape)
    if graphene.mu == 0 and temperature == 0:
        return p00, p
    qt_a, eq_a, g_a, g2_a, D_a = (np.broadcast_to(v, k.shape) for v in (qt, e_q, gamma, g2c, D))
    for i in range(k.size):
        i00, ite = _u_integrals(float(g_a[i]), float(g2_a[i]), float(D_a[i]), float(eq_a[i]),
                                graphene.mu, temperature, order)
        q = float(qt_a[i])
        p00[i] = 4.0 * ALPHA * HBAR * q / beta2 * i00
        if xi > 0:
            p[i] = -4.0 * ALPHA * HBAR * q**3 / beta2 * ite
    return p00, p


def tensor_batch(xi: float, k, graphene: GrapheneParams, temperature: float,
                 part: str = "full", order: int = DEFAULT_U_ORDER):
    """Vectorised (Pi00, Pi) at one frequency and an array of k_perp.

    ``part`` is ``"full"``, ``"undoped"`` or ``"correction"``.  A temperature
    of exactly 0 selects the zero-temperature limit of the correction
    (Fermi factors replaced by step functions).
    """
    if xi < 0:
        raise ValueError("xi must be >= 0")
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    k = np.asarray(k, dtype=float)
    if np.any(k <= 0):
        raise ValueError("k_perp must be > 0")
    qt, e_q, gamma, g2c, D = _kinematics(xi, k, graphene)
    if part == "undoped":
        return _undoped(k, qt, D)
    c00, c = _correction(xi, k, qt, e_q, gamma, g2c, D, graphene, temperature, order)
    c00, c = c00.reshape(k.shape), c.reshape(k.shape)
    if part == "correction":
        return c00, c
    if part != "full":
        raise ValueError(f"unknown tensor part {part!r}")
    u00, u = _undoped(k, qt, D)
    return u00 + c00, u + c


def _single(point, graphene, temperature, part, order):
    p00, p = tensor_batch(point.xi, np.array([point.k_perp]), graphene, temperature, part, order)
    return PolarizationComponents(float(p00[0]), float(p[0]))


def pi_undoped_T0(point: SpectralPoint, graphene: GrapheneParams) -> PolarizationComponents:
    """Undoped tensor at T = 0 evaluated at imaginary frequency."""
    return _single(point, graphene, 0.0, "undoped", DEFAULT_U_ORDER)


def pi_thermal_correction(point: SpectralPoint, graphene: GrapheneParams, temperature: float,
                          order: int = DEFAULT_U_ORDER) -> PolarizationComponents:
    """Temperature and chemical-potential correction; Pi part is 0 at xi = 0."""
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    return _single(point, graphene, temperature, "correction", order)


def pi_full(point: SpectralPoint, graphene: GrapheneParams, temperature: float,
            order: int = DEFAULT_U_ORDER) -> PolarizationComponents:
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    return _single(point, graphene, temperature, "full", order)


def pi_full_T0(point: SpectralPoint, graphene: GrapheneParams,
               order: int = DEFAULT_U_ORDER) -> PolarizationComponents:
    """Zero-temperature tensor of doped graphene.

    The correction integral then runs over [D, 2 mu / (hbar c qt)] with unit
    weight and vanishes when 2 mu <= delta.
    """
    return _single(point, graphene, 0.0, "full", order)
